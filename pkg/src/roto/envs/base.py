"""Shared machinery for the batched 2D contact environments.

Every environment is a joint-position-controlled robot (servo law on joint
targets) plus free objects simulated with impulse contacts. The agent sees a
k-frame stack of ``[last action, normalised joint angles, scaled joint
velocities, extras, binary contacts]``; ground truth state is kept separate.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..exceptions import ConfigError

ENV_IDS = ("find2d", "bounce2d", "orbit2d")


@dataclass
class EnvConfig:
    env_id: str = "bounce2d"
    num_envs: int = 64
    history: Optional[int] = None
    episode_length: Optional[int] = None
    physics_dt: float = 1.0 / 120.0
    control_substeps: int = 2
    reward_scales: Optional[Dict[str, float]] = None
    randomization: Optional[Dict[str, float]] = None
    use_tactile: bool = True
    spawn_objects: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.env_id not in ENV_IDS:
            raise ConfigError(f"env_id must be one of {ENV_IDS}, got {self.env_id!r}")
        if self.num_envs < 1:
            raise ConfigError("num_envs must be >= 1")
        if self.history is not None and self.history < 1:
            raise ConfigError("history must be >= 1")
        if self.episode_length is not None and self.episode_length < 1:
            raise ConfigError("episode_length must be >= 1")
        if self.control_substeps < 1 or self.physics_dt <= 0:
            raise ConfigError("physics_dt and control_substeps must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **kw) -> "EnvConfig":
        return replace(self, **kw)


@dataclass
class StepResult:
    """Batched observation/reward record.

    ``obs`` is the flattened k-frame stack the agent consumes; ``prop`` and
    ``tact`` are the newest frame's parts. For environments that finished this
    step (``terminated | truncated``) and were auto-reset, ``obs``, ``prop``,
    ``tact`` and ``ground_truth`` already describe the fresh episode while
    ``reward``/``terms``/``contacts`` describe the finished transition.
    """

    obs: np.ndarray
    prop: np.ndarray
    tact: np.ndarray
    reward: np.ndarray
    terms: Dict[str, np.ndarray]
    terminated: np.ndarray
    truncated: np.ndarray
    ground_truth: np.ndarray
    contacts: np.ndarray
    episode: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def done(self) -> np.ndarray:
        return self.terminated | self.truncated


class ContactEnv:
    """Base class; subclasses define the robot, objects and reward rules."""

    env_id: str = ""
    joint_low: np.ndarray
    joint_high: np.ndarray
    home: np.ndarray
    vel_scale: float = 0.2
    n_sensors: int = 0
    default_history: int = 4
    default_length: int = 600
    default_scales: Dict[str, float] = {}
    default_randomization: Dict[str, float] = {}
    extra_dim: int = 0
    gt_names: Sequence[str] = ()
    metric_names: Sequence[str] = ()
    kp: float = 20.0
    v_max: float = 2.0
    min_radius: float = 0.01

    def __init__(self, cfg: EnvConfig):
        if cfg.env_id != self.env_id:
            raise ConfigError(f"config env_id {cfg.env_id!r} does not match {self.env_id!r}")
        self.cfg = cfg
        self.B = cfg.num_envs
        self.k = cfg.history or self.default_history
        self.T = cfg.episode_length or self.default_length
        self.dt = cfg.physics_dt
        self.substeps = cfg.control_substeps
        self.scales = dict(self.default_scales)
        self.scales.update(cfg.reward_scales or {})
        unknown = set(cfg.reward_scales or {}) - set(self.default_scales)
        if unknown:
            raise ConfigError(f"unknown reward terms for {self.env_id}: {sorted(unknown)}")
        self.rand = dict(self.default_randomization)
        self.rand.update(cfg.randomization or {})
        self.J = len(self.joint_low)
        self.A = self.J
        self.rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(self.B)]
        self.theta = np.tile(self.home, (self.B, 1)).astype(np.float64)
        self.theta_dot = np.zeros((self.B, self.J))
        self.last_action = np.zeros((self.B, self.A))
        self.t = np.zeros(self.B, dtype=np.int64)
        self.ep_return = np.zeros(self.B)
        self.stack = np.zeros((self.B, self.k, self.frame_len))
        self.trace: Optional[List[dict]] = None
        self._alloc_objects()
        self._reset_metrics_all()
        self.reset()

    # -- dimensions -------------------------------------------------------
    @property
    def prop_len(self) -> int:
        return 3 * self.J + self.extra_dim

    @property
    def tact_len(self) -> int:
        return self.n_sensors if self.cfg.use_tactile else 0

    @property
    def frame_len(self) -> int:
        return self.prop_len + self.tact_len

    @property
    def obs_dim(self) -> int:
        return self.k * self.frame_len

    @property
    def action_dim(self) -> int:
        return self.A

    @property
    def gt_dim(self) -> int:
        return len(self.gt_names)

    @property
    def prop_index(self) -> np.ndarray:
        """Positions of proprioceptive entries inside the flattened observation."""
        base = np.arange(self.prop_len)
        return np.concatenate([f * self.frame_len + base for f in range(self.k)])

    @property
    def tact_index(self) -> np.ndarray:
        base = np.arange(self.prop_len, self.frame_len)
        return np.concatenate([f * self.frame_len + base for f in range(self.k)])

    # -- subclass hooks ----------------------------------------------------
    def _alloc_objects(self):
        raise NotImplementedError

    def _reset_objects(self, i: int, rng: np.random.Generator):
        raise NotImplementedError

    def _max_relative_speed(self) -> np.ndarray:
        raise NotImplementedError

    def _micro_step(self, dt: np.ndarray, active: np.ndarray) -> np.ndarray:
        """Advance objects by per-env ``dt`` where ``active``; return sensor hits (B, S)."""
        raise NotImplementedError

    def _reward_terms(self, contacts: np.ndarray):
        """Return ``(terms, terminated)`` for this control step."""
        raise NotImplementedError

    def _extras(self) -> np.ndarray:
        return np.zeros((self.B, 0))

    def ground_truth(self) -> np.ndarray:
        raise NotImplementedError

    def _reset_metrics(self, idx: np.ndarray):
        pass

    def _episode_metrics(self, idx: np.ndarray) -> Dict[str, np.ndarray]:
        return {}

    def _reset_metrics_all(self):
        self._reset_metrics(np.arange(self.B))

    # -- observation -------------------------------------------------------
    def normalized_theta(self, theta: Optional[np.ndarray] = None) -> np.ndarray:
        theta = self.theta if theta is None else theta
        return 2.0 * (theta - self.joint_low) / (self.joint_high - self.joint_low) - 1.0

    def _frame(self, contacts: np.ndarray) -> np.ndarray:
        parts = [self.last_action, self.normalized_theta(), self.theta_dot * self.vel_scale, self._extras()]
        if self.cfg.use_tactile:
            parts.append(contacts.astype(np.float64))
        return np.concatenate(parts, axis=1)

    def _push_frame(self, frame: np.ndarray, flood: Optional[np.ndarray] = None):
        self.stack[:, :-1] = self.stack[:, 1:]
        self.stack[:, -1] = frame
        if flood is not None and flood.size:
            self.stack[flood] = frame[flood][:, None, :]

    def observation(self) -> np.ndarray:
        return self.stack.reshape(self.B, -1).copy()

    # -- API ---------------------------------------------------------------
    def reset(self, indices: Optional[Sequence[int]] = None, seeds: Optional[Sequence[int]] = None) -> StepResult:
        idx = np.arange(self.B) if indices is None else np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.B):
            raise IndexError("environment index out of range")
        if seeds is not None:
            if len(seeds) != len(idx):
                raise ValueError("need one seed per reset index")
            for i, s in zip(idx, seeds):
                self.rngs[i] = np.random.default_rng(int(s))
        self._reset_indices(idx)
        return self.current()

    def current(self) -> StepResult:
        """Observation of the present state with zero reward and no contacts."""
        zeros = np.zeros((self.B, self.n_sensors), dtype=bool)
        return self._result(zeros, {}, np.zeros(self.B), np.zeros(self.B, bool), np.zeros(self.B, bool), {})

    def _reset_indices(self, idx: np.ndarray):
        if idx.size == 0:
            return
        span = self.joint_high - self.joint_low
        for i in idx:
            rng = self.rngs[i]
            jit = self._joint_jitter(span)
            self.theta[i] = np.clip(self.home + rng.uniform(-1.0, 1.0, self.J) * jit, self.joint_low, self.joint_high)
            self._reset_objects(int(i), rng)
        self.theta_dot[idx] = 0.0
        self.last_action[idx] = 0.0
        self.t[idx] = 0
        self.ep_return[idx] = 0.0
        self._reset_metrics(idx)
        frame = self._frame(np.zeros((self.B, self.n_sensors), dtype=bool))
        self.stack[idx] = frame[idx][:, None, :]

    def _joint_jitter(self, span: np.ndarray) -> np.ndarray:
        return self.rand.get("joint_frac", 0.2) * span

    def action_to_target(self, actions: np.ndarray) -> np.ndarray:
        return self.joint_low + (actions + 1.0) * 0.5 * (self.joint_high - self.joint_low)

    def step(self, actions: np.ndarray, auto_reset: bool = True) -> StepResult:
        a = np.asarray(actions, dtype=np.float64)
        if a.shape != (self.B, self.A):
            raise ValueError(f"actions must have shape {(self.B, self.A)}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite action")
        a = np.clip(a, -1.0, 1.0)
        target = self.action_to_target(a)
        contacts = np.zeros((self.B, self.n_sensors), dtype=bool)
        for _ in range(self.substeps):
            self.theta_dot = np.clip(self.kp * (target - self.theta), -self.v_max, self.v_max)
            speed = self._max_relative_speed()
            n_micro = np.maximum(1, np.ceil(speed * self.dt / (0.5 * self.min_radius))).astype(np.int64)
            dt = self.dt / n_micro
            theta0 = self.theta
            for m in range(int(n_micro.max())):
                active = m < n_micro
                step_dt = np.where(active, dt, 0.0)
                # joint path measured from the substep start, so the endpoint does not
                # depend on how many micro-steps the objects needed
                frac = np.minimum((m + 1) / n_micro, 1.0)
                self.theta = np.clip(theta0 + self.theta_dot * (self.dt * frac)[:, None], self.joint_low, self.joint_high)
                contacts |= self._micro_step(step_dt, active)
        self.last_action = a
        terms, terminated = self._reward_terms(contacts)
        reward = np.zeros(self.B)
        for name, val in terms.items():
            reward = reward + self.scales[name] * val
        self.t += 1
        truncated = self.t >= self.T
        self.ep_return += reward
        frame = self._frame(contacts)
        self._push_frame(frame)
        done = terminated | truncated
        episode = {}
        if np.any(done):
            idx = np.flatnonzero(done)
            episode = {"return": np.full(self.B, np.nan), "length": np.full(self.B, np.nan)}
            episode["return"][idx] = self.ep_return[idx]
            episode["length"][idx] = self.t[idx]
            for name, vals in self._episode_metrics(idx).items():
                col = np.full(self.B, np.nan)
                col[idx] = vals
                episode[name] = col
            if auto_reset:
                self._reset_indices(idx)
        return self._result(contacts, terms, reward, terminated, truncated, episode)

    def _result(self, contacts, terms, reward, terminated, truncated, episode) -> StepResult:
        newest = self.stack[:, -1]
        return StepResult(
            obs=self.observation(),
            prop=newest[:, : self.prop_len].copy(),
            tact=newest[:, self.prop_len:].copy(),
            reward=reward,
            terms=terms,
            terminated=terminated,
            truncated=truncated,
            ground_truth=self.ground_truth(),
            contacts=contacts,
            episode=episode,
        )

    # -- persistence -------------------------------------------------------
    _state_fields = ("theta", "theta_dot", "last_action", "t", "ep_return", "stack")

    def _object_fields(self) -> Sequence[str]:
        return ()

    def get_state(self) -> dict:
        arrays = {f: getattr(self, f).copy() for f in (*self._state_fields, *self._object_fields())}
        rngs = [r.bit_generator.state for r in self.rngs]
        return {"arrays": arrays, "rngs": rngs}

    def set_state(self, state: dict):
        for f, v in state["arrays"].items():
            cur = getattr(self, f)
            setattr(self, f, np.asarray(v, dtype=cur.dtype).reshape(cur.shape).copy())
        for r, s in zip(self.rngs, state["rngs"]):
            r.bit_generator.state = s


def count_bounces(contact_sequence: Sequence[bool], min_gap: int = 5, initial_gap: int = 0) -> int:
    """Count contact events preceded by at least ``min_gap`` contact-free steps."""
    gap, n = initial_gap, 0
    for c in contact_sequence:
        if c:
            if gap >= min_gap:
                n += 1
            gap = 0
        else:
            gap += 1
    return n


def r_dist(d) -> np.ndarray:
    return 1.0 - np.tanh(np.asarray(d, dtype=np.float64) / 0.1)


def rotation_count(n_swaps: int) -> int:
    return n_swaps // 2
