"""Self-supervised auxiliary objectives sharing the policy encoder.

* ``tr``  - reconstruct the stacked binary contacts from ``z_t``
* ``fr``  - ``tr`` plus an MSE reconstruction of the proprioceptive part
* ``fd``  - autoregressive latent forward dynamics against an EMA target encoder
* ``tfd`` - ``fd`` plus decoding each predicted latent into next-step contacts
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.special import xlogy

from .agent import AgentNets, encode
from .auxmem import SequenceBatch
from .exceptions import ConfigError, NoValidWindowError, NonFiniteError
from .numerics import AdamState, MlpSpec, ParamSet, adam_step, add_grads, copy_params, ema_update, mlp_backward, mlp_forward, sigmoid

OBJECTIVES = ("none", "tr", "fr", "fd", "tfd")
TABLE_HORIZONS = (1, 2, 3, 9)


@dataclass
class AuxConfig:
    objective: str = "none"
    lr_aux: float = 1e-4
    c_aux: float = 0.1
    horizon: int = 1
    pos_weight: float = 10.0
    tau: float = 0.01
    decoder_hidden: Sequence[int] = (512, 512)
    forward_hidden: Sequence[int] = (512, 256)
    projector_hidden: Sequence[int] = (256,)

    def __post_init__(self):
        self.objective = self.objective.lower()
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}")
        if self.objective in ("fd", "tfd") and self.horizon < 1:
            raise ConfigError("horizon must be >= 1 for dynamics objectives")
        if self.pos_weight <= 0:
            raise ConfigError("pos_weight must be positive")
        if not 0 < self.tau <= 1:
            raise ConfigError("tau must lie in (0, 1]")
        if self.lr_aux < 0 or self.c_aux < 0:
            raise ConfigError("lr_aux and c_aux must be >= 0")

    @property
    def enabled(self) -> bool:
        return self.objective != "none"

    @property
    def uses_dynamics(self) -> bool:
        return self.objective in ("fd", "tfd")

    @property
    def uses_decoder(self) -> bool:
        return self.objective in ("tr", "fr", "tfd")

    @property
    def window(self) -> int:
        return self.horizon + 1 if self.uses_dynamics else 1


# -- elementwise losses -------------------------------------------------------

def weighted_bce(probs, targets, pos_weight: float = 10.0) -> float:
    """Mean of ``-(w*y*log p + (1-y)*log(1-p))`` over all elements."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    return float(np.mean(-(pos_weight * xlogy(y, p) + xlogy(1.0 - y, 1.0 - p))))


def _softplus(x):
    return np.logaddexp(0.0, x)


def weighted_bce_logits(logits, targets, pos_weight: float = 10.0):
    """Same loss evaluated from logits; returns ``(loss, dloss/dlogits)``."""
    x = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    per = pos_weight * y * _softplus(-x) + (1.0 - y) * _softplus(x)
    s = sigmoid(x)
    grad = (pos_weight * y * (s - 1.0) + (1.0 - y) * s) / x.size
    return float(per.mean()), grad


def mse(pred, target):
    d = np.asarray(pred, dtype=np.float64) - target
    return float(np.mean(d * d)), 2.0 * d / d.size


# -- networks -----------------------------------------------------------------

@dataclass
class AuxNets:
    specs: Dict[str, MlpSpec] = field(default_factory=dict)
    params: Dict[str, ParamSet] = field(default_factory=dict)
    target: Optional[ParamSet] = None

    @classmethod
    def build(cls, cfg: AuxConfig, nets: AgentNets, prop_index: np.ndarray, tact_index: np.ndarray,
              rng: np.random.Generator) -> "AuxNets":
        z, a = nets.latent_dim, nets.action_dim
        specs: Dict[str, MlpSpec] = {}
        if cfg.uses_decoder:
            if len(tact_index) == 0:
                raise ConfigError(f"objective {cfg.objective!r} needs tactile observations")
            specs["decoder"] = MlpSpec((z, *cfg.decoder_hidden, len(tact_index)), "elu", "identity")
        if cfg.objective == "fr":
            specs["prop_decoder"] = MlpSpec((z, *cfg.decoder_hidden, len(prop_index)), "elu", "identity")
        if cfg.uses_dynamics:
            specs["forward"] = MlpSpec((z + a, *cfg.forward_hidden, z), "elu", "identity")
            specs["projector"] = MlpSpec((z, *cfg.projector_hidden, z), "elu", "identity")
        params = {k: s.init_params(rng) for k, s in specs.items()}
        target = copy_params(nets.encoder) if cfg.uses_dynamics else None
        return cls(specs, params, target)

    def predict_contacts(self, z: np.ndarray) -> np.ndarray:
        """Sigmoid contact probabilities decoded from latents."""
        return sigmoid(mlp_forward(self.specs["decoder"], self.params["decoder"], z))

    def predict_next(self, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        return mlp_forward(self.specs["forward"], self.params["forward"], np.concatenate([z, a], axis=1))


# -- objectives ----------------------------------------------------------------

def _aux_loss(nets: AgentNets, aux: AuxNets, cfg: AuxConfig, batch: SequenceBatch,
              prop_index, tact_index, with_grads=True):
    """Objective value, per-term parts and gradients (encoder + aux nets)."""
    obj = cfg.objective
    o0 = batch.obs[:, 0]
    z, enc_tape = encode(nets, o0, record=True)
    parts: Dict[str, float] = {}
    grads: Dict[str, ParamSet] = {}
    dz = np.zeros_like(z)

    if obj in ("tr", "fr"):
        logits, tape = mlp_forward(aux.specs["decoder"], aux.params["decoder"], z, record=True)
        l, g = weighted_bce_logits(logits, o0[:, tact_index], cfg.pos_weight)
        parts["tr"] = l
        if with_grads:
            grads["decoder"], dzi = mlp_backward(aux.params["decoder"], tape, g)
            dz += dzi
        if obj == "fr":
            pred, tape = mlp_forward(aux.specs["prop_decoder"], aux.params["prop_decoder"], z, record=True)
            l, g = mse(pred, o0[:, prop_index])
            parts["prop_mse"] = l
            if with_grads:
                grads["prop_decoder"], dzi = mlp_backward(aux.params["prop_decoder"], tape, g)
                dz += dzi
    elif obj in ("fd", "tfd"):
        if batch.length != cfg.horizon + 1:
            raise ValueError(f"need windows of length {cfg.horizon + 1}, got {batch.length}")
        if batch.interior_done().any():
            raise NoValidWindowError("window mask violation: episode end inside a sequence")
        H = cfg.horizon
        zdim = z.shape[1]
        f_tapes, p_tapes, d_tapes = [], [], []
        d_proj, d_logit = [], []
        zhat = z
        parts["fd"] = 0.0
        if obj == "tfd":
            parts["tactile_pred"] = 0.0
        for i in range(1, H + 1):
            inp = np.concatenate([zhat, batch.actions[:, i - 1]], axis=1)
            zhat, ft = mlp_forward(aux.specs["forward"], aux.params["forward"], inp, record=True)
            proj, pt = mlp_forward(aux.specs["projector"], aux.params["projector"], zhat, record=True)
            target = mlp_forward(nets.encoder_spec, aux.target, batch.obs[:, i])
            l, g = mse(proj, target)
            parts["fd"] += l
            f_tapes.append(ft)
            p_tapes.append(pt)
            d_proj.append(g)
            if obj == "tfd":
                logits, dt = mlp_forward(aux.specs["decoder"], aux.params["decoder"], zhat, record=True)
                l, g = weighted_bce_logits(logits, batch.obs[:, i][:, tact_index], cfg.pos_weight)
                parts["tactile_pred"] += l
                d_tapes.append(dt)
                d_logit.append(g)
        if with_grads:
            carry = np.zeros_like(z)
            for i in reversed(range(H)):
                gp, dzh = mlp_backward(aux.params["projector"], p_tapes[i], d_proj[i])
                grads["projector"] = add_grads(grads.get("projector"), gp)
                dzh = dzh + carry
                if obj == "tfd":
                    gd, dzd = mlp_backward(aux.params["decoder"], d_tapes[i], d_logit[i])
                    grads["decoder"] = add_grads(grads.get("decoder"), gd)
                    dzh = dzh + dzd
                gf, dinp = mlp_backward(aux.params["forward"], f_tapes[i], dzh)
                grads["forward"] = add_grads(grads.get("forward"), gf)
                carry = dinp[:, :zdim]
            dz += carry
    else:
        raise ConfigError("auxiliary objective is 'none'")

    loss = float(sum(parts.values()))
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite auxiliary loss", parts)
    if with_grads:
        grads["encoder"], _ = mlp_backward(nets.encoder, enc_tape, dz, need_input_grad=False)
    return loss, parts, grads


def loss_tr(nets, aux, obs, tact_index, pos_weight=10.0):
    cfg = AuxConfig("tr", pos_weight=pos_weight)
    return _aux_loss(nets, aux, cfg, _single(obs), None, tact_index, with_grads=False)[0]


def loss_fr(nets, aux, obs, prop_index, tact_index, pos_weight=10.0):
    cfg = AuxConfig("fr", pos_weight=pos_weight)
    return _aux_loss(nets, aux, cfg, _single(obs), prop_index, tact_index, with_grads=False)[0]


def loss_fd(nets, aux, seq: SequenceBatch, horizon: int):
    cfg = AuxConfig("fd", horizon=horizon)
    return _aux_loss(nets, aux, cfg, seq, None, None, with_grads=False)[0]


def loss_tfd(nets, aux, seq: SequenceBatch, tact_index, horizon: int, pos_weight=10.0):
    cfg = AuxConfig("tfd", horizon=horizon, pos_weight=pos_weight)
    return _aux_loss(nets, aux, cfg, seq, None, tact_index, with_grads=False)[0]


def aux_loss_and_grads(nets, aux, cfg, batch, prop_index, tact_index):
    return _aux_loss(nets, aux, cfg, batch, prop_index, tact_index, with_grads=True)


def _single(obs) -> SequenceBatch:
    obs = np.asarray(obs, dtype=np.float64)
    n = len(obs)
    return SequenceBatch(obs[:, None], np.zeros((n, 0, 0)), np.zeros((n, 1), bool), np.zeros(n, int), np.zeros(n, int))


def as_windows(obs, actions=None) -> SequenceBatch:
    """Wrap ``[N, L, D]`` observations (and ``[N, L-1, A]`` actions) as a batch."""
    obs = np.asarray(obs, dtype=np.float64)
    n, L = obs.shape[:2]
    if actions is None:
        actions = np.zeros((n, L - 1, 0))
    return SequenceBatch(obs, np.asarray(actions, dtype=np.float64), np.zeros((n, L), bool),
                         np.zeros(n, int), np.zeros(n, int))


class AuxLearner:
    """Separate optimiser over encoder + auxiliary nets; no gradient clipping."""

    def __init__(self, nets: AgentNets, cfg: AuxConfig, prop_index, tact_index, seed: int = 0):
        if not cfg.enabled:
            raise ConfigError("AuxLearner needs an enabled objective")
        self.cfg = cfg
        self.nets = nets
        self.prop_index = np.asarray(prop_index)
        self.tact_index = np.asarray(tact_index)
        self.rng = np.random.default_rng(seed)
        self.aux = AuxNets.build(cfg, nets, self.prop_index, self.tact_index, self.rng)
        self.opt = {"encoder": AdamState.for_params(nets.encoder)}
        for k, p in self.aux.params.items():
            self.opt[k] = AdamState.for_params(p)
        self.updates = 0

    def update(self, batch: SequenceBatch) -> Dict[str, float]:
        """One optimisation step on ``c_aux * L_aux``, then the EMA target step."""
        loss, parts, grads = _aux_loss(self.nets, self.aux, self.cfg, batch, self.prop_index, self.tact_index)
        c, lr = self.cfg.c_aux, self.cfg.lr_aux
        scaled = {g: {k: c * v for k, v in gr.items()} for g, gr in grads.items()}
        if c > 0:
            self.nets.encoder = adam_step(self.nets.encoder, scaled["encoder"], self.opt["encoder"], lr)
            for name in self.aux.params:
                if name in scaled:
                    self.aux.params[name] = adam_step(self.aux.params[name], scaled[name], self.opt[name], lr)
        if self.aux.target is not None:
            ema_update(self.aux.target, self.nets.encoder, self.cfg.tau)
        self.updates += 1
        return {"aux_loss": loss, **{f"aux_{k}": v for k, v in parts.items()}}

    def loss(self, batch: SequenceBatch) -> float:
        return _aux_loss(self.nets, self.aux, self.cfg, batch, self.prop_index, self.tact_index, with_grads=False)[0]

    def contact_predictions(self, batch: SequenceBatch):
        """Next-step contact probabilities and labels per horizon step (tfd) or
        current-step reconstructions (tr/fr). Returns list of ``(probs, labels)``."""
        z = encode(self.nets, batch.obs[:, 0])
        ti = self.tact_index
        if self.cfg.objective in ("tr", "fr"):
            return [(self.aux.predict_contacts(z), batch.obs[:, 0][:, ti])]
        if self.cfg.objective != "tfd":
            return []
        out = []
        zhat = z
        for i in range(1, batch.length):
            zhat = self.aux.predict_next(zhat, batch.actions[:, i - 1])
            out.append((self.aux.predict_contacts(zhat), batch.obs[:, i][:, ti]))
        return out
