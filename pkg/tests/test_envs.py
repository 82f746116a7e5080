import math

import numpy as np
import pytest
from scipy import stats

from roto.envs import EnvConfig, make_env, physics
from roto.envs.base import count_bounces, r_dist, rotation_count
from roto.envs.bounce2d import BALL_RADIUS, PADDLE_LENGTH, Bounce2D
from roto.envs.find2d import DISC_RADIUS as FIND_DISC, LINK_RADIUS, PLATE_CENTER, arm_points
from roto.envs.orbit2d import DISC_RADIUS as ORBIT_DISC, PEG_RADIUS, TARGETS, Orbit2D
from roto.exceptions import ConfigError


def env(env_id, **kw):
    return make_env(EnvConfig(env_id=env_id, **kw))


def rollout(e, actions):
    return [e.step(a) for a in actions]


# -- reset ------------------------------------------------------------------

@pytest.mark.parametrize("env_id", ["find2d", "bounce2d", "orbit2d"])
def test_same_seed_bit_identical_reset(env_id):
    a = env(env_id, num_envs=5, seed=11).reset()
    b = env(env_id, num_envs=5, seed=11).reset()
    assert np.array_equal(a.obs, b.obs) and np.array_equal(a.ground_truth, b.ground_truth)
    c = env(env_id, num_envs=5, seed=12).reset()
    assert not np.array_equal(a.ground_truth, c.ground_truth)


def test_find_disc_uniform_over_plate():
    e = env("find2d", num_envs=10_000, seed=3)
    rel = (e.disc - PLATE_CENTER) / 0.2 + 0.5  # unit square
    assert rel.min() >= 0 and rel.max() <= 1
    cells = np.minimum((rel * 4).astype(int), 3)
    counts = np.bincount(cells[:, 0] * 4 + cells[:, 1], minlength=16)
    assert stats.chisquare(counts).pvalue > 0.01


def test_find_no_contact_at_reset():
    e = env("find2d", num_envs=500, seed=5)
    r = e.reset()
    assert not r.tact.any()
    # spawn clearance checked independently: disc vs whole arm capsule
    base, elbow, tip = arm_points(e.theta)
    for i in range(e.B):
        d = min(_seg_dist(e.disc[i], base[i], elbow[i]), _seg_dist(e.disc[i], elbow[i], tip[i]))
        assert d > FIND_DISC + LINK_RADIUS


def test_reset_randomisation_magnitudes():
    f = env("find2d", num_envs=400, seed=1)
    assert np.all(np.abs(f.theta - f.home) <= np.deg2rad(7) + 1e-12)
    b = env("bounce2d", num_envs=400, seed=1)
    span = b.joint_high - b.joint_low
    assert np.all(np.abs(b.theta - b.home) <= 0.2 * span + 1e-12)
    off = b.ball - b.theta[:, :2] - np.array([0.0, 0.12])
    assert np.all(np.abs(off) <= 0.01 + 1e-12)
    o = env("orbit2d", num_envs=400, seed=1)
    start = np.array([[0.0, 0.045], [0.0, -0.045]])
    assert np.all(np.abs(o.discs - start) <= 0.005 + 1e-12)


def test_reset_floods_stack_and_zeroes_counters():
    e = env("bounce2d", num_envs=3, seed=0)
    rng = np.random.default_rng(0)
    for _ in range(7):
        e.step(rng.uniform(-1, 1, (3, 3)))
    r = e.reset([1])
    frames = r.obs[1].reshape(e.k, e.frame_len)
    assert np.all(frames == frames[0])
    assert e.t[1] == 0 and e.since_contact[1] == 0 and r.ground_truth[1, 4] == 0
    assert e.t[0] == 7


def test_reset_index_and_seed_validation():
    e = env("orbit2d", num_envs=2)
    with pytest.raises(IndexError):
        e.reset([2])
    with pytest.raises(ValueError):
        e.reset([0, 1], seeds=[1])
    a = e.reset([0], seeds=[99]).ground_truth[0]
    b = e.reset([0], seeds=[99]).ground_truth[0]
    assert np.array_equal(a, b)


def test_config_validation():
    with pytest.raises(ConfigError):
        EnvConfig(env_id="pong")
    with pytest.raises(ConfigError):
        EnvConfig(num_envs=0)
    with pytest.raises(ConfigError):
        make_env(EnvConfig(env_id="find2d", reward_scales={"bounce": 1.0}))
    assert env("find2d").T == 300 and env("bounce2d").T == 600 and env("orbit2d").T == 600


# -- stepping -----------------------------------------------------------------

def _servo_oracle(theta0, target, low, high, n_steps, dt=1 / 120, substeps=2, kp=20.0, vmax=2.0):
    th = np.array(theta0, float)
    out = []
    for _ in range(n_steps):
        for _ in range(substeps):
            v = np.clip(kp * (target - th), -vmax, vmax)
            th = np.clip(th + v * dt, low, high)
        out.append(th.copy())
    return np.array(out)


@pytest.mark.parametrize("env_id", ["find2d", "bounce2d", "orbit2d"])
def test_zero_action_servo_converges_to_mid_range(env_id):
    e = env(env_id, num_envs=4, seed=2, spawn_objects=False, episode_length=1000)
    mid = 0.5 * (e.joint_low + e.joint_high)
    theta0 = e.theta.copy()
    traj = []
    for _ in range(200):
        e.step(np.zeros((4, e.A)))
        traj.append(e.theta.copy())
    traj = np.array(traj)
    for i in range(4):
        expect = _servo_oracle(theta0[i], e.joint_low + 0.5 * (e.joint_high - e.joint_low), e.joint_low, e.joint_high, 200)
        assert np.array_equal(traj[:, i], expect)
        gap = np.abs(traj[:, i] - mid)
        assert np.all(np.diff(gap, axis=0) <= 1e-12)
    assert np.allclose(traj[-1], mid, atol=1e-9)


def test_bounce_free_flight_gravity():
    e = Bounce2D(EnvConfig(num_envs=2, seed=0))
    e.ball[:] = [[0.0, 2.0], [0.1, 3.0]]
    e.ball_vel[:] = [[0.3, 1.0], [-0.2, -0.5]]
    hold = (e.theta - e.joint_low) / (e.joint_high - e.joint_low) * 2 - 1
    dt = 1 / 60
    for _ in range(5):
        vz = e.ball_vel[:, 1].copy()
        r = e.step(hold)
        assert np.allclose(e.ball_vel[:, 1], vz - 9.81 * dt, atol=1e-12)
        assert not r.tact.any()


def test_orbit_damping_matches_ode():
    e = Orbit2D(EnvConfig(env_id="orbit2d", num_envs=1, seed=0, randomization={"joint_frac": 0.0}))
    x0 = np.array([[0.0, 0.045], [0.0, -0.045]])
    v0 = np.array([[0.05, 0.0], [-0.05, 0.0]])
    e.discs[0], e.disc_vel[0] = x0, v0
    hold = np.zeros((1, 8))  # home is mid-range
    c = 2.0
    for n in range(1, 31):
        e.step(hold)
        t = n / 60
        assert np.allclose(e.disc_vel[0], v0 * np.exp(-c * t), atol=1e-12)
        assert np.allclose(e.discs[0], x0 + v0 / c * (1 - np.exp(-c * t)), atol=1e-12)
    # rest position: x0 + v0/c
    for _ in range(600):
        e.step(hold, auto_reset=False)
    assert np.allclose(e.discs[0], x0 + v0 / c, atol=1e-6)


def test_non_finite_and_bad_shape_actions_rejected():
    e = env("find2d", num_envs=2)
    with pytest.raises(ValueError):
        e.step(np.array([[np.nan, 0.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        e.step(np.zeros((2, 3)))


def test_actions_are_clamped():
    a = env("bounce2d", num_envs=1, seed=4)
    b = env("bounce2d", num_envs=1, seed=4)
    ra = a.step(np.full((1, 3), 5.0))
    rb = b.step(np.ones((1, 3)))
    assert np.array_equal(ra.obs, rb.obs)


@pytest.mark.parametrize("env_id", ["find2d", "bounce2d", "orbit2d"])
def test_determinism_and_joint_limits(env_id):
    acts = np.random.default_rng(9).uniform(-1.3, 1.3, (80, 6, 8))
    runs = []
    for _ in range(2):
        e = env(env_id, num_envs=6, seed=21)
        rs = rollout(e, acts[:, :, : e.A])
        assert np.all(e.theta >= e.joint_low) and np.all(e.theta <= e.joint_high)
        runs.append(rs)
    for x, y in zip(*runs):
        assert np.array_equal(x.obs, y.obs) and np.array_equal(x.reward, y.reward)
        assert np.array_equal(x.ground_truth, y.ground_truth)


# -- contacts -------------------------------------------------------------------

def _seg_dist(p, a, b):
    ab = (b[0] - a[0], b[1] - a[1])
    L2 = ab[0] ** 2 + ab[1] ** 2
    s = 0.0 if L2 == 0 else max(0.0, min(1.0, ((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / L2))
    return math.hypot(p[0] - a[0] - s * ab[0], p[1] - a[1] - s * ab[1])


def _brute_find(snap, i):
    t1, t2 = snap["theta"][i]
    elbow = (0.30 * math.cos(t1), 0.30 * math.sin(t1))
    tip = (elbow[0] + 0.25 * math.cos(t1 + t2), elbow[1] + 0.25 * math.sin(t1 + t2))
    mid = ((elbow[0] + tip[0]) / 2, (elbow[1] + tip[1]) / 2)
    p = snap["disc"][i]
    reach = FIND_DISC + LINK_RADIUS
    return [_seg_dist(p, elbow, mid) < reach, _seg_dist(p, mid, tip) < reach]


def _brute_bounce(snap, i):
    x, z, tilt = snap["theta"][i]
    h = PADDLE_LENGTH / 2
    a = (x - h * math.cos(tilt), z - h * math.sin(tilt))
    b = (x + h * math.cos(tilt), z + h * math.sin(tilt))
    out = []
    for k in range(5):
        pa = (a[0] + k / 5 * (b[0] - a[0]), a[1] + k / 5 * (b[1] - a[1]))
        pb = (a[0] + (k + 1) / 5 * (b[0] - a[0]), a[1] + (k + 1) / 5 * (b[1] - a[1]))
        out.append(_seg_dist(snap["ball"][i], pa, pb) < BALL_RADIUS)
    return out


def _brute_orbit(snap, i):
    pegs = snap["theta"][i].reshape(4, 2)
    d1, d2 = snap["discs"][i]
    out = [math.dist(p, d1) < ORBIT_DISC + PEG_RADIUS or math.dist(p, d2) < ORBIT_DISC + PEG_RADIUS for p in pegs]
    out.append(math.dist(d1, d2) <= 2 * ORBIT_DISC)
    lim = 0.12 - ORBIT_DISC
    out.append(math.hypot(*d1) > lim or math.hypot(*d2) > lim)
    return out


BRUTE = {"find2d": _brute_find, "bounce2d": _brute_bounce, "orbit2d": _brute_orbit}


@pytest.mark.parametrize("env_id", ["find2d", "bounce2d", "orbit2d"])
def test_sensors_match_brute_force_overlap(env_id):
    e = env(env_id, num_envs=8, seed=13)
    rng = np.random.default_rng(13)
    fired = 0
    for t in range(120):
        if t % 15 == 0:  # held targets sweep the workspace further than white noise
            a = rng.uniform(-1, 1, (8, e.A))
        e.trace = []
        r = e.step(a, auto_reset=False)
        for i in range(8):
            expect = np.zeros(e.n_sensors, bool)
            for snap in e.trace:
                if snap["active"][i]:
                    expect |= BRUTE[env_id](snap, i)
            assert np.array_equal(r.contacts[i], expect)
            assert np.array_equal(r.tact[i], expect.astype(float))
        fired += r.contacts.sum()
        if r.done.any():
            e.reset(np.flatnonzero(r.done))
    assert fired > 0


def test_bounce_segment_three_sensor():
    e = Bounce2D(EnvConfig(num_envs=1, seed=0, randomization={"joint_frac": 0.0}), gravity=0.0)
    e.ball[0] = (0.0, e.theta[0, 1] + BALL_RADIUS - 0.005)
    e.ball_vel[0] = (0.0, -0.5)
    r = e.step(np.zeros((1, 3)))
    assert r.tact[0].tolist() == [0, 0, 1, 0, 0]
    nothing = Bounce2D(EnvConfig(num_envs=1, seed=0), gravity=0.0)
    nothing.ball[0] = (0.0, 1.0)
    assert not nothing.step(np.zeros((1, 3))).tact.any()


def test_orbit_touching_discs_fire_pair_sensor():
    e = Orbit2D(EnvConfig(env_id="orbit2d", num_envs=1, randomization={"joint_frac": 0.0}))
    e.discs[0] = [[0.0, ORBIT_DISC - 1e-4], [0.0, -ORBIT_DISC + 1e-4]]
    r = e.step(np.zeros((1, 8)))
    assert r.tact[0, 4] == 1 and r.tact[0, :4].sum() == 0


def test_restitution_on_impact():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = rng.normal(size=2)
        n /= np.linalg.norm(n)
        q = rng.normal(size=2)
        pos = q + n * (0.03 - 0.002)
        vel = -abs(rng.normal()) * n + rng.normal() * np.array([-n[1], n[0]])
        e = rng.uniform(0.1, 0.95)
        _, v2, hit = physics.resolve_against_kinematic(pos, vel, 0.03, q, np.zeros(2), e)
        assert hit
        assert abs(v2 @ n) == pytest.approx(e * abs(vel @ n), abs=1e-9)
        t = np.array([-n[1], n[0]])
        assert v2 @ t == pytest.approx(vel @ t, abs=1e-12)


def test_bounce_env_impact_restitution():
    e = Bounce2D(EnvConfig(num_envs=1, randomization={"joint_frac": 0.0}), gravity=0.0)
    e.ball[0] = (0.0, e.theta[0, 1] + BALL_RADIUS + 0.004)
    e.ball_vel[0] = (0.0, -1.0)
    e.step(np.zeros((1, 3)))
    assert e.ball_vel[0, 1] == pytest.approx(0.8, abs=1e-9)
    assert e.ball_vel[0, 0] == 0.0


def test_pair_collision_conserves_momentum():
    p1, v1 = np.array([0.0, 0.0]), np.array([1.0, 0.2])
    p2, v2 = np.array([0.05, 0.0]), np.array([-0.5, 0.0])
    _, w1, _, w2, hit = physics.resolve_pair(p1, v1, p2, v2, 0.027, 0.5)
    assert hit
    assert np.allclose(w1 + w2, v1 + v2, atol=1e-15)
    assert (w1 - w2)[0] == pytest.approx(-0.5 * (v1 - v2)[0])


# -- rewards ----------------------------------------------------------------------

def test_r_dist_examples():
    assert r_dist(0.0) == 1.0
    assert abs(r_dist(0.1) - (1 - math.tanh(1.0))) < 1e-12
    assert r_dist(0.1) == pytest.approx(0.2384, abs=1e-4)


def test_bounce_gap_rule():
    assert count_bounces([True], initial_gap=4) == 0
    assert count_bounces([True], initial_gap=5) == 1
    seq = [True] + [False] * 4 + [True] + [False] * 5 + [True, True]
    assert count_bounces(seq, initial_gap=5) == 2


@pytest.mark.parametrize("gap,bonus", [(4, 0.0), (5, 1.0)])
def test_bounce_env_bonus_after_gap(gap, bonus):
    e = Bounce2D(EnvConfig(num_envs=1, randomization={"joint_frac": 0.0}), gravity=0.0)
    e.since_contact[0] = gap
    e.ball[0] = (0.0, e.theta[0, 1] + BALL_RADIUS - 0.002)
    e.ball_vel[0] = (0.0, -0.3)
    r = e.step(np.zeros((1, 3)))
    assert r.terms["bounce"][0] == bonus and r.terms["air"][0] == 0.0
    assert e.since_contact[0] == 0


def test_bounce_fall_terminates():
    e = Bounce2D(EnvConfig(num_envs=2))
    e.ball[0] = (0.3, 1.0)
    r = e.step(np.zeros((2, 3)))
    assert r.terminated.tolist() == [True, False]
    assert r.terms["fall"][0] == -1.0 and r.episode["length"][0] == 1


def test_orbit_rotation_counts_double_swap():
    e = Orbit2D(EnvConfig(env_id="orbit2d", num_envs=1, randomization={"joint_frac": 0.0}))
    hold = np.zeros((1, 8))
    e.discs[0] = TARGETS
    r = e.step(hold)
    assert r.terms["rotation"][0] == 1.0 and e.swaps[0] == 1 and rotation_count(int(e.swaps[0])) == 0
    r = e.step(hold)  # still on the old targets: no swap
    assert r.terms["rotation"][0] == 0.0
    e.discs[0] = TARGETS[::-1]
    e.disc_vel[0] = 0
    e.step(hold)
    assert e.swaps[0] == 2 and rotation_count(2) == 1
    assert e._episode_metrics(np.array([0]))["rotations"][0] == 1.0


@pytest.mark.parametrize("env_id", ["find2d", "bounce2d", "orbit2d"])
def test_reward_is_scaled_sum_of_terms(env_id):
    e = env(env_id, num_envs=16, seed=3)
    rng = np.random.default_rng(3)
    for _ in range(50):
        r = e.step(rng.uniform(-1, 1, (16, e.A)))
        total = np.zeros(16)
        for name, val in r.terms.items():
            total = total + e.scales[name] * val
        assert np.array_equal(r.reward, total)


def test_find_metrics_record_first_hit():
    e = env("find2d", num_envs=1, episode_length=3)
    # two-link inverse kinematics for a fingertip at (0.4, 0)
    t2 = math.acos((0.4 ** 2 - 0.30 ** 2 - 0.25 ** 2) / (2 * 0.30 * 0.25))
    t1 = -math.atan2(0.25 * math.sin(t2), 0.30 + 0.25 * math.cos(t2))
    e.theta[0] = (t1, t2)
    hold = 2 * (e.theta - e.joint_low) / (e.joint_high - e.joint_low) - 1
    _, elbow, tip = arm_points(e.theta)
    u = (tip[0] - elbow[0]) / 0.25
    e.disc[0] = tip[0] + (FIND_DISC + LINK_RADIUS + 0.02) * u
    out = [e.step(hold) for _ in range(3)][-1]
    assert out.truncated[0] and not out.terminated[0]
    assert out.episode["time_to_3cm"][0] == pytest.approx(1 / 60)
    assert np.isnan(out.episode["time_to_1cm"][0])


# -- observation --------------------------------------------------------------------

def test_normalised_joint_endpoints():
    e = env("bounce2d", num_envs=1)
    assert np.array_equal(e.normalized_theta(e.joint_low[None]), -np.ones((1, 3)))
    assert np.array_equal(e.normalized_theta(e.joint_high[None]), np.ones((1, 3)))


def test_observation_ring_semantics():
    e = env("bounce2d", num_envs=2, history=4, seed=1)
    rng = np.random.default_rng(1)
    frames = []
    for _ in range(5):
        r = e.step(rng.uniform(-1, 1, (2, 3)), auto_reset=False)
        frames.append(np.concatenate([r.prop, r.tact], axis=1))
    assert np.array_equal(r.obs, np.concatenate(frames[1:], axis=1))


def test_frame_layout():
    e = env("find2d", num_envs=3, seed=2)
    assert e.obs_dim == 192 and e.frame_len == 12
    a = np.random.default_rng(0).uniform(-1, 1, (3, 2))
    r = e.step(a)
    _, _, tip = arm_points(e.theta)
    phi = e.theta.sum(axis=1)
    expect = np.column_stack([a, e.normalized_theta(), 0.33 * e.theta_dot, tip, np.cos(phi), np.sin(phi), r.contacts])
    assert np.array_equal(r.obs[:, -12:], expect)
    assert np.array_equal(np.sort(np.concatenate([e.prop_index, e.tact_index])), np.arange(192))
    assert len(e.tact_index) == 32
    assert env("bounce2d").obs_dim == 4 * 14 and env("orbit2d").obs_dim == 4 * 30


def test_without_tactile_drops_contacts():
    e = env("bounce2d", num_envs=1, use_tactile=False)
    assert e.frame_len == 9 and e.step(np.zeros((1, 3))).tact.shape == (1, 0)


def test_ground_truth_examples():
    assert env("bounce2d", num_envs=2).reset().ground_truth[:, 4].tolist() == [0.0, 0.0]
    o = Orbit2D(EnvConfig(env_id="orbit2d", num_envs=1))
    o.discs[0] = [[0.03, 0.0], [-0.03, 0.0]]
    assert o.ground_truth()[0, 8] == pytest.approx(0.06, abs=1e-15)


def test_ground_truth_not_in_observation():
    # same robot state, different ball state away from the paddle: identical observations
    a = Bounce2D(EnvConfig(num_envs=1, seed=0))
    b = Bounce2D(EnvConfig(num_envs=1, seed=0))
    a.ball[0], b.ball[0] = (0.0, 2.0), (0.1, 3.0)
    b.ball_vel[0] = (0.4, 2.0)
    ra, rb = a.step(np.zeros((1, 3))), b.step(np.zeros((1, 3)))
    assert ra.obs.tobytes() == rb.obs.tobytes()
    assert not np.array_equal(ra.ground_truth, rb.ground_truth)


# -- episodes and persistence ---------------------------------------------------------

def test_episode_accounting():
    e = env("bounce2d", num_envs=4, episode_length=7, seed=0)
    rng = np.random.default_rng(0)
    before = e.ground_truth().copy()
    for step in range(1, 15):
        r = e.step(rng.uniform(-1, 1, (4, 3)))
        both = r.terminated & r.truncated
        assert not np.any(both & (e.t != 0))  # only at the last step
        if r.done.any():
            assert np.all(np.isfinite(r.episode["return"][r.done]))
            assert np.all(np.isnan(r.episode["return"][~r.done]))
    assert not np.array_equal(before, e.ground_truth())


def test_state_round_trip_bisimulates():
    e = env("orbit2d", num_envs=3, seed=8)
    rng = np.random.default_rng(8)
    for _ in range(20):
        e.step(rng.uniform(-1, 1, (3, 8)))
    snap = e.get_state()
    acts = rng.uniform(-1, 1, (40, 3, 8))
    ref = [e.step(a) for a in acts]
    f = env("orbit2d", num_envs=3, seed=1)
    f.set_state(snap)
    for a, r in zip(acts, ref):
        s = f.step(a)
        assert np.array_equal(s.obs, r.obs) and np.array_equal(s.reward, r.reward)
