import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roto.exceptions import NonFiniteError
from roto.numerics import (
    AdamState,
    MlpSpec,
    RunningStats,
    TapeError,
    activation,
    adam_step,
    backward,
    clip_global_norm,
    ema_update,
    global_norm,
    layer_norm,
    linear_forward,
    load_arrays,
    mlp_backward,
    mlp_forward,
    save_arrays,
)

from conftest import check_param_grads, rel_err


# -- forward primitives --------------------------------------------------------

def test_linear_forward_examples():
    assert np.array_equal(linear_forward({"0.weight": np.eye(2), "0.bias": np.zeros(2)}, [[3.0, 4.0]]), [[3, 4]])
    out = linear_forward({"0.weight": np.array([[1.0], [1.0]]), "0.bias": np.array([1.0])}, [[2.0, 3.0]])
    assert out.tolist() == [[6.0]]
    out = linear_forward({"0.weight": np.zeros((3, 1)), "0.bias": np.array([5.0])}, [[7.0, -1.0, 2.0]])
    assert out.tolist() == [[5.0]]
    with pytest.raises(ValueError):
        linear_forward({"0.weight": np.eye(2), "0.bias": np.zeros(2)}, [[1.0, 2.0, 3.0]])


def test_activation_examples():
    assert activation("elu", np.array([0.0]))[0] == 0.0
    assert activation("elu", np.array([-1.0]))[0] == pytest.approx(np.exp(-1) - 1, abs=1e-15)
    assert activation("elu", np.array([2.5]))[0] == 2.5
    assert activation("sigmoid", np.array([0.0]))[0] == 0.5
    with pytest.raises(ValueError):
        activation("relu", np.zeros(1))


def test_layer_norm_examples():
    g, o = np.ones(3), np.zeros(3)
    assert np.allclose(layer_norm(np.ones((1, 3)), g, o), 0.0)
    y = layer_norm(np.array([[1.0, -1.0]]), np.ones(2), np.zeros(2))
    assert np.allclose(y, np.array([[1.0, -1.0]]) / np.sqrt(1.0 + 1e-5), atol=1e-15)
    x = np.random.default_rng(0).normal(size=(4, 3))
    shifted = layer_norm(x, g, np.full(3, 2.5))
    assert np.allclose(shifted - layer_norm(x, g, o), 2.5)


# -- reverse pass -------------------------------------------------------------

def test_backward_linear_identity_gives_ones():
    spec = MlpSpec((2, 2), output_activation="identity")
    params = {"0.weight": np.eye(2), "0.bias": np.zeros(2)}
    _, tape = mlp_forward(spec, params, np.array([[0.3, -0.7]]), record=True)
    _, dx = backward(params, tape)
    assert np.array_equal(dx, np.ones((1, 2)))


def test_tape_consumed_twice_raises():
    spec = MlpSpec((2, 3, 1))
    params = spec.init_params(np.random.default_rng(0))
    _, tape = mlp_forward(spec, params, np.ones((1, 2)), record=True)
    backward(params, tape)
    with pytest.raises(TapeError):
        backward(params, tape)


def test_symmetric_bce_minimum_gives_zero_logit_gradient():
    from roto.ssl import weighted_bce_logits

    _, g = weighted_bce_logits(np.zeros((1, 1)), np.full((1, 1), 0.5), pos_weight=1.0)
    assert g[0, 0] == 0.0


ACT_COMBOS = [
    ("elu", "elu", True),
    ("elu", "tanh", False),
    ("elu", "sigmoid", False),
    ("elu", "identity", True),
    ("tanh", "identity", (True, False, False)),
    ("sigmoid", "tanh", (False, True, False)),
]


@pytest.mark.parametrize("hidden,out,ln", ACT_COMBOS)
def test_mlp_gradients_match_finite_differences(hidden, out, ln, rng):
    spec = MlpSpec((5, 7, 6, 3), hidden, out, layer_norm=ln)
    for _ in range(4):
        params = spec.init_params(rng)
        for k in params:  # move LN gains/offsets off their init values
            params[k] = params[k] + 0.3 * rng.normal(size=params[k].shape)
        x = rng.normal(size=(4, 5))
        w = rng.normal(size=(4, 3))
        loss = lambda: float(np.sum(w * mlp_forward(spec, params, x)))
        _, tape = mlp_forward(spec, params, x, record=True)
        grads, dx = mlp_backward(params, tape, w)
        assert check_param_grads(loss, params, grads, rng) < 1e-4
        # input gradient
        h = 1e-5
        i, j = int(rng.integers(0, 4)), int(rng.integers(0, 5))
        xp, xm = x.copy(), x.copy()
        xp[i, j] += h
        xm[i, j] -= h
        fd = (np.sum(w * mlp_forward(spec, params, xp)) - np.sum(w * mlp_forward(spec, params, xm))) / (2 * h)
        assert rel_err(dx[i, j], fd) < 1e-4


# -- optimisers -----------------------------------------------------------------

def test_adam_zero_grad_no_change():
    p = {"w": np.array([1.0, -2.0])}
    st_ = AdamState.for_params(p)
    out = adam_step(p, {"w": np.zeros(2)}, st_, 0.1)
    assert np.array_equal(out["w"], p["w"])


def test_adam_first_step_is_signed_lr():
    p = {"w": np.array([1.0, -2.0, 0.5])}
    g = {"w": np.array([3.0, -0.2, 40.0])}
    out = adam_step(p, g, AdamState.for_params(p), 0.01)
    # bias-corrected first step: m/c1 = g, sqrt(v/c2) = |g|
    assert np.allclose(out["w"] - p["w"], -0.01 * np.sign(g["w"]), rtol=1e-6)


def test_adam_deterministic_with_cloned_state():
    p = {"w": np.array([1.0, 2.0])}
    s = AdamState.for_params(p)
    adam_step(p, {"w": np.array([0.1, 0.2])}, s, 0.01)
    a = adam_step(p, {"w": np.array([0.5, -1.0])}, s.clone(), 0.01)
    b = adam_step(p, {"w": np.array([0.5, -1.0])}, s.clone(), 0.01)
    assert np.array_equal(a["w"], b["w"])


def test_adam_rejects_non_finite():
    p = {"w": np.zeros(2)}
    with pytest.raises(NonFiniteError):
        adam_step(p, {"w": np.array([np.nan, 0.0])}, AdamState.for_params(p), 0.1)


def test_clip_examples():
    g, n = clip_global_norm({"a": np.array([0.3, 0.4])}, 1.0)
    assert n == pytest.approx(0.5) and np.array_equal(g["a"], [0.3, 0.4])
    g, n = clip_global_norm({"a": np.array([3.0, 4.0])}, 1.0)
    assert np.allclose(g["a"], [0.6, 0.8], atol=1e-15)
    g, _ = clip_global_norm({"a": np.zeros(3)}, 1.0)
    assert np.array_equal(g["a"], np.zeros(3))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12), st.floats(0.01, 10.0))
def test_clip_bounds_norm_and_keeps_direction(vals, max_norm):
    v = np.array(vals)
    out, norm = clip_global_norm([{"x": v[: len(v) // 2]}, {"y": v[len(v) // 2:]}], max_norm)
    joined = np.concatenate([out[0]["x"], out[1]["y"]])
    assert global_norm(out) <= max_norm + 1e-12
    if norm > 0:
        assert np.allclose(joined * norm / max(np.linalg.norm(joined), 1e-300), v, rtol=1e-9, atol=1e-9) or norm <= max_norm


def test_ema_examples():
    t = {"w": np.zeros(3)}
    ema_update(t, {"w": np.ones(3)}, 0.01)
    assert np.allclose(t["w"], 0.01, atol=1e-15)
    same = {"w": np.array([1.5, -2.0])}
    tgt = {"w": same["w"].copy()}
    ema_update(tgt, same, 0.01)
    assert np.array_equal(tgt["w"], same["w"])
    t = {"w": np.array([2.0])}
    for _ in range(50):
        ema_update(t, {"w": np.array([1.0])}, 0.01)
    assert t["w"][0] - 1.0 == pytest.approx(0.99 ** 50, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=8), st.floats(0.001, 1.0))
def test_ema_contraction(vals, tau):
    rng = np.random.default_rng(len(vals))
    tgt = {"w": np.array(vals)}
    online = {"w": rng.normal(size=len(vals))}
    before = tgt["w"] - online["w"]
    ema_update(tgt, online, tau)
    assert np.allclose(np.abs(tgt["w"] - online["w"]), (1 - tau) * np.abs(before), rtol=1e-9, atol=1e-12)


# -- running stats ----------------------------------------------------------------

def test_running_stats_constant_stream():
    rs = RunningStats()
    for _ in range(10):
        rs.update(3.25)
    assert rs.count == 10
    assert rs.normalize(3.25) == 0.0


def test_running_stats_monte_carlo():
    rs = RunningStats()
    data = np.random.default_rng(7).normal(3.0, 2.0, size=10 ** 6)
    for chunk in np.array_split(data, 37):
        rs.update(chunk)
    assert rs.count == 10 ** 6
    assert abs(rs.mean - 3.0) < 0.03 and abs(rs.std - 2.0) < 0.02


def test_running_stats_needs_two_updates():
    rs = RunningStats().update(1.0)
    with pytest.raises(ValueError):
        rs.normalize(1.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=60), st.integers(1, 7))
def test_running_stats_matches_two_pass(values, n_chunks):
    x = np.array(values)
    rs = RunningStats()
    for chunk in np.array_split(x, min(n_chunks, len(x))):
        rs.update(chunk)
    assert rs.count == len(x)
    assert rs.var >= 0
    assert abs(rs.mean - x.mean()) <= 1e-9 * max(1.0, np.abs(x).max())
    assert abs(rs.var - x.var()) <= 1e-9 * max(1.0, x.var(), np.abs(x).max() ** 2 * 1e-6)


def test_running_stats_count_order_invariant():
    a, b = RunningStats(), RunningStats()
    xs = [1.0, 5.0, -2.0, 8.0]
    for v in xs:
        a.update(v)
    for v in reversed(xs):
        b.update(v)
    assert a.count == b.count == 4
    assert a.mean == pytest.approx(b.mean) and a.var == pytest.approx(b.var)


# -- serialisation ---------------------------------------------------------------

def test_param_serialisation_round_trip(tmp_path):
    spec = MlpSpec((4, 8, 2), layer_norm=(True, False))
    params = spec.init_params(np.random.default_rng(3))
    arrays = {**{f"net/{k}": v for k, v in params.items()}, "step": np.array([7], dtype=np.int64)}
    jp, bp = save_arrays(tmp_path / "ckpt", arrays, {"note": "x"})
    manifest = json.loads(jp.read_text())
    assert {e["name"] for e in manifest["arrays"]} == set(arrays)
    assert bp.stat().st_size == sum(e["nbytes"] for e in manifest["arrays"])
    loaded, meta = load_arrays(tmp_path / "ckpt")
    assert meta == {"note": "x"}
    for k, v in arrays.items():
        assert np.array_equal(loaded[k], v) and loaded[k].dtype.kind == v.dtype.kind
    raw = np.frombuffer(bp.read_bytes()[:8], dtype="<f8")[0]
    first = manifest["arrays"][0]
    assert raw == arrays[first["name"]].ravel()[0]


def test_corrupt_sidecar_rejected(tmp_path):
    save_arrays(tmp_path / "c", {"a": np.ones(4)})
    (tmp_path / "c.bin").write_bytes(b"\0" * 32)
    with pytest.raises(ValueError):
        load_arrays(tmp_path / "c")
