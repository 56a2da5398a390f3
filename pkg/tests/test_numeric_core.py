import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covgen import autodiff as ad
from covgen.autodiff import Tape, backprop
from covgen.gradients import clip_by_global_norm, global_norm, grad_check

FD_TOL = 1e-6


# -- masked_softmax ------------------------------------------------------------


def test_softmax_uniform():
    t = Tape()
    y = ad.masked_softmax(t.const([0.0, 0.0, 0.0]), [True, True, True]).value
    np.testing.assert_allclose(y, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_softmax_log2():
    t = Tape()
    y = ad.masked_softmax(t.const([0.0, math.log(2)]), [True, True]).value
    np.testing.assert_allclose(y, [1 / 3, 2 / 3], rtol=0, atol=1e-15)


def test_softmax_masked_entries_are_exact_zero():
    t = Tape()
    y = ad.masked_softmax(t.const([5.0, 5.0, 5.0]), [True, False, True]).value
    assert y[1] == 0.0
    np.testing.assert_allclose(y, [0.5, 0.0, 0.5], atol=1e-15)


def test_softmax_empty_support():
    t = Tape()
    with pytest.raises(ValueError, match="empty attention support"):
        ad.masked_softmax(t.const([1.0, 2.0]), [False, False])


def test_softmax_large_logits_stable():
    t = Tape()
    y = ad.masked_softmax(t.const([1000.0, 1000.0, -1000.0])).value
    assert np.isfinite(y).all()
    np.testing.assert_allclose(y, [0.5, 0.5, 0.0], atol=1e-15)


logit_lists = st.lists(st.floats(-30, 30), min_size=1, max_size=12)


@given(logit_lists, st.data(), st.floats(-50, 50))
@settings(max_examples=200, deadline=None)
def test_softmax_sums_to_one_and_shift_invariant(logits, data, shift):
    n = len(logits)
    mask = data.draw(st.lists(st.booleans(), min_size=n, max_size=n).filter(any))
    x = np.array(logits)
    m = np.array(mask)
    t = Tape()
    y = ad.masked_softmax(t.const(x), m).value
    assert abs(y.sum() - 1.0) <= 1e-12
    assert (y[~m] == 0).all() and (y[m] > 0).all()
    y2 = ad.masked_softmax(t.const(np.where(m, x + shift, x)), m).value
    np.testing.assert_allclose(y2, y, rtol=0, atol=1e-12)


# -- backprop examples ---------------------------------------------------------


def test_product_rule():
    t = Tape()
    x, y = t.param("x", 3.0), t.param("y", 5.0)
    g = backprop(t, x * y)
    assert g["x"] == 5.0 and g["y"] == 3.0


def test_neg_log_softmax_gradient():
    rng = np.random.default_rng(0)
    z0 = rng.normal(size=6)
    k = 2

    def f(tape, P):
        p = ad.masked_softmax(P["z"])
        return -ad.log(ad.reduce_sum(p * np.eye(6)[k]))

    t = Tape()
    z = t.param("z", z0)
    loss = f(t, {"z": z})
    g = backprop(t, loss)["z"]
    sm = np.exp(z0 - z0.max())
    sm /= sm.sum()
    np.testing.assert_allclose(g, sm - np.eye(6)[k], atol=1e-12)
    assert grad_check(f, {"z": z0}) < FD_TOL


def test_sum_tanh_matmul_2x2():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2,))
    assert grad_check(lambda t, P: ad.reduce_sum(ad.tanh(P["W"] @ x)), {"W": rng.normal(size=(2, 2))}) < FD_TOL


def test_unused_parameter_gets_zero_gradient():
    t = Tape()
    x = t.param("x", [1.0, 2.0])
    t.param("unused", np.ones((3, 2)))
    g = backprop(t, ad.reduce_sum(x * x))
    assert g["unused"].shape == (3, 2) and not g["unused"].any()


def test_non_scalar_loss_rejected():
    t = Tape()
    x = t.param("x", [1.0, 2.0])
    with pytest.raises(ValueError, match="scalar"):
        backprop(t, x * 2.0)


def test_non_recording_tape_rejected():
    t = Tape(record=False)
    x = t.param("x", 1.0)
    with pytest.raises(ValueError):
        backprop(t, x * x)


def test_tape_is_topological():
    t = Tape()
    x = t.param("x", np.ones(3))
    y = ad.tanh(x * 2.0) + x
    ad.reduce_sum(ad.sigmoid(y))
    produced = {i for i, needs in enumerate(t.needs_grad) if i in t.params.values() or not needs}
    for entry in t.entries:
        assert all(i in produced or i < entry.output for i in entry.inputs)
        produced.add(entry.output)
    outputs = [e.output for e in t.entries]
    assert len(outputs) == len(set(outputs))


# -- every primitive against central differences -------------------------------

dims = st.integers(2, 5)


def _shape(data, ndim_max=2):
    ndim = data.draw(st.integers(1, ndim_max))
    return tuple(data.draw(dims) for _ in range(ndim))


def _weighted_sum(node, w):
    # random projection so each output coordinate matters
    return ad.reduce_sum(node * w)


def _check(build, point, seed):
    rng = np.random.default_rng(seed)
    out_shape = {}

    def f(tape, P):
        out = build(tape, P)
        if "w" not in out_shape:
            out_shape["w"] = rng.normal(size=out.shape)
        return _weighted_sum(out, out_shape["w"])

    assert grad_check(f, point, epsilon=1e-6) < FD_TOL


seeds = st.integers(0, 2**31 - 1)


@given(st.data(), seeds)
@settings(max_examples=25, deadline=None)
def test_fd_matmul(data, seed):
    rng = np.random.default_rng(seed)
    n, k, m = (data.draw(dims) for _ in range(3))
    _check(lambda t, P: P["a"] @ P["b"], {"a": rng.normal(size=(n, k)), "b": rng.normal(size=(k, m))}, seed)


@given(st.data(), seeds)
@settings(max_examples=25, deadline=None)
def test_fd_matmul_batched_vector(data, seed):
    rng = np.random.default_rng(seed)
    b, n, k = (data.draw(dims) for _ in range(3))
    _check(lambda t, P: P["a"] @ P["v"], {"a": rng.normal(size=(b, n, k)), "v": rng.normal(size=(k,))}, seed)


@given(st.data(), seeds)
@settings(max_examples=25, deadline=None)
def test_fd_add_broadcast(data, seed):
    rng = np.random.default_rng(seed)
    shape = _shape(data)
    _check(lambda t, P: P["a"] + P["b"], {"a": rng.normal(size=shape), "b": rng.normal(size=shape[-1:])}, seed)


@given(st.data(), seeds)
@settings(max_examples=25, deadline=None)
def test_fd_mul(data, seed):
    rng = np.random.default_rng(seed)
    shape = _shape(data)
    _check(lambda t, P: P["a"] * P["b"], {"a": rng.normal(size=shape), "b": rng.normal(size=shape)}, seed)


@given(st.data(), seeds)
@settings(max_examples=25, deadline=None)
def test_fd_tanh_sigmoid(data, seed):
    rng = np.random.default_rng(seed)
    shape = _shape(data)
    _check(lambda t, P: ad.tanh(P["a"]) + ad.sigmoid(P["b"]),
           {"a": rng.normal(size=shape), "b": rng.normal(size=shape)}, seed)


@given(st.data(), seeds)
@settings(max_examples=25, deadline=None)
def test_fd_concat(data, seed):
    rng = np.random.default_rng(seed)
    r, c1, c2 = (data.draw(dims) for _ in range(3))
    axis = data.draw(st.sampled_from([0, -1]))
    a = rng.normal(size=(r, c1))
    b = rng.normal(size=(r, c2)) if axis == -1 else rng.normal(size=(c2, c1))
    _check(lambda t, P: ad.concat([P["a"], P["b"]], axis=axis), {"a": a, "b": b}, seed)


@given(st.data(), seeds)
@settings(max_examples=25, deadline=None)
def test_fd_gather_rows(data, seed):
    rng = np.random.default_rng(seed)
    n, e, k = (data.draw(dims) for _ in range(3))
    ids = rng.integers(0, n, size=k)  # repeats exercise accumulation
    _check(lambda t, P: ad.gather_rows(P["table"], ids), {"table": rng.normal(size=(n, e))}, seed)


@given(st.data(), seeds)
@settings(max_examples=25, deadline=None)
def test_fd_scatter_add(data, seed):
    rng = np.random.default_rng(seed)
    b, l, w = (data.draw(dims) for _ in range(3))
    idx = rng.integers(0, w, size=(b, l))
    _check(lambda t, P: ad.scatter_add(P["src"], idx, w), {"src": rng.normal(size=(b, l))}, seed)


@given(st.data(), seeds)
@settings(max_examples=25, deadline=None)
def test_fd_reduce_sum(data, seed):
    rng = np.random.default_rng(seed)
    shape = _shape(data, 3)
    axis = data.draw(st.sampled_from([None] + list(range(len(shape)))))
    _check(lambda t, P: ad.reduce_sum(P["a"], axis=axis) * 1.0, {"a": rng.normal(size=shape)}, seed)


@given(st.data(), seeds)
@settings(max_examples=25, deadline=None)
def test_fd_minimum(data, seed):
    rng = np.random.default_rng(seed)
    shape = _shape(data)
    a = rng.normal(size=shape)
    b = a + rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.01, 1.0, size=shape)  # no near-ties
    _check(lambda t, P: ad.minimum(P["a"], P["b"]), {"a": a, "b": b}, seed)


@given(st.data(), seeds)
@settings(max_examples=25, deadline=None)
def test_fd_masked_softmax(data, seed):
    rng = np.random.default_rng(seed)
    r, n = data.draw(dims), data.draw(dims)
    mask = rng.random((r, n)) < 0.7
    mask[:, 0] = True
    _check(lambda t, P: ad.masked_softmax(P["x"], mask), {"x": rng.normal(size=(r, n))}, seed)


@given(st.data(), seeds)
@settings(max_examples=25, deadline=None)
def test_fd_log_reshape(data, seed):
    rng = np.random.default_rng(seed)
    r, c = data.draw(dims), data.draw(dims)
    _check(lambda t, P: ad.reshape(ad.log(P["a"]), (c, r)), {"a": rng.uniform(0.5, 2.0, size=(r, c))}, seed)


def test_minimum_tie_splits_evenly():
    t = Tape()
    a, b = t.param("a", [1.0, 2.0]), t.param("b", [1.0, 3.0])
    g = backprop(t, ad.reduce_sum(ad.minimum(a, b)))
    np.testing.assert_array_equal(g["a"], [0.5, 1.0])
    np.testing.assert_array_equal(g["b"], [0.5, 0.0])


def test_relu_composition():
    t = Tape()
    x = t.param("x", [-1.0, 0.5, 2.0])
    y = ad.relu(x)
    np.testing.assert_array_equal(y.value, [0.0, 0.5, 2.0])
    np.testing.assert_array_equal(backprop(t, ad.reduce_sum(y))["x"], [0.0, 1.0, 1.0])


def test_replay_is_bit_identical():
    rng = np.random.default_rng(3)
    point = {"W": rng.normal(size=(4, 3)), "b": rng.normal(size=3)}
    x = rng.normal(size=(5, 4))

    def run():
        t = Tape()
        W, b = t.param("W", point["W"]), t.param("b", point["b"])
        loss = ad.reduce_sum(ad.masked_softmax(ad.tanh(x @ W + b)) * x[:, :3])
        return loss.value.tobytes(), {k: v.tobytes() for k, v in backprop(t, loss).items()}

    assert run() == run()


# -- clipping ------------------------------------------------------------------


def test_clip_under_limit_unchanged():
    out = clip_by_global_norm({"g": np.array([3.0, 4.0])}, 10.0)
    np.testing.assert_array_equal(out["g"], [3.0, 4.0])


def test_clip_scales_to_limit():
    out = clip_by_global_norm({"g": np.array([3.0, 4.0])}, 2.0)
    np.testing.assert_allclose(out["g"], [1.2, 1.6], atol=1e-15)


def test_clip_zero_gradients():
    out = clip_by_global_norm({"a": np.zeros(3), "b": np.zeros((2, 2))}, 0.5)
    assert not out["a"].any() and not out["b"].any()


def test_clip_rejects_nonpositive():
    with pytest.raises(ValueError):
        clip_by_global_norm({"g": np.ones(2)}, 0.0)


arrays = st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6).map(np.array)


@given(st.lists(arrays, min_size=1, max_size=4), st.floats(1e-3, 100))
@settings(max_examples=200, deadline=None)
def test_clip_idempotent_and_bounded(tensors, max_norm):
    grads = {f"p{i}": g for i, g in enumerate(tensors)}
    once = clip_by_global_norm(grads, max_norm)
    twice = clip_by_global_norm(once, max_norm)
    for k in grads:
        np.testing.assert_allclose(twice[k], once[k], rtol=0, atol=1e-12)
    norm = global_norm(once)
    assert norm <= max_norm + 1e-9
    if global_norm(grads) > max_norm:
        assert abs(norm - max_norm) <= 1e-9


# -- grad_check ----------------------------------------------------------------


def test_grad_check_quadratic():
    assert grad_check(lambda t, P: P["x"] * P["x"], {"x": np.array(3.0)}, 1e-5) < 1e-8


def test_grad_check_flags_corrupted_rule(monkeypatch):
    rule = ad.BACKWARD["mul"]
    monkeypatch.setitem(ad.BACKWARD, "mul", lambda g, ins, out, saved: [2 * x for x in rule(g, ins, out, saved)])
    err = grad_check(lambda t, P: ad.reduce_sum(P["x"] * 1.5), {"x": np.array([3.0, -2.0])})
    assert abs(err - 0.5) < 1e-6


def test_grad_check_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        grad_check(lambda t, P: P["x"] * P["x"], {"x": np.array(1.0)}, epsilon=0.1)


def test_grad_check_non_finite():
    with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
        grad_check(lambda t, P: P["x"] * 1e308 * 10.0, {"x": np.array(1.0)})
