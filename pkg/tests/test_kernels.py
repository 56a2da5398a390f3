import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covgen import _pykernels as py

ck = pytest.importorskip("covgen._ckernels", reason="compiled extension not built")

seeds = st.integers(0, 2**31 - 1)
dims = st.integers(1, 9)


@given(seeds, dims, dims)
@settings(max_examples=50)
def test_softmax_parity(seed, r, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 5, (r, n))
    mask = rng.random((r, n)) < 0.6
    mask[:, rng.integers(0, n)] = True
    a, b = py.masked_softmax_rows(x, mask), ck.masked_softmax_rows(x, mask)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)
    g = rng.normal(size=(r, n))
    np.testing.assert_allclose(py.softmax_rows_backward(a, g), ck.softmax_rows_backward(a, g), rtol=0, atol=1e-14)


def test_softmax_empty_support_both():
    x, mask = np.zeros((1, 2)), np.zeros((1, 2), dtype=bool)
    for impl in (py, ck):
        with pytest.raises(ValueError, match="empty attention support"):
            impl.masked_softmax_rows(x, mask)


@given(seeds, dims, dims, dims)
@settings(max_examples=50)
def test_scatter_gather_parity(seed, r, n, w):
    rng = np.random.default_rng(seed)
    src = rng.normal(size=(r, n))
    idx = rng.integers(0, w, size=(r, n))
    np.testing.assert_allclose(py.scatter_add_rows(src, idx, w), ck.scatter_add_rows(src, idx, w), atol=1e-15)
    g = rng.normal(size=(r, w))
    np.testing.assert_array_equal(py.gather_cols(g, idx), ck.gather_cols(g, idx))
    ids = rng.integers(0, w, size=n)
    rows = rng.normal(size=(n, r))
    np.testing.assert_allclose(py.index_add_rows(w, ids, rows), ck.index_add_rows(w, ids, rows), atol=1e-15)


@given(st.lists(st.integers(0, 4), max_size=15), st.lists(st.integers(0, 4), max_size=15))
@settings(max_examples=100)
def test_lcs_parity(a, b):
    a, b = np.array(a, dtype=np.int64), np.array(b, dtype=np.int64)
    np.testing.assert_array_equal(py.lcs_table(a, b), ck.lcs_table(a, b))


@given(seeds, dims)
@settings(max_examples=50)
def test_adagrad_parity(seed, n):
    rng = np.random.default_rng(seed)
    theta, grad, acc = rng.normal(size=n), rng.normal(size=n), rng.uniform(0.1, 1, n)
    t1, a1, t2, a2 = theta.copy(), acc.copy(), theta.copy(), acc.copy()
    py.adagrad_update(t1, grad, a1, 0.15)
    ck.adagrad_update(t2, grad, a2, 0.15)
    np.testing.assert_allclose(t1, t2, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(a1, a2)


def test_fallback_selected_by_environment():
    code = "import covgen.kernels as k; print(k.BACKEND)"
    env = {"COVGEN_PURE_PYTHON": "1", "PATH": ""}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    out = subprocess.run([sys.executable, "-c", code], env={"PATH": ""}, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "cython"


def test_backends_agree_on_a_training_step():
    code = """
import numpy as np
from covgen.checks import tiny_batch, TINY
from covgen.model import ModelConfig, init_params, batch_loss
from covgen.autodiff import backprop
_, batch = tiny_batch()
p = init_params(ModelConfig.for_mode('coverage', **TINY), 0)
tape, loss, _ = batch_loss(p, batch)
g = backprop(tape, loss)
print(repr(float(loss.value)), repr(float(sum(np.abs(v).sum() for v in g.values()))))
"""
    outs = []
    for env in ({"COVGEN_PURE_PYTHON": "1", "PATH": ""}, {"PATH": ""}):
        outs.append(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                                   check=True).stdout.split())
    (l1, g1), (l2, g2) = outs
    assert abs(float(l1) - float(l2)) < 1e-12 and abs(float(g1) - float(g2)) < 1e-10
