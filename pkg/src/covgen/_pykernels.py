"""Reference kernels in numpy / plain Python.

Used when the compiled ``_ckernels`` extension is not built, and as the
comparison baseline in the kernel tests and benchmark.
"""

import numpy as np


def masked_softmax_rows(x, mask):
    """Row-wise softmax of a 2-D float64 array restricted to ``mask``."""
    mask = mask.astype(bool, copy=False)
    if not mask.any(axis=1).all():
        raise ValueError("empty attention support")
    shifted = np.where(mask, x, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(shifted), 0.0)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(y, g):
    return y * (g - (g * y).sum(axis=1, keepdims=True))


def scatter_add_rows(src, idx, width):
    out = np.zeros((src.shape[0], width))
    rows = np.broadcast_to(np.arange(src.shape[0])[:, None], idx.shape)
    np.add.at(out, (rows, idx), src)
    return out


def gather_cols(g, idx):
    return np.take_along_axis(g, idx, axis=1)


def index_add_rows(n_rows, ids, g):
    out = np.zeros((n_rows, g.shape[1]))
    np.add.at(out, ids, g)
    return out


def lcs_table(a, b):
    n, m = len(a), len(b)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        ai = a[i - 1]
        row, prev = table[i], table[i - 1]
        for j in range(1, m + 1):
            if ai == b[j - 1]:
                row[j] = prev[j - 1] + 1
            else:
                row[j] = row[j - 1] if row[j - 1] > prev[j] else prev[j]
    return np.asarray(table, dtype=np.int64)


def adagrad_update(theta, grad, acc, lr):
    """In-place: acc += g**2; theta -= lr * g / sqrt(acc)."""
    acc += grad * grad
    theta -= lr * grad / np.sqrt(acc)
