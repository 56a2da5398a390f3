"""Kernel dispatch: compiled extension when built, numpy fallback otherwise.

Set ``COVGEN_PURE_PYTHON=1`` to force the fallback.
"""

import os

from covgen import _pykernels

BACKEND = "python"
_impl = _pykernels
if not os.environ.get("COVGEN_PURE_PYTHON"):
    try:
        from covgen import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

masked_softmax_rows = _impl.masked_softmax_rows
softmax_rows_backward = _impl.softmax_rows_backward
scatter_add_rows = _impl.scatter_add_rows
gather_cols = _impl.gather_cols
index_add_rows = _impl.index_add_rows
lcs_table = _impl.lcs_table
adagrad_update = _impl.adagrad_update

__all__ = [
    "BACKEND",
    "masked_softmax_rows",
    "softmax_rows_backward",
    "scatter_add_rows",
    "gather_cols",
    "index_add_rows",
    "lcs_table",
    "adagrad_update",
]
