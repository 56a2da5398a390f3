"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--no-step]

Each kernel is called on shapes taken from a default-sized decoder step
(batch 16, 400 encoder positions, 50k+ extended vocabulary). The last row
times one full training step on a small model in two subprocesses, one
per backend.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from covgen import _pykernels as py

try:
    from covgen import _ckernels as ck
except ImportError:
    sys.exit("compiled extension not built; run `pip install -e . --no-build-isolation` first")


def cases(rng):
    B, T, V = 16, 400, 50_000
    x = rng.normal(size=(B, T))
    mask = rng.random((B, T)) < 0.9
    mask[:, 0] = True
    y = py.masked_softmax_rows(x, mask)
    g = rng.normal(size=(B, T))
    idx = rng.integers(0, V + 20, size=(B, T))
    wide = rng.normal(size=(B, V + 20))
    ids = rng.integers(0, V, size=B * 25)
    rows = rng.normal(size=(B * 25, 128))
    a = rng.integers(0, 50, size=120)
    b = rng.integers(0, 50, size=120)
    n = 1_000_000
    theta, grad, acc = rng.normal(size=n), rng.normal(size=n), np.full(n, 0.1)
    return {
        "masked_softmax_rows": lambda k: k.masked_softmax_rows(x, mask),
        "softmax_rows_backward": lambda k: k.softmax_rows_backward(y, g),
        "scatter_add_rows": lambda k: k.scatter_add_rows(y, idx, V + 20),
        "gather_cols": lambda k: k.gather_cols(wide, idx),
        "index_add_rows": lambda k: k.index_add_rows(V, ids, rows),
        "lcs_table": lambda k: k.lcs_table(a, b),
        "adagrad_update": lambda k: k.adagrad_update(theta, grad, acc, 0.15),
    }


STEP = """
import time
from covgen.checks import tiny_batch, TINY
from covgen.model import ModelConfig, init_params, batch_loss
from covgen.autodiff import backprop
_, batch = tiny_batch()
p = init_params(ModelConfig.for_mode('coverage', **TINY), 0)
best = float('inf')
for _ in range({repeat}):
    t = time.perf_counter()
    tape, loss, _ = batch_loss(p, batch)
    backprop(tape, loss)
    best = min(best, time.perf_counter() - t)
print(best)
"""


def time_step(pure, repeat):
    env = dict(os.environ)
    env.pop("COVGEN_PURE_PYTHON", None)
    if pure:
        env["COVGEN_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", STEP.format(repeat=repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-step", action="store_true", help="skip the end-to-end training step")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, fn in cases(rng).items():
        number = 3 if name == "lcs_table" else 10
        t_py = min(timeit.repeat(lambda: fn(py), number=number, repeat=args.repeat)) / number
        t_ck = min(timeit.repeat(lambda: fn(ck), number=number, repeat=args.repeat)) / number
        print(f"{name:<24}{t_py * 1e3:>12.3f}{t_ck * 1e3:>12.3f}{t_py / t_ck:>9.1f}x")
    if not args.no_step:
        t_py, t_ck = time_step(True, args.repeat), time_step(False, args.repeat)
        print(f"{'train step (tiny)':<24}{t_py * 1e3:>12.3f}{t_ck * 1e3:>12.3f}{t_py / t_ck:>9.1f}x")


if __name__ == "__main__":
    main()
