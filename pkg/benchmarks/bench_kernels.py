"""Compare the numba kernels with their pure numpy / Python fallbacks.

Run with ``python3 benchmarks/bench_kernels.py``. Both variants are called
directly, so the ``LINKDP_DISABLE_JIT`` flag does not matter here. Each
kernel is warmed up once so that compile time is excluded, and outputs are
checked for agreement before timing.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from linkdp import _kernels
from linkdp.linker import generate_corpus


def _jw_case(rng, size):
    A, B = generate_corpus(size, n_blocks=1, seed=int(rng.integers(1 << 31)))
    a, b = list(A.fields[0]), list(B.fields[0])
    ca, la = _kernels.encode_strings(a)
    cb, lb = _kernels.encode_strings(b)

    def numba():
        return _kernels.jw_matrix_numba(ca, la, cb, lb, np.zeros((len(a), len(b))))

    def python():
        return _kernels.jw_matrix_py(a, b, np.zeros((len(a), len(b))))

    return f"jaro-winkler {size}x{size}", numba, python


def _greedy_case(rng, size):
    scores = rng.random((size, size))
    order = np.argsort(-scores, axis=None, kind="stable")
    rows, cols = np.divmod(order, size)

    def numba():
        return _kernels.greedy_accept_numba(rows, cols, size, size)

    def python():
        return _kernels._greedy_accept_py(rows, cols, size, size)

    return f"greedy accept {size}x{size}", numba, python


def _ngd_case(rng, steps):
    d = 3
    X = rng.standard_normal((2000, d))
    gram, moment = X.T @ X, X.T @ rng.standard_normal(2000)
    noise = 0.01 * rng.standard_normal((steps, d))
    beta0 = np.zeros(d)

    def numba():
        return _kernels.ngd_descend_numba(gram, moment, beta0, 1e-4, 1.5, noise)

    def python():
        return _kernels.ngd_descend_py(gram, moment, beta0, 1e-4, 1.5, noise)

    return f"ngd descent T={steps}", numba, python


def _block_case(rng, n):
    sizes = np.full(n // 25, 25, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    gammas = rng.uniform(0.6, 0.9, len(sizes))
    off = (1 - gammas) / (sizes - 1)
    V = rng.standard_normal((n, 2))

    def numba():
        return _kernels.block_apply_numba(V, starts, sizes, gammas, off)

    def python():
        return _kernels.block_apply_py(V, starts, sizes, gammas, off)

    return f"block apply n={n}", numba, python


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    rng = np.random.default_rng(args.seed)
    cases = [_jw_case(rng, 300), _greedy_case(rng, 600), _ngd_case(rng, 20000), _block_case(rng, 100000)]
    print(f"{'kernel':<26}{'numba ms':>12}{'fallback ms':>14}{'speedup':>10}")
    for name, numba, python in cases:
        np.testing.assert_allclose(numba(), python(), rtol=1e-12, atol=1e-12)
        t_numba = min(timeit.repeat(numba, number=1, repeat=args.repeat)) * 1e3
        t_python = min(timeit.repeat(python, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<26}{t_numba:>12.3f}{t_python:>14.3f}{t_python / t_numba:>9.1f}x")


if __name__ == "__main__":
    main()
