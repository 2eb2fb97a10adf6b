"""Compare the numba and numpy kernel backends.

Usage: python benchmarks/bench_kernels.py [--batch N] [--d D] [--repeat R]

Prints one line per kernel with the best-of-R wall time of each backend,
their ratio, and the largest output difference.  The first numba call
(compile or cache load) is timed separately.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from combaccel._kernels import NUMPY_BACKEND, numba_available, numba_backend


def _best(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _optics(rng, nb: int, r: int, c: int):
    lam = 1534.5 + 0.5 * np.arange(c)
    hwhm = lam / 2e4
    depth = np.full(c, 0.56)
    res = lam[None, None, :] + rng.normal(0, 0.05, (nb, r, c))
    return np.ones(c), res, lam, hwhm, depth


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=2000)
    ap.add_argument("--d", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not numba_available():
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    nb, d = args.batch, args.d
    w, res, lam, hwhm, depth = _optics(rng, nb, d, d)
    ez = rng.random((nb, d))
    ey = rng.random((nb, d, d))
    n_dm = max(1, nb // d)
    ex3 = rng.random((n_dm, d, d))
    ey3 = rng.random((n_dm, d, d))
    ez3 = rng.random((n_dm, d, d))
    cost = np.abs(rng.normal(size=(16, 32)))

    t0 = time.perf_counter()
    nbk = numba_backend()
    nbk.mvm_chain(ez[:1], ey[:1], w, res[:1], lam, hwhm, depth, True)
    nbk.dmmm_chain(ex3[:1], ey3[:1], ez3[:1], w, res[:1], lam, hwhm, depth, True)
    nbk.minimax_select(cost)
    print(f"numba first call (compile or cache load): {time.perf_counter() - t0:.3f} s")

    cases = {
        f"mvm_chain  batch={nb} d={d} xtalk": lambda b: b.mvm_chain(
            ez, ey, w, res, lam, hwhm, depth, True),
        f"mvm_chain  batch={nb} d={d} ideal": lambda b: b.mvm_chain(
            ez, ey, w, res, lam, hwhm, depth, False),
        f"dmmm_chain batch={n_dm} d={d} xtalk": lambda b: b.dmmm_chain(
            ex3, ey3, ez3, w, res[:n_dm], lam, hwhm, depth, True),
        "minimax_select 16x32": lambda b: b.minimax_select(cost),
    }
    for name, call in cases.items():
        t_np = _best(lambda: call(NUMPY_BACKEND), args.repeat)
        t_nb = _best(lambda: call(nbk), args.repeat)
        diff = np.max(np.abs(np.asarray(call(NUMPY_BACKEND), dtype=float)
                             - np.asarray(call(nbk), dtype=float)))
        print(f"{name:38s} numpy {t_np * 1e3:9.3f} ms  numba {t_nb * 1e3:9.3f} ms  "
              f"speedup {t_np / t_nb:6.2f}x  max diff {diff:.2e}")


if __name__ == "__main__":
    main()
