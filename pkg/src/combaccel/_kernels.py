"""Hot loops, compiled with numba when available.

Every kernel has two implementations with identical semantics:

* a loop form compiled with ``numba.njit`` (``cache=True``), and
* a vectorised numpy form.

``get_backend()`` picks numba unless ``COMBACCEL_DISABLE_NUMBA`` is set to a
true value or numba cannot be imported.  numba is imported lazily, so code
paths that never touch a kernel never pay for it.

Kernels
-------
minimax_select(cost)
    Strictly increasing assignment of targets (rows) to levels (columns)
    minimising the worst cost, then the total cost.
mvm_chain(ez, ey, w, res, lam, hwhm, depth, xtalk)
    Normalised row outputs ``(1/c) sum_j w_j ez_j ey_ij pass_ij`` for a batch.
dmmm_chain(ex, ey, ez, w, res, lam, hwhm, depth, xtalk)
    Normalised two-stage outputs
    ``(1/(r c)) sum_k ex_ik sum_m w_m ey_km ez_mj pass_km`` for a batch.

``pass_ij`` is the product of the Lorentzian tails that the other rings of
row i impose on wavelength j; it is 1 when ``xtalk`` is false.  ``res`` holds
each ring's biased resonance (nm), ``hwhm`` and ``depth = 1 - t_min`` are per
ring.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

ENV_DISABLE = "COMBACCEL_DISABLE_NUMBA"


# ---------------------------------------------------------------------------
# Plain loop forms.  Valid Python and valid numba nopython code.

def _minimax_select_loops(cost):
    n_t, n_g = cost.shape
    big = np.inf
    # Pass 1: bottleneck value.
    best = np.full((n_t, n_g), big)
    for i in range(n_g):
        best[0, i] = cost[0, i]
    for t in range(1, n_t):
        run = big
        for i in range(n_g):
            if i > 0 and best[t - 1, i - 1] < run:
                run = best[t - 1, i - 1]
            if run < big:
                best[t, i] = max(run, cost[t, i])
    opt = big
    for i in range(n_g):
        if best[n_t - 1, i] < opt:
            opt = best[n_t - 1, i]
    # Pass 2: least total cost among bottleneck-optimal selections.
    tot = np.full((n_t, n_g), big)
    arg = np.full((n_t, n_g), -1, dtype=np.int64)
    for i in range(n_g):
        if cost[0, i] <= opt:
            tot[0, i] = cost[0, i]
    for t in range(1, n_t):
        run = big
        run_at = -1
        for i in range(n_g):
            if i > 0 and tot[t - 1, i - 1] < run:
                run = tot[t - 1, i - 1]
                run_at = i - 1
            if run < big and cost[t, i] <= opt:
                tot[t, i] = run + cost[t, i]
                arg[t, i] = run_at
    out = np.empty(n_t, dtype=np.int64)
    last = 0
    low = big
    for i in range(n_g):
        if tot[n_t - 1, i] < low:
            low = tot[n_t - 1, i]
            last = i
    out[n_t - 1] = last
    for t in range(n_t - 1, 0, -1):
        last = arg[t, last]
        out[t - 1] = last
    return out


def _pass_factor(j, row_res, lam, hwhm, depth):
    # Tails of all other rings of the row on wavelength j.
    p = 1.0
    for k in range(row_res.shape[0]):
        if k != j:
            x = (lam[j] - row_res[k]) / hwhm[k]
            p *= 1.0 - depth[k] / (1.0 + x * x)
    return p


def _mvm_chain_loops(ez, ey, w, res, lam, hwhm, depth, xtalk):
    nb, r, c = ey.shape
    out = np.zeros((nb, r))
    for b in range(nb):
        for i in range(r):
            acc = 0.0
            for j in range(c):
                s = w[j] * ez[b, j] * ey[b, i, j]
                if xtalk:
                    s *= _pass_factor(j, res[b, i], lam, hwhm, depth)
                acc += s
            out[b, i] = acc / c
    return out


def _dmmm_chain_loops(ex, ey, ez, w, res, lam, hwhm, depth, xtalk):
    nb, p, r = ex.shape
    c = ey.shape[2]
    q = ez.shape[2]
    out = np.zeros((nb, p, q))
    pas = np.ones((r, c))
    stage1 = np.zeros((r, q))
    for b in range(nb):
        for k in range(r):
            for m in range(c):
                pas[k, m] = _pass_factor(m, res[b, k], lam, hwhm, depth) if xtalk else 1.0
        # Stage 1: one optical bundle per (row k, unit j); never detected.
        for k in range(r):
            for j in range(q):
                acc = 0.0
                for m in range(c):
                    acc += w[m] * ey[b, k, m] * ez[b, m, j] * pas[k, m]
                stage1[k, j] = acc / c
        # Stage 2: broadband RTM gains, summed per output row.
        for i in range(p):
            for j in range(q):
                acc = 0.0
                for k in range(r):
                    acc += ex[b, i, k] * stage1[k, j]
                out[b, i, j] = acc / r
    return out


# ---------------------------------------------------------------------------
# Vectorised numpy forms.

def _minimax_select_numpy(cost):
    cost = np.asarray(cost, dtype=float)
    n_t, n_g = cost.shape
    big = np.inf

    def prefix_before(row):
        # min(row[:i]), inf at i = 0
        return np.concatenate(([big], np.minimum.accumulate(row)[:-1]))

    best = cost[0].copy()
    for t in range(1, n_t):
        best = np.maximum(prefix_before(best), cost[t])
    opt = best.min()

    ok = cost <= opt
    tot = np.where(ok[0], cost[0], big)
    args = np.full((n_t, n_g), -1, dtype=np.int64)
    pos = np.arange(n_g)
    for t in range(1, n_t):
        prev = np.concatenate(([big], np.minimum.accumulate(tot)[:-1]))  # min(tot[:i])
        first = np.maximum.accumulate(np.where(tot < prev, pos, -1))  # argmin of tot[:i+1]
        args[t] = np.concatenate(([-1], first[:-1]))
        tot = np.where(ok[t] & (prev < big), prev + cost[t], big)
    out = np.empty(n_t, dtype=np.int64)
    out[-1] = int(np.argmin(tot))
    for t in range(n_t - 1, 0, -1):
        out[t - 1] = args[t, out[t]]
    return out


def _pass_numpy(res, lam, hwhm, depth):
    # res: (..., c) ring resonances of one row; returns (..., c) pass factors.
    c = lam.size
    x = (lam[None, :] - res[..., :, None]) / hwhm[:, None]  # (..., k, j)
    tail = 1.0 - depth[:, None] / (1.0 + x * x)
    k_idx = np.arange(c)
    tail[..., k_idx, k_idx] = 1.0
    return np.prod(tail, axis=-2)


def _mvm_chain_numpy(ez, ey, w, res, lam, hwhm, depth, xtalk):
    c = ey.shape[2]
    s = w[None, None, :] * ez[:, None, :] * ey
    if xtalk:
        s = s * _pass_numpy(res, lam, hwhm, depth)
    return s.sum(axis=2) / c


def _dmmm_chain_numpy(ex, ey, ez, w, res, lam, hwhm, depth, xtalk):
    r = ey.shape[1]
    c = ey.shape[2]
    wy = ey * w[None, None, :]
    if xtalk:
        wy = wy * _pass_numpy(res, lam, hwhm, depth)
    stage1 = np.einsum("bkm,bmj->bkj", wy, ez) / c
    return np.einsum("bik,bkj->bij", ex, stage1) / r


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Backend:
    name: str
    minimax_select: Callable
    mvm_chain: Callable
    dmmm_chain: Callable


NUMPY_BACKEND = Backend(
    name="numpy",
    minimax_select=_minimax_select_numpy,
    mvm_chain=_mvm_chain_numpy,
    dmmm_chain=_dmmm_chain_numpy,
)

_NUMBA_BACKEND: Backend | None = None


def _wrap_chain(fn):
    # Normalise dtypes and contiguity before entering compiled code.
    def call(*args):
        arrays = [np.ascontiguousarray(a, dtype=np.float64) for a in args[:-1]]
        return fn(*arrays, bool(args[-1]))
    return call


def numba_backend() -> Backend:
    """Compile (or load from cache) the numba kernels."""
    global _NUMBA_BACKEND
    if _NUMBA_BACKEND is None:
        from numba import njit

        pass_factor = njit(cache=True)(_pass_factor)
        g = dict(_mvm_chain_loops.__globals__)
        g["_pass_factor"] = pass_factor
        mvm = njit(cache=True)(_rebind(_mvm_chain_loops, g))
        dmmm = njit(cache=True)(_rebind(_dmmm_chain_loops, g))
        sel = njit(cache=True)(_minimax_select_loops)
        _NUMBA_BACKEND = Backend(
            name="numba",
            minimax_select=lambda cost: sel(np.ascontiguousarray(cost, dtype=np.float64)),
            mvm_chain=_wrap_chain(mvm),
            dmmm_chain=_wrap_chain(dmmm),
        )
    return _NUMBA_BACKEND


def _rebind(fn, globals_):
    import types

    return types.FunctionType(fn.__code__, globals_, fn.__name__, fn.__defaults__, fn.__closure__)


def numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _env_disabled() -> bool:
    return os.environ.get(ENV_DISABLE, "").strip().lower() in ("1", "true", "yes", "on")


def get_backend(name: str | None = None) -> Backend:
    """Kernel backend by name, or the default chosen from the environment."""
    if name == "numpy":
        return NUMPY_BACKEND
    if name == "numba":
        return numba_backend()
    if name is not None:
        raise ValueError(f"unknown backend {name!r}")
    if _env_disabled() or not numba_available():
        return NUMPY_BACKEND
    return numba_backend()
