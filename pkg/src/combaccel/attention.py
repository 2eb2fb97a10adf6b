"""Attention head on the D-MMM engine.

Operands are unsigned B-bit codes; ``^`` marks full-scale normalised values
(code / M, ``M = 2^B - 1``).  With ``Q = X^ W_Q^``, ``K = X^ W_K^`` and
``V = X^ W_V^``, the head computes::

    scores = g * Q K^T / 2^m        S = softmax(scores)        out = S V

``m`` is the right-shift amount standing in for ``sqrt(d_k)`` (exact when
``d_k = 4^m``) and ``g`` is the score gain that the collapsed weight
``W_C = W_Q W_K^T`` picks up when it is requantised to B bits
(:attr:`CollapsedWeights.score_gain`).

Quantised pipeline, as run on hardware:

1. ``C = dmmm(X, W_C, X^T)``: scores in code units, one final rounding.
2. ``floor(C / 2^m)`` by arithmetic right shift.
3. Row-wise LUT softmax.
4. ``S`` requantised to B bits with a per-row scale.
5. ``dmmm(S, X, W_V)``: the RTMs carry S, rescaled back to real units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .config import AccelConfig
from .errors import ValidationError
from .mmm import MmmStrategy, dmmm_exact, dmmm_oracle, dmmm_simulate, mmm, mmm_oracle
from .mvm import SimFlags, as_codes
from .resonator import TABLE_I_DISPERSION, DispersionModel, WavelengthPlan, plan_wavelengths

# LUT sizing: exp on [-12, 0] at 2^-7, log over [1, K] with 1024 entries.
LUT_RANGE = 12.0
LUT_FRAC_BITS = 7
LUT_LOG_ENTRIES = 1024


# ---------------------------------------------------------------------------
# Weights

def _m_top(bits: int) -> int:
    return (1 << bits) - 1


@dataclass(frozen=True)
class CollapsedWeights:
    """``W_C = W_Q W_K^T``: exact product, B-bit codes and their scale.

    ``product ~= codes * scale`` with ``scale = max(product) / M`` and half-up
    rounding.  ``scale`` is 1 for an all-zero product.
    """

    product: np.ndarray
    codes: np.ndarray
    scale: float
    bits: int

    @property
    def score_gain(self) -> float:
        """Gain ``g`` from ``Q K^T`` to score code units."""
        m = _m_top(self.bits)
        d = self.product.shape[0]
        return m * m / (d * d * self.scale)


def collapse_qk(w_q, w_k, bits: int) -> CollapsedWeights:
    """Offline ``W_Q W_K^T`` in exact integers, requantised to B bits."""
    q = as_codes(w_q, bits, "w_q")
    k = as_codes(w_k, bits, "w_k")
    if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape != k.shape:
        raise ValidationError(f"w_q {q.shape} and w_k {k.shape} must be equal square matrices")
    product = q @ k.T
    m = _m_top(bits)
    top = int(product.max()) if product.size else 0
    if top == 0:
        return CollapsedWeights(product, np.zeros_like(product), 1.0, bits)
    codes = (2 * product * m + top) // (2 * top)
    return CollapsedWeights(product, codes.astype(np.int64), top / m, bits)


@dataclass(frozen=True)
class AttentionWeights:
    """Per-head projections as B-bit codes.

    ``d_k`` must be a power of two; the score shift defaults to
    ``log2(d_k) // 2`` and always divides by ``2^shift``.
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    bits: int = 4
    d_k: int | None = None
    shift: int | None = None
    collapsed: CollapsedWeights = field(init=False, repr=False)

    def __post_init__(self) -> None:
        for name in ("w_q", "w_k", "w_v"):
            object.__setattr__(self, name, as_codes(getattr(self, name), self.bits, name))
        d = self.w_q.shape[0]
        if self.w_v.shape != (d, d):
            raise ValidationError(f"w_v must be {d} x {d}")
        d_k = d if self.d_k is None else self.d_k
        if d_k < 1 or d_k & (d_k - 1):
            raise ValidationError(f"d_k = {d_k} must be a power of two")
        shift = (d_k.bit_length() - 1) // 2 if self.shift is None else self.shift
        if shift < 0:
            raise ValidationError("shift must be >= 0")
        object.__setattr__(self, "d_k", d_k)
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "collapsed", collapse_qk(self.w_q, self.w_k, self.bits))

    @property
    def d(self) -> int:
        return self.w_q.shape[0]

    @property
    def w_c(self) -> np.ndarray:
        return self.collapsed.codes


# ---------------------------------------------------------------------------
# Scaling and softmax

def scale_scores(c, m: int) -> np.ndarray:
    """Arithmetic right shift: ``floor(c / 2^m)`` for signed integers."""
    if m < 0:
        raise ValidationError("shift must be >= 0")
    return np.right_shift(np.asarray(c, dtype=np.int64), m)


@dataclass(frozen=True)
class SoftmaxLut:
    """Exp and log tables for a row length K.

    Attributes
    ----------
    exp_table : ndarray
        ``exp(t)`` on ``t = -range + k * step``, ``k = 0 .. range/step``.
    log_table : ndarray
        ``log`` values uniform over ``[0, ln K]``; a sum S reads the entry
        nearest ``ln S``.
    step : float
        Exp grid spacing ``2^-frac_bits``; scores on this grid are exact.
    """

    exp_table: np.ndarray
    log_table: np.ndarray
    step: float
    range: float
    length: int

    @classmethod
    def build(cls, length: int, range_: float = LUT_RANGE, frac_bits: int = LUT_FRAC_BITS,
              log_entries: int = LUT_LOG_ENTRIES) -> "SoftmaxLut":
        return _build_lut(length, range_, frac_bits, log_entries)

    @property
    def log_step(self) -> float:
        return self.log_table[1] - self.log_table[0] if self.log_table.size > 1 else 0.0

    def error_bound(self) -> float:
        """Worst-case absolute error of any output entry, and of the row sum minus 1.

        Exp lookup error is at most ``step`` in the exponent (``step/2`` per
        lookup, two lookups).  The log table adds half its step and the
        flushed tail below ``-range`` a relative ``(K-1) e^-range``.
        """
        k = self.length
        tail = math.exp(-self.range)
        if k == 1:
            return 0.0
        flush = -math.log1p(-(k - 1) * tail)
        return math.expm1(self.step + self.log_step / 2 + flush) + k * tail

    def exp(self, t: np.ndarray) -> np.ndarray:
        idx = np.rint((t + self.range) / self.step).astype(np.int64)
        out = self.exp_table[np.clip(idx, 0, self.exp_table.size - 1)]
        return np.where(idx < 0, 0.0, out)

    def log(self, s: float) -> float:
        if self.log_table.size == 1:
            return 0.0
        i = int(np.clip(np.rint(math.log(s) / self.log_step), 0, self.log_table.size - 1))
        return float(self.log_table[i])


@dataclass(frozen=True)
class LutSizing:
    """Softmax table sizing: exp range and grid bits, log entries."""

    range: float = LUT_RANGE
    frac_bits: int = LUT_FRAC_BITS
    log_entries: int = LUT_LOG_ENTRIES

    def build(self, length: int) -> SoftmaxLut:
        return _build_lut(length, float(self.range), self.frac_bits, self.log_entries)


@lru_cache(maxsize=32)
def _build_lut(length: int, range_: float, frac_bits: int, log_entries: int) -> SoftmaxLut:
    if length < 1:
        raise ValidationError("softmax row must be nonempty")
    if range_ <= 0 or frac_bits < 0 or log_entries < 2:
        raise ValidationError("invalid LUT sizing")
    step = 2.0 ** -frac_bits
    n_exp = int(round(range_ / step)) + 1
    exp_table = np.exp(-range_ + step * np.arange(n_exp))
    if length == 1:
        log_table = np.zeros(1)
    else:
        log_table = math.log(length) * np.arange(log_entries) / (log_entries - 1)
    exp_table.setflags(write=False)
    log_table.setflags(write=False)
    return SoftmaxLut(exp_table, log_table, step, range_, length)


def softmax_lut(row, lut: SoftmaxLut | None = None) -> np.ndarray:
    """``exp(a_i - a_max - log sum_j exp(a_j - a_max))`` by table lookup."""
    a = np.asarray(row, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise ValidationError("softmax needs a nonempty 1-D row")
    lut = lut or SoftmaxLut.build(a.size)
    if lut.length != a.size:
        raise ValidationError(f"LUT built for rows of {lut.length}, got {a.size}")
    if a.size == 1:
        return np.ones(1)
    t = a - a.max()
    log_sum = lut.log(float(lut.exp(t).sum()))
    return lut.exp(t - log_sum)


def softmax_exact(rows) -> np.ndarray:
    a = np.asarray(rows, dtype=float)
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_rows(scores: np.ndarray, lut: LutSizing | None) -> np.ndarray:
    if lut is None:
        return softmax_exact(scores)
    table = lut.build(scores.shape[1])
    return np.stack([softmax_lut(r, table) for r in scores])


def quantize_rows(s: np.ndarray, bits: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-row B-bit codes of nonnegative values and the row scales."""
    m = _m_top(bits)
    top = s.max(axis=1)
    scale = np.where(top > 0, top / m, 1.0)
    codes = np.floor(s / scale[:, None] + 0.5).astype(np.int64)
    return np.clip(codes, 0, m), scale


# ---------------------------------------------------------------------------
# Backends

class ExactBackend:
    """Dense real arithmetic end to end, exact softmax."""

    name = "exact"


@dataclass(frozen=True)
class OracleBackend:
    """The quantised pipeline with the exact fixed-point D-MMM.

    ``quantize=False`` keeps every stage real (unrounded D-MMMs, real W_C,
    no shift flooring, exact softmax); it must match :class:`ExactBackend`.
    """

    quantize: bool = True
    name: str = "oracle"

    def dmmm(self, x, y, z, bits: int, stage: int):
        if self.quantize:
            return dmmm_oracle(x, y, z, bits)
        return dmmm_real(x, y, z, bits)

    def mmm(self, y, z, bits: int, stage: int):
        return mmm_oracle(y, z, bits)


def dmmm_real(x, y, z, bits: int) -> np.ndarray:
    """Unrounded D-MMM on real-valued operands in code units."""
    x, y, z = (np.asarray(a, dtype=float) for a in (x, y, z))
    m = _m_top(bits)
    return x @ (y @ z) / (x.shape[1] * y.shape[1] * m * m)


@dataclass
class SimulatedBackend:
    """The quantised pipeline through :func:`dmmm_simulate` and :func:`mmm`.

    Wavelength plans are built per line count and cached.  Each pipeline
    stage uses its own block of noise streams.
    """

    cfg: AccelConfig = field(default_factory=AccelConfig)
    flags: SimFlags = field(default_factory=SimFlags)
    dispersion: DispersionModel = TABLE_I_DISPERSION
    lambda_max: float = 1550.0
    spacing: float = 0.5
    name: str = "simulated"
    quantize: bool = field(default=True, init=False)
    _plans: dict = field(default_factory=dict, init=False, repr=False)

    STREAM_BLOCK = 1 << 20

    def setup(self, lines: int) -> tuple[AccelConfig, WavelengthPlan]:
        if lines not in self._plans:
            plan = plan_wavelengths(lines, self.lambda_max, self.spacing, self.dispersion)
            self._plans[lines] = (self.cfg.with_d(lines), plan)
        return self._plans[lines]

    def dmmm(self, x, y, z, bits: int, stage: int):
        cfg, plan = self.setup(np.shape(y)[1])
        _check_bits(cfg, bits)
        return dmmm_simulate(x, y, z, cfg, plan, self.flags,
                             stream_base=stage * self.STREAM_BLOCK).codes

    def mmm(self, y, z, bits: int, stage: int):
        cfg, plan = self.setup(np.shape(y)[1])
        _check_bits(cfg, bits)
        return mmm(y, z, MmmStrategy.parallel(), cfg, plan, self.flags,
                   stream_base=stage * self.STREAM_BLOCK).codes


def _check_bits(cfg: AccelConfig, bits: int) -> None:
    if cfg.bits != bits:
        raise ValidationError(f"weights use {bits} bits, accelerator config {cfg.bits}")


# ---------------------------------------------------------------------------
# Pipeline

@dataclass(frozen=True)
class AttentionResult:
    """Per-stage values of one head, all in real units.

    ``scores`` are the softmax inputs ``g Q K^T / 2^m``; ``probs`` is S.
    """

    scores: np.ndarray
    probs: np.ndarray
    output: np.ndarray
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"scores": self.scores.tolist(), "probs": self.probs.tolist(),
                "output": self.output.tolist(), "meta": self.meta}


def _normalised(a, bits: int) -> np.ndarray:
    return np.asarray(a, dtype=float) / _m_top(bits)


def attention_head(X, w: AttentionWeights, backend=None,
                   lut: LutSizing | None = None) -> AttentionResult:
    """One attention head on the chosen backend.

    Parameters
    ----------
    X : array_like, shape (n, d)
        Input tokens as B-bit codes.
    w : AttentionWeights
    backend : ExactBackend, OracleBackend or SimulatedBackend
        Defaults to :class:`ExactBackend`.
    lut : LutSizing, optional
        Softmax tables for quantised backends; default sizing if omitted.
    """
    backend = backend or ExactBackend()
    bits = w.bits
    x = as_codes(X, bits, "X")
    if x.ndim != 2 or x.shape[1] != w.d:
        raise ValidationError(f"X must be n x {w.d}, got {x.shape}")
    n, d = x.shape
    g = w.collapsed.score_gain
    if isinstance(backend, ExactBackend):
        xh = _normalised(x, bits)
        q, k, v = (xh @ _normalised(a, bits) for a in (w.w_q, w.w_k, w.w_v))
        scores = g * (q @ k.T) / 2.0**w.shift
        probs = softmax_exact(scores)
        return AttentionResult(scores, probs, probs @ v, {"score_gain": g})

    m = _m_top(bits)
    quant = backend.quantize
    if quant:
        c = backend.dmmm(x, w.w_c, x.T, bits, stage=0)
        scores = scale_scores(c, w.shift).astype(float)
    else:
        w_c = w.collapsed.product / w.collapsed.scale
        scores = backend.dmmm(x, w_c, x.T, bits, stage=0) / 2.0**w.shift
    probs = _softmax_rows(scores, (lut or LutSizing()) if quant else None)
    if quant:
        s_codes, s_scale = quantize_rows(probs, bits)
    else:
        s_scale = np.where(probs.max(axis=1) > 0, probs.max(axis=1) / m, 1.0)
        s_codes = probs / s_scale[:, None]
    out = backend.dmmm(s_codes, x, w.w_v, bits, stage=1)
    output = np.asarray(out, dtype=float) * (s_scale[:, None] * n * d)
    meta = {"score_gain": g, "w_c_scale": w.collapsed.scale, "s_scale": s_scale.tolist()}
    return AttentionResult(scores, probs, output, meta)


@dataclass(frozen=True)
class MultiheadResult:
    heads: tuple[AttentionResult, ...]
    concat: np.ndarray
    output: np.ndarray
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"heads": [h.to_dict() for h in self.heads], "concat": self.concat.tolist(),
                "output": self.output.tolist(), "meta": self.meta}


def multihead(X, heads: Sequence[AttentionWeights], w_o, backend=None,
              lut: LutSizing | None = None) -> MultiheadResult:
    """``Concat[head_1 .. head_h] W_O^``.

    On quantised backends the concatenation is requantised to B bits with
    one scale and multiplied by ``W_O`` through the MMM engine as
    ``W_O^T . concat^T`` (``h d`` comb lines).
    """
    backend = backend or ExactBackend()
    if not heads:
        raise ValidationError("need at least one head")
    bits, d = heads[0].bits, heads[0].d
    if any(h.bits != bits or h.d != d for h in heads):
        raise ValidationError("heads must share d and bits")
    h = len(heads)
    wo = as_codes(w_o, bits, "w_o")
    if wo.shape != (h * d, d):
        raise ValidationError(f"w_o must be {h * d} x {d}, got {wo.shape}")
    results = tuple(attention_head(X, w, backend, lut) for w in heads)
    concat = np.concatenate([r.output for r in results], axis=1)
    if isinstance(backend, ExactBackend) or not backend.quantize:
        return MultiheadResult(results, concat, concat @ _normalised(wo, bits))
    m = _m_top(bits)
    top = float(concat.max()) if concat.size else 0.0
    scale = top / m if top > 0 else 1.0
    codes = np.clip(np.floor(concat / scale + 0.5), 0, m).astype(np.int64)
    out = backend.mmm(wo.T, codes.T, bits, stage=2)
    output = np.asarray(out, dtype=float).T * (scale * h * d)
    return MultiheadResult(results, concat, output, {"concat_scale": scale})


# ---------------------------------------------------------------------------
# Fidelity

def _err(a: np.ndarray, b: np.ndarray) -> dict:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return {"max_abs": 0.0, "rms": 0.0}
    e = b - a
    return {"max_abs": float(np.abs(e).max()), "rms": float(np.sqrt(np.mean(e * e)))}


def fidelity_report(exact, sim) -> dict:
    """Max and rms error of ``sim`` against ``exact``.

    Given two :class:`AttentionResult` objects the report also splits the
    error by stage (scores, softmax, output); given arrays it covers the
    output only.
    """
    if isinstance(exact, AttentionResult) and isinstance(sim, AttentionResult):
        stages = {"scores": _err(exact.scores, sim.scores),
                  "softmax": _err(exact.probs, sim.probs),
                  "output": _err(exact.output, sim.output)}
        return {**stages["output"], "stages": stages}
    if isinstance(exact, MultiheadResult) and isinstance(sim, MultiheadResult):
        return {**_err(exact.output, sim.output), "stages": {
            "concat": _err(exact.concat, sim.concat),
            "heads": [fidelity_report(a, b) for a, b in zip(exact.heads, sim.heads)]}}
    return _err(exact, sim)


def dmmm_exact_float(x, y, z, bits: int) -> np.ndarray:
    """Exact rational D-MMM converted to float, for reporting."""
    return np.vectorize(float, otypes=[float])(dmmm_exact(x, y, z, bits))
