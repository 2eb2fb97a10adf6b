"""Matrix-matrix products built from MVM cores, and the two-stage D-MMM.

An MMM ``Y (r x c) . Z (c x q)`` runs one MVM per column of Z.  The
schedule decides how many MVM cores run side by side.

A D-MMM ``X (p x r) . Y (r x c) . Z (c x q)`` keeps the stage-1 result in
the optical domain.  For each column j of Z, every stage-1 row k leaves its
M-MRM row as a c-line power bundle proportional to ``sum_m y_km z_mj``.
The bundle is split 1-to-p, a broadband racetrack modulator (RTM) set to
``x_ik`` scales all its lines at once, and an r-to-1 O-MUX combines the
bundles feeding output ``(i, j)``.  Only that final sum is detected.

Output codes are ``round_half_up(sum_k sum_m x_ik y_km z_mj / (r c M^2))``
with ``M = 2^B - 1``, a second average on top of the MVM normalisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .config import AccelConfig
from .eo import eo_values, reference_mrm_model
from .errors import ValidationError
from .mvm import (
    SimFlags, _quantize_with_noise, _ring_resonances, _splitter, as_codes, chain_gains,
    line_optics, mvm_simulate_batch,
)
from .power import area, soc_power
from .resonator import WavelengthPlan


# ---------------------------------------------------------------------------
# Scheduling

@dataclass(frozen=True)
class MmmStrategy:
    """How many MVM cores share the ``n`` columns.

    ``mode`` is "parallel" (n cores, one cycle), "time_multiplexed" (one core,
    n cycles) or "hybrid" (``k`` cores, ``ceil(n/k)`` cycles, last batch may
    be partial).
    """

    mode: str = "parallel"
    k: int | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("parallel", "time_multiplexed", "hybrid"):
            raise ValidationError(f"unknown strategy {self.mode!r}")
        if self.mode == "hybrid":
            if self.k is None or self.k < 1:
                raise ValidationError("hybrid strategy needs k >= 1 units")
        elif self.k is not None:
            raise ValidationError(f"{self.mode} strategy takes no k")

    @classmethod
    def parallel(cls) -> "MmmStrategy":
        return cls("parallel")

    @classmethod
    def time_multiplexed(cls) -> "MmmStrategy":
        return cls("time_multiplexed")

    @classmethod
    def hybrid(cls, k: int) -> "MmmStrategy":
        return cls("hybrid", k)

    @classmethod
    def parse(cls, text: str) -> "MmmStrategy":
        """``"parallel"``, ``"time_multiplexed"`` or ``"hybrid:<k>"``."""
        if text.startswith("hybrid"):
            _, _, k = text.partition(":")
            try:
                return cls.hybrid(int(k))
            except ValueError as exc:
                raise ValidationError(f"hybrid strategy needs an integer k: {text!r}") from exc
        return cls(text)

    def units_cycles(self, n: int) -> tuple[int, int]:
        if n < 1:
            raise ValidationError("need at least one column")
        if self.mode == "parallel":
            return n, 1
        if self.mode == "time_multiplexed":
            return 1, n
        return self.k, math.ceil(n / self.k)


@dataclass(frozen=True)
class ScheduleReport:
    units_used: int
    cycles: int
    area_mm2: float
    energy_j: float
    latency_s: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def schedule(n: int, strategy: MmmStrategy, cfg: AccelConfig) -> ScheduleReport:
    """Area, energy and latency of ``n`` column MVMs under ``strategy``."""
    units, cycles = strategy.units_cycles(n)
    return ScheduleReport(
        units_used=units,
        cycles=cycles,
        area_mm2=units * area(cfg),
        energy_j=units * cycles * soc_power(cfg) / cfg.f_clk,
        latency_s=cycles / cfg.f_clk,
    )


@dataclass(frozen=True)
class MmmResult:
    codes: np.ndarray
    analog: np.ndarray
    saturated: int
    schedule: ScheduleReport


def mmm(Y, Z, strategy: MmmStrategy, cfg: AccelConfig, plan: WavelengthPlan,
        flags: SimFlags = SimFlags(), stream_base: int = 0) -> MmmResult:
    """Column-by-column MMM; codes do not depend on the strategy.

    Column j uses noise stream ``stream_base + j``, so it matches
    ``mvm_simulate(..., stream=stream_base + j)``.
    """
    y = as_codes(Y, cfg.bits, "Y")
    z = as_codes(Z, cfg.bits, "Z")
    if y.ndim != 2 or z.ndim != 2 or y.shape[1] != z.shape[0]:
        raise ValidationError(f"shape mismatch: Y {y.shape}, Z {z.shape}")
    n = z.shape[1]
    rep = schedule(n, strategy, cfg)
    res = mvm_simulate_batch(np.broadcast_to(y, (n,) + y.shape), z.T, cfg, plan, flags,
                             streams=range(stream_base, stream_base + n))
    return MmmResult(codes=res.codes.T, analog=res.analog.T, saturated=res.saturated,
                     schedule=rep)


def mmm_oracle(Y, Z, bits: int) -> np.ndarray:
    """Exact column-wise MVM reference."""
    y = as_codes(Y, bits, "Y")
    z = as_codes(Z, bits, "Z")
    if y.ndim != 2 or z.ndim != 2 or y.shape[1] != z.shape[0]:
        raise ValidationError(f"shape mismatch: Y {y.shape}, Z {z.shape}")
    m = (1 << bits) - 1
    c = y.shape[1]
    return (2 * (y @ z) + c * m) // (2 * c * m)


# ---------------------------------------------------------------------------
# D-MMM

def _dmmm_shapes(x: np.ndarray, y: np.ndarray, z: np.ndarray) -> None:
    if x.ndim != 2 or y.ndim != 2 or z.ndim != 2:
        raise ValidationError("X, Y, Z must be matrices")
    if x.shape[1] != y.shape[0] or y.shape[1] != z.shape[0]:
        raise ValidationError(f"shape mismatch: X {x.shape}, Y {y.shape}, Z {z.shape}")


def dmmm_oracle(X, Y, Z, bits: int) -> np.ndarray:
    """Exact reference for the two-stage product, one final rounding.

    Integer arithmetic in Python ints, so no overflow at any size.
    """
    x = as_codes(X, bits, "X")
    y = as_codes(Y, bits, "Y")
    z = as_codes(Z, bits, "Z")
    _dmmm_shapes(x, y, z)
    m = (1 << bits) - 1
    den = x.shape[1] * y.shape[1] * m * m
    s = x.astype(object) @ (y.astype(object) @ z.astype(object))
    out = (2 * s + den) // (2 * den)
    return out.astype(np.int64)


def dmmm_exact(X, Y, Z, bits: int) -> np.ndarray:
    """Unrounded D-MMM output in code units, as Fractions."""
    x = as_codes(X, bits, "X")
    y = as_codes(Y, bits, "Y")
    z = as_codes(Z, bits, "Z")
    _dmmm_shapes(x, y, z)
    m = (1 << bits) - 1
    den = x.shape[1] * y.shape[1] * m * m
    s = x.astype(object) @ (y.astype(object) @ z.astype(object))
    return np.vectorize(lambda v: Fraction(int(v), den), otypes=[object])(s)


@dataclass(frozen=True)
class ConversionEvent:
    """A group of identical domain crossings.

    ``kind`` is "E/O" (a modulator driven by a code) or "O/E" (a detector).
    ``stage`` is 1 or 2.
    """

    kind: str
    stage: int
    device: str
    count: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class DmmmTrace:
    """Optical powers (W) and the conversion log of one D-MMM.

    ``stage1`` is ``[unit j, row k, line m]``, the bundle leaving M-MRM row k
    before any detection.  ``after_rtm`` is ``[i, j, k, m]`` after the 1-to-p
    split and the RTM.  ``combined`` is ``[i, j, m]`` after the r-to-1 O-MUX.
    ``rtm_gain_spread`` is the largest relative spread of one RTM's gain
    across lines.
    """

    stage1: np.ndarray
    after_rtm: np.ndarray
    combined: np.ndarray
    photocurrent: np.ndarray
    adc_in: np.ndarray
    codes: np.ndarray
    full_scale: float
    events: tuple[ConversionEvent, ...]
    rtm_gain_spread: float

    @property
    def photodetections(self) -> int:
        return sum(e.count for e in self.events if e.kind == "O/E")

    @property
    def intermediate_oe(self) -> int:
        """Detections before the final stage; zero by construction."""
        return sum(e.count for e in self.events if e.kind == "O/E" and e.stage < 2)

    @property
    def modulator_events(self) -> int:
        return sum(e.count for e in self.events if e.kind == "E/O")

    def to_dict(self, full: bool = True) -> dict:
        out = {
            "photodetections": self.photodetections,
            "intermediate_oe": self.intermediate_oe,
            "modulator_events": self.modulator_events,
            "events": [e.to_dict() for e in self.events],
            "rtm_gain_spread": self.rtm_gain_spread,
            "full_scale": self.full_scale,
            "photocurrent": self.photocurrent.tolist(),
            "adc_in": self.adc_in.tolist(),
            "codes": self.codes.tolist(),
        }
        if full:
            out.update(stage1=self.stage1.tolist(), after_rtm=self.after_rtm.tolist(),
                       combined=self.combined.tolist())
        return out


@dataclass(frozen=True)
class DmmmResult:
    codes: np.ndarray
    analog: np.ndarray
    saturated: int
    schedule: ScheduleReport
    trace: DmmmTrace


def rtm_e_table(cfg: AccelConfig, plan: WavelengthPlan, nonlinearity: str) -> np.ndarray:
    """Broadband RTM value per code.

    The racetrack shares the modulator Lorentzian; its transfer is taken at
    the longest comb line and applied to every line alike.
    """
    lam = plan.lambdas[-1]
    ring = reference_mrm_model(lambda_res0=lam, q_factor=cfg.q_factor, shift_rate=cfg.shift_rate,
                      dr_db=cfg.mrm_dr_db, v_max=cfg.vddh)
    return eo_values(nonlinearity, ring, lam, cfg.bits, cfg.vddh)


def dmmm_full_scale(cfg: AccelConfig, p: int, r: int, c: int) -> float:
    """ADC-input voltage with every modulator at full scale."""
    g = chain_gains(cfg, r)
    split2 = _splitter(p, cfg.splitter_loss_db)
    return g.v_per_watt * g.p_lambda * g.eta_mrm**3 * g.splitter * split2 * r * c


def dmmm_simulate(X, Y, Z, cfg: AccelConfig, plan: WavelengthPlan,
                  flags: SimFlags = SimFlags(),
                  strategy: MmmStrategy = MmmStrategy(),
                  stream_base: int = 0) -> DmmmResult:
    """Simulate the all-optical D-MMM with a full power trace.

    Shapes: X p x r, Y r x c, Z c x q with ``c = plan.d`` comb lines and
    p, r powers of two (splitter fan-outs).  Output column j uses noise
    stream ``stream_base + j``.  Ideal flags reproduce :func:`dmmm_oracle` exactly.
    """
    bits = cfg.bits
    x = as_codes(X, bits, "X")
    y = as_codes(Y, bits, "Y")
    z = as_codes(Z, bits, "Z")
    _dmmm_shapes(x, y, z)
    p, r = x.shape
    c, q = z.shape
    if plan.d != cfg.d or c != plan.d:
        raise ValidationError(f"Y has {c} columns; plan and config need {plan.d} = {cfg.d}")
    opt = line_optics(cfg, plan, flags.nonlinearity, flags.absorption_weighting)
    g = chain_gains(cfg, r)
    split2 = _splitter(p, cfg.splitter_loss_db)
    lines = np.arange(c)

    # Stage 1, per unit j: V-MRMs carry column j of Z, split 1-to-r into the
    # M-MRM rows of Y.  Nothing is detected here.
    ez = opt.e_table[lines, z.T]                       # (q, c)
    ey = opt.e_table[lines, y]                         # (r, c)
    into_rows = g.p_lambda * g.eta_mrm * ez * g.splitter
    row_gain = g.eta_mrm * ey
    if flags.crosstalk:
        from ._kernels import _pass_numpy

        row_gain = row_gain * _pass_numpy(_ring_resonances(opt, y), opt.lambdas, opt.hwhm,
                                          opt.depth)
    stage1 = into_rows[:, None, :] * row_gain[None, :, :]      # (q, r, c)

    # Stage 2: split 1-to-p, RTM x_ik scales bundle k broadband, combine over k.
    ex = rtm_e_table(cfg, plan, flags.nonlinearity)[x]         # (p, r)
    rtm_gain = np.broadcast_to((g.eta_mrm * ex)[:, :, None], (p, r, c))
    after_rtm = stage1[None, :, :, :] * split2 * rtm_gain[:, None, :, :]   # (p, q, r, c)
    combined = after_rtm.sum(axis=2)                                      # (p, q, c)
    absorbed = combined * g.eta_rtr * opt.weights
    current = g.responsivity * absorbed.sum(axis=2)                      # (p, q)
    v = current * g.transimpedance * g.s2d_gain
    fs = dmmm_full_scale(cfg, p, r, c)
    codes_t, v_t, sat, _ = _quantize_with_noise(v.T, cfg, g, fs, flags,
                                                 range(stream_base, stream_base + q))
    codes, analog = codes_t.T, v_t.T

    spread = 0.0
    if rtm_gain.size:
        hi, lo = rtm_gain.max(axis=2), rtm_gain.min(axis=2)
        with np.errstate(invalid="ignore", divide="ignore"):
            rel = np.where(hi > 0, (hi - lo) / hi, 0.0)
        spread = float(rel.max())

    events = (
        ConversionEvent("E/O", 1, "V-MRM", c * q),
        ConversionEvent("E/O", 1, "M-MRM", r * c),
        ConversionEvent("E/O", 2, "RTM", p * r),
        ConversionEvent("O/E", 2, "RTR-PD", p * q),
    )
    trace = DmmmTrace(stage1=stage1, after_rtm=after_rtm, combined=combined,
                      photocurrent=current, adc_in=analog, codes=codes, full_scale=fs,
                      events=events, rtm_gain_spread=spread)
    return DmmmResult(codes=codes, analog=analog, saturated=sat,
                      schedule=schedule(q, strategy, cfg), trace=trace)


def dmmm_simulate_batch(Xs, Ys, Zs, cfg: AccelConfig, plan: WavelengthPlan,
                        flags: SimFlags = SimFlags()) -> np.ndarray:
    """Codes of many noiseless D-MMMs through the compiled kernel.

    Intended for large oracle sweeps; use :func:`dmmm_simulate` for traces
    and noise.
    """
    from ._kernels import get_backend

    if flags.noise:
        raise ValidationError("batch D-MMM is noiseless; use dmmm_simulate")
    bits = cfg.bits
    x = as_codes(Xs, bits, "X")
    y = as_codes(Ys, bits, "Y")
    z = as_codes(Zs, bits, "Z")
    if x.ndim != 3 or y.ndim != 3 or z.ndim != 3 or not (x.shape[0] == y.shape[0] == z.shape[0]):
        raise ValidationError("batch operands must be 3-D with a common batch size")
    nb, p, r = x.shape
    c = y.shape[2]
    if y.shape[1] != r or z.shape[1] != c or c != plan.d or plan.d != cfg.d:
        raise ValidationError(f"shape mismatch: X {x.shape}, Y {y.shape}, Z {z.shape}")
    _splitter(p, cfg.splitter_loss_db)
    _splitter(r, cfg.splitter_loss_db)
    opt = line_optics(cfg, plan, flags.nonlinearity, flags.absorption_weighting)
    lines = np.arange(c)
    ey = opt.e_table[lines, y]
    ez = np.moveaxis(opt.e_table[lines, np.moveaxis(z, 1, 2)], 1, 2)
    ex = rtm_e_table(cfg, plan, flags.nonlinearity)[x]
    res = _ring_resonances(opt, y) if flags.crosstalk else np.zeros((nb, r, c))
    out = get_backend(flags.backend).dmmm_chain(ex, ey, ez, opt.weights, res, opt.lambdas,
                                                opt.hwhm, opt.depth, flags.crosstalk)
    m = (1 << bits) - 1
    from .frontend import TIE_GUARD_LSB

    return np.clip(np.floor(out * m + 0.5 + TIE_GUARD_LSB), 0, m).astype(np.int64)


@dataclass(frozen=True)
class NaiveComparison:
    """Errors (code units) against the exact product, per output element."""

    dmmm_error: np.ndarray
    naive_error: np.ndarray

    @property
    def dmmm_not_worse_rate(self) -> float:
        return float(np.mean(self.dmmm_error <= self.naive_error + 1e-12))

    def to_dict(self) -> dict:
        return {
            "dmmm_max_error": float(self.dmmm_error.max()),
            "naive_max_error": float(self.naive_error.max()),
            "dmmm_not_worse_rate": self.dmmm_not_worse_rate,
        }


def compare_naive(X, Y, Z, bits: int) -> NaiveComparison:
    """D-MMM against two chained MMMs with a requantised intermediate."""
    exact = dmmm_exact(X, Y, Z, bits)
    d_codes = dmmm_oracle(X, Y, Z, bits)
    mid = mmm_oracle(Y, Z, bits)
    naive = mmm_oracle(X, mid, bits)
    to_f = np.vectorize(float, otypes=[float])
    return NaiveComparison(
        dmmm_error=np.abs(to_f(d_codes - exact)),
        naive_error=np.abs(to_f(naive - exact)),
    )
