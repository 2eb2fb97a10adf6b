"""Bit-true simulation of one WDM matrix-vector multiplication.

Signal path of one MVM core with ``c`` comb lines and ``r`` rows::

    HS-DAC -> V-MRM_j (one per line) -> O-MUX -> 1:r O-PS
           -> row i: M-MRM_i1 .. M-MRM_ic -> RTR-PD_i -> TIA -> S2D -> ADC

Every line carries a "modulated depth" value ``e`` in ``[0, 1]``: 0 at code 0
and 1 at full scale.  Row i collects ``sum_j e(z_j) e(y_ij)`` and the ADC
full scale is the row's all-ones response, so the chain computes the
average ``(1/c) sum_j y_ij z_j / M`` in units of ``M = 2^B - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .config import AccelConfig
from .eo import NONLINEARITY_MODES, code_voltages, eo_values, reference_mrm_model
from .errors import ValidationError
from .frontend import AdcModel, adc_quantize, oe_noise_power, tia_characteristics
from .power import laser_power
from .resonator import WavelengthPlan


@dataclass(frozen=True)
class QuantizedArray:
    """Unsigned B-bit codes."""

    codes: np.ndarray
    bits: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "codes", as_codes(self.codes, self.bits))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.codes.shape


QuantizedVector = QuantizedArray
QuantizedMatrix = QuantizedArray


def as_codes(a, bits: int, name: str = "codes") -> np.ndarray:
    """Validate and convert to an int64 code array."""
    if isinstance(a, QuantizedArray):
        if a.bits != bits:
            raise ValidationError(f"{name}: {a.bits}-bit codes where {bits}-bit expected")
        return a.codes
    arr = np.asarray(a)
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise ValidationError(f"{name} must hold integer codes")
    elif arr.dtype.kind not in "iu":
        raise ValidationError(f"{name} must hold integer codes")
    arr = arr.astype(np.int64)
    top = (1 << bits) - 1
    if arr.size and (arr.min() < 0 or arr.max() > top):
        raise ValidationError(f"{name} must lie in [0, {top}]")
    return arr


def quantize_unit(x, bits: int) -> np.ndarray:
    """Round values in [0, 1] to B-bit codes, half up."""
    top = (1 << bits) - 1
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > 1):
        raise ValidationError("values must lie in [0, 1]")
    return np.floor(x * top + 0.5).astype(np.int64)


@dataclass(frozen=True)
class SimFlags:
    """Non-idealities switched on for a simulation.

    Attributes
    ----------
    nonlinearity : {"ideal", "uncalibrated", "calibrated"}
        E/O transfer used by every modulator.
    noise : bool
        Add Gaussian noise at the ADC input with the analog noise budget
        as variance.
    seed : int, optional
        Noise seed; required when ``noise`` is set.
    crosstalk : bool
        Apply the Lorentzian tails of neighbour rings to every line.
    absorption_weighting : bool
        Weight each line's absorption by ``lambda / n_g`` (mean 1).
    backend : {"numba", "numpy"}, optional
        Kernel backend; default follows the environment.
    """

    nonlinearity: str = "ideal"
    noise: bool = False
    seed: int | None = None
    crosstalk: bool = False
    absorption_weighting: bool = False
    backend: str | None = None

    def __post_init__(self) -> None:
        if self.nonlinearity not in NONLINEARITY_MODES:
            raise ValidationError(f"nonlinearity must be one of {NONLINEARITY_MODES}")
        if self.noise and self.seed is None:
            raise ValidationError("noisy simulation needs a seed")

    @property
    def is_ideal(self) -> bool:
        return (self.nonlinearity == "ideal" and not self.noise and not self.crosstalk
                and not self.absorption_weighting)

    def optics_key(self) -> tuple:
        return (self.nonlinearity, self.crosstalk, self.absorption_weighting)


def noise_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for one column or batch case."""
    return np.random.default_rng([int(seed), int(stream)])


def _splitter(rows: int, loss_db: float) -> float:
    if rows < 1 or rows & (rows - 1):
        raise ValidationError(f"{rows} rows: splitter fan-out must be a power of two")
    stages = rows.bit_length() - 1
    return 10.0 ** (-stages * loss_db / 10.0) / rows


@dataclass(frozen=True)
class LineOptics:
    """Per-line modulator tables shared by every ring on that line."""

    lambdas: np.ndarray
    e_table: np.ndarray       # (c, 2^B) modulated depth per code
    v_table: np.ndarray       # (c, 2^B) bias per code
    hwhm: np.ndarray
    depth: np.ndarray
    shift_rate: float
    weights: np.ndarray


@lru_cache(maxsize=64)
def line_optics(cfg: AccelConfig, plan: WavelengthPlan, nonlinearity: str,
                absorption: bool) -> LineOptics:
    lambdas = np.asarray(plan.lambdas, dtype=float)
    n_codes = 1 << cfg.bits
    e_table = np.empty((lambdas.size, n_codes))
    v_table = np.empty((lambdas.size, n_codes))
    hwhm = np.empty(lambdas.size)
    depth = np.empty(lambdas.size)
    for j, lam in enumerate(lambdas):
        ring = reference_mrm_model(lambda_res0=lam, q_factor=cfg.q_factor, shift_rate=cfg.shift_rate,
                          dr_db=cfg.mrm_dr_db, v_max=cfg.vddh)
        e_table[j] = eo_values(nonlinearity, ring, lam, cfg.bits, cfg.vddh)
        v_table[j] = code_voltages(nonlinearity, ring, lam, cfg.bits, cfg.vddh)
        hwhm[j] = ring.hwhm
        depth[j] = 1.0 - ring.t_min
    if absorption:
        w = np.asarray(plan.spacings) * plan.rtr_perimeter / lambdas
        w = w / w.mean()
    else:
        w = np.ones(lambdas.size)
    for arr in (e_table, v_table, hwhm, depth, w):
        arr.setflags(write=False)
    return LineOptics(lambdas=lambdas, e_table=e_table, v_table=v_table, hwhm=hwhm,
                      depth=depth, shift_rate=cfg.shift_rate, weights=w)


@dataclass(frozen=True)
class ChainGains:
    """Scalar gains of the optical and electrical path of one row."""

    p_lambda: float
    eta_mrm: float
    eta_rtr: float
    splitter: float
    responsivity: float
    transimpedance: float
    s2d_gain: float

    @property
    def v_per_watt(self) -> float:
        """ADC-input volts per watt arriving at the racetrack."""
        return self.eta_rtr * self.responsivity * self.transimpedance * self.s2d_gain


def chain_gains(cfg: AccelConfig, rows: int) -> ChainGains:
    return ChainGains(
        p_lambda=laser_power(cfg)["p_per_lambda"],
        eta_mrm=10.0 ** (-cfg.mrm_dr_db / 10.0),
        eta_rtr=10.0 ** (-cfg.rtr_dr_db / 10.0),
        splitter=_splitter(rows, cfg.splitter_loss_db),
        responsivity=cfg.responsivity,
        transimpedance=tia_characteristics(cfg.tia)["dc_transimpedance"],
        s2d_gain=cfg.s2d_gain,
    )


def mvm_full_scale(cfg: AccelConfig, rows: int, lines: int) -> float:
    """ADC-input voltage of a row with every modulator at full scale."""
    g = chain_gains(cfg, rows)
    return g.v_per_watt * g.p_lambda * g.eta_mrm**2 * g.splitter * lines


@dataclass(frozen=True)
class ChainTrace:
    """Every intermediate quantity of one MVM, for inspection and tests.

    Optical powers are in W, indexed ``[line]``, ``[row, line]`` or, for the
    weight rings, ``[row, ring, line]`` (power of every line after each ring).
    """

    p_laser: np.ndarray
    after_vmrm: np.ndarray
    after_omux: np.ndarray
    after_ops: np.ndarray
    after_mmrm: np.ndarray
    absorbed: np.ndarray
    photocurrent: np.ndarray
    tia_out: np.ndarray
    adc_in: np.ndarray
    codes: np.ndarray
    full_scale: float
    noise_sigma: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


@dataclass(frozen=True)
class MvmResult:
    codes: np.ndarray
    analog: np.ndarray
    saturated: int
    trace: ChainTrace | None = None


def mvm_oracle(Y, Z, bits: int) -> np.ndarray:
    """Exact reference: ``round_half_up(sum_j y_ij z_j / (c M))``.

    ``c`` is the dot-product length and ``M = 2^B - 1``; integer arithmetic
    throughout.
    """
    y = as_codes(Y, bits, "Y")
    z = as_codes(Z, bits, "Z")
    if y.ndim != 2 or z.ndim != 1 or y.shape[1] != z.shape[0]:
        raise ValidationError(f"shape mismatch: Y {y.shape}, Z {z.shape}")
    m = (1 << bits) - 1
    c = y.shape[1]
    s = y @ z
    return (2 * s + c * m) // (2 * c * m)


def _check_shapes(y: np.ndarray, z: np.ndarray, cfg: AccelConfig, plan: WavelengthPlan) -> None:
    if plan.d != cfg.d:
        raise ValidationError(f"plan has {plan.d} lines but config d = {cfg.d}")
    if y.shape[-1] != plan.d or z.shape[-1] != plan.d:
        raise ValidationError(
            f"operands use {y.shape[-1]}/{z.shape[-1]} lines, plan has {plan.d}")


def _adc(cfg: AccelConfig, full_scale: float) -> AdcModel:
    return AdcModel(bits=cfg.bits, full_scale=full_scale, sample_rate=cfg.f_clk)


def _quantize_with_noise(v: np.ndarray, cfg: AccelConfig, g: ChainGains, fs: float,
                         flags: SimFlags, streams) -> tuple[np.ndarray, np.ndarray, int, np.ndarray]:
    """Add receiver noise (if enabled), quantise, count clipped samples."""
    sigma = np.zeros_like(v)
    if flags.noise:
        i_pd = v / (g.transimpedance * g.s2d_gain)
        sigma = np.sqrt(oe_noise_power(cfg.tia, cfg.amp, np.maximum(i_pd, 0.0)))
        noise = np.empty_like(v)
        for b, stream in enumerate(streams):
            noise[b] = noise_rng(flags.seed, stream).standard_normal(v.shape[1:])
        v = v + sigma * noise
    adc = _adc(cfg, fs)
    saturated = int(np.count_nonzero((v < -0.5 * adc.lsb) | (v >= fs + 0.5 * adc.lsb)))
    return adc_quantize(v, adc), v, saturated, sigma


def _ring_resonances(opt: LineOptics, y: np.ndarray) -> np.ndarray:
    # y: (..., r, c) codes -> biased resonance of each weight ring
    lines = np.arange(opt.lambdas.size)
    return opt.lambdas + opt.shift_rate * opt.v_table[lines, y]


def mvm_simulate_batch(Ys, Zs, cfg: AccelConfig, plan: WavelengthPlan,
                       flags: SimFlags = SimFlags(), streams=None) -> MvmResult:
    """Run many independent MVMs through the compiled chain kernel.

    Parameters
    ----------
    Ys : array_like, shape (batch, r, c)
    Zs : array_like, shape (batch, c)
    streams : sequence of int, optional
        Noise stream id per case; defaults to ``0..batch-1``.

    Returns
    -------
    MvmResult
        Codes and ADC-input voltages of shape (batch, r); no trace.
    """
    from ._kernels import get_backend

    y = as_codes(Ys, cfg.bits, "Y")
    z = as_codes(Zs, cfg.bits, "Z")
    if y.ndim != 3 or z.ndim != 2 or y.shape[0] != z.shape[0]:
        raise ValidationError(f"batch shapes mismatch: Y {y.shape}, Z {z.shape}")
    _check_shapes(y, z, cfg, plan)
    nb, r, c = y.shape
    opt = line_optics(cfg, plan, flags.nonlinearity, flags.absorption_weighting)
    lines = np.arange(c)
    ez = opt.e_table[lines, z]
    ey = opt.e_table[lines, y]
    res = _ring_resonances(opt, y) if flags.crosstalk else np.zeros((nb, r, c))
    out = get_backend(flags.backend).mvm_chain(
        ez, ey, opt.weights, res, opt.lambdas, opt.hwhm, opt.depth, flags.crosstalk)
    g = chain_gains(cfg, r)
    fs = mvm_full_scale(cfg, r, c)
    v = out * fs
    streams = range(nb) if streams is None else streams
    codes, v_noisy, sat, _ = _quantize_with_noise(v, cfg, g, fs, flags, streams)
    return MvmResult(codes=codes, analog=v_noisy, saturated=sat)


def mvm_simulate(Y, Z, cfg: AccelConfig, plan: WavelengthPlan,
                 flags: SimFlags = SimFlags(), stream: int = 0) -> MvmResult:
    """Simulate one MVM and record the full per-stage trace.

    The optical path is evaluated stage by stage in watts.  The codes are
    identical to :func:`mvm_simulate_batch` on the same inputs, and in
    ideal mode to :func:`mvm_oracle`.
    """
    y = as_codes(Y, cfg.bits, "Y")
    z = as_codes(Z, cfg.bits, "Z")
    if y.ndim != 2 or z.ndim != 1:
        raise ValidationError("Y must be a matrix and Z a vector")
    _check_shapes(y, z, cfg, plan)
    r, c = y.shape
    opt = line_optics(cfg, plan, flags.nonlinearity, flags.absorption_weighting)
    g = chain_gains(cfg, r)
    lines = np.arange(c)

    p_laser = np.full(c, g.p_lambda)
    after_v = p_laser * g.eta_mrm * opt.e_table[lines, z]
    after_mux = after_v.copy()
    after_ops = after_mux * g.splitter

    # Ring k of row i modulates line k and, with crosstalk, dims the others.
    ey = opt.e_table[lines, y]
    res = _ring_resonances(opt, y)
    stages = np.empty((r, c, c))
    power = np.broadcast_to(after_ops, (r, c)).copy()
    for k in range(c):
        if flags.crosstalk:
            x = (opt.lambdas[None, :] - res[:, k, None]) / opt.hwhm[k]
            tail = 1.0 - opt.depth[k] / (1.0 + x * x)
        else:
            tail = np.ones((r, c))
        tail[:, k] = g.eta_mrm * ey[:, k]
        power = power * tail
        stages[:, k, :] = power

    absorbed = power * g.eta_rtr * opt.weights
    current = g.responsivity * absorbed.sum(axis=1)
    tia_out = current * g.transimpedance
    v = tia_out * g.s2d_gain
    fs = mvm_full_scale(cfg, r, c)
    codes, v_noisy, sat, sigma = _quantize_with_noise(v[None], cfg, g, fs, flags, [stream])
    trace = ChainTrace(
        p_laser=p_laser, after_vmrm=after_v, after_omux=after_mux, after_ops=after_ops,
        after_mmrm=stages, absorbed=absorbed, photocurrent=current, tia_out=tia_out,
        adc_in=v_noisy[0], codes=codes[0], full_scale=fs, noise_sigma=sigma[0],
    )
    return MvmResult(codes=codes[0], analog=v_noisy[0], saturated=sat, trace=trace)


@dataclass(frozen=True)
class ErrorStats:
    max_abs_lsb: float
    rms_lsb: float
    saturation_rate: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def error_stats(sim_codes, oracle_codes, bits: int = 4) -> ErrorStats:
    """Code error in LSB; saturation is the share of outputs at the top code."""
    s = np.asarray(sim_codes, dtype=np.int64)
    o = np.asarray(oracle_codes, dtype=np.int64)
    if s.shape != o.shape:
        raise ValidationError(f"length mismatch: {s.shape} vs {o.shape}")
    if s.size == 0:
        return ErrorStats(0.0, 0.0, 0.0)
    err = (s - o).astype(float)
    top = (1 << bits) - 1
    return ErrorStats(
        max_abs_lsb=float(np.abs(err).max()),
        rms_lsb=float(math.sqrt(np.mean(err * err))),
        saturation_rate=float(np.mean((s == top) & (o < top))),
    )
