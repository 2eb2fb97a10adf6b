"""Micro-ring E/O transfer, linearizing DAC code map and settling checks.

The modulator is an all-pass ring whose notch moves to longer wavelengths
under reverse bias.  With the laser parked on the zero-bias resonance,
transmitted power rises with bias in a sigmoid-like way.  An extra DAC bit
gives twice as many levels, and a static map picks the subset closest to
a straight line.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .errors import CalibrationError, TrimError, ValidationError

V_MAX = 2.4


@dataclass(frozen=True)
class MrmTransferModel:
    """Lorentzian notch with a bias-dependent centre.

    Parameters
    ----------
    q_factor : float
        Loaded quality factor; HWHM is ``lambda_res0 / (2 q)``.
    lambda_res0 : float
        Resonance at zero bias, nm.
    shift_rate : float
        Red shift per volt of reverse bias, nm/V.
    t_min : float
        Power transmission at the notch centre, relative to ``insertion_gain``.
    insertion_gain : float
        Off-resonance through gain.
    """

    q_factor: float = 1.0e4
    lambda_res0: float = 1534.5
    shift_rate: float = 0.04
    t_min: float = 0.43948
    insertion_gain: float = 1.0

    def __post_init__(self) -> None:
        if self.q_factor <= 0 or self.lambda_res0 <= 0:
            raise ValidationError("q_factor and lambda_res0 must be positive")
        if not 0.0 < self.t_min < 1.0:
            raise ValidationError(f"t_min must lie in (0, 1), got {self.t_min}")
        if not 0.0 < self.insertion_gain <= 1.0:
            raise ValidationError("insertion_gain must lie in (0, 1]")

    @property
    def hwhm(self) -> float:
        return self.lambda_res0 / (2.0 * self.q_factor)

    def resonance(self, v):
        return self.lambda_res0 + self.shift_rate * np.asarray(v, dtype=float)

    def at(self, lambda_res0: float) -> "MrmTransferModel":
        """Same ring retuned to a new zero-bias resonance."""
        return replace(self, lambda_res0=float(lambda_res0))


def transmission(model: MrmTransferModel, lam, v):
    """Linear power gain at wavelength ``lam`` (nm) and bias ``v`` (V)."""
    x = (np.asarray(lam, dtype=float) - model.resonance(v)) / model.hwhm
    out = model.insertion_gain * (1.0 - (1.0 - model.t_min) / (1.0 + x * x))
    return out if np.ndim(out) else float(out)


def fit_t_min(
    q_factor: float = 1.0e4,
    lambda_res0: float = 1534.5,
    shift_rate: float = 0.04,
    v_max: float = V_MAX,
    dr_db: float = 2.5,
) -> float:
    """Notch depth making a 0..v_max sweep at the 0 V line span ``dr_db``.

    With the laser at the zero-bias resonance the gain ratio is
    ``g(v_max)/g(0) = (1 - k/(1+x^2)) / t_min`` with ``k = 1 - t_min``, which is
    solved in closed form for ``t_min``.
    """
    ratio = 10.0 ** (dr_db / 10.0)
    x = shift_rate * v_max / (lambda_res0 / (2.0 * q_factor))
    f = 1.0 / (1.0 + x * x)
    # g(vmax) = 1 - (1-t) f = ratio * t  ->  t = (1 - f) / (ratio - f)
    t = (1.0 - f) / (ratio - f)
    if not 0.0 < t < 1.0:
        raise CalibrationError(f"a {dr_db} dB span is unreachable with the given Q and shift rate")
    return float(t)


def reference_mrm_model(lambda_res0: float = 1534.5, q_factor: float = 1.0e4, shift_rate: float = 0.04,
               dr_db: float = 2.5, v_max: float = V_MAX) -> MrmTransferModel:
    """Ring matching the published transfer curve: Q=1e4, 0.04 nm/V, 2.5 dB span."""
    t = fit_t_min(q_factor, lambda_res0, shift_rate, v_max, dr_db)
    return MrmTransferModel(q_factor=q_factor, lambda_res0=lambda_res0,
                            shift_rate=shift_rate, t_min=t)


def dac_level(code, bits: int, vddh: float = V_MAX):
    """Uniform divider level ``code * vddh / (2^bits - 1)``."""
    codes = np.asarray(code)
    top = (1 << bits) - 1
    if np.any(codes < 0) or np.any(codes > top):
        raise ValidationError(f"DAC code out of range [0, {top}]")
    out = codes * (vddh / top)
    return out if np.ndim(out) else float(out)


def dnl_inl(gains) -> tuple[np.ndarray, np.ndarray]:
    """Differential and integral nonlinearity in LSB.

    ``LSB = (g[-1] - g[0]) / (n - 1)``; DNL has n-1 entries, INL has n.
    """
    g = np.asarray(gains, dtype=float)
    if g.ndim != 1 or g.size < 2:
        raise ValidationError("need at least two gain samples")
    lsb = (g[-1] - g[0]) / (g.size - 1)
    if lsb == 0:
        raise ValidationError("flat transfer curve has no LSB")
    dnl = np.diff(g) / lsb - 1.0
    inl = (g - g[0]) / lsb - np.arange(g.size)
    return dnl, inl


@dataclass(frozen=True)
class CalibrationMap:
    """Static map from B-bit codes to (B+1)-bit DAC codes.

    Attributes
    ----------
    bits : int
        Input resolution B.
    mapping : tuple of int
        Extended DAC code for each input code, strictly increasing.
    gains : tuple of float
        Transmission reached by each mapped code.
    """

    bits: int
    mapping: tuple[int, ...]
    gains: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        m = np.asarray(self.mapping)
        if m.size != 1 << self.bits:
            raise ValidationError(f"mapping must have {1 << self.bits} entries")
        if np.any(m < 0) or np.any(m >= 1 << (self.bits + 1)):
            raise ValidationError("mapping entries must be extended DAC codes")
        if np.any(np.diff(m) <= 0):
            raise ValidationError("mapping must be strictly increasing")

    def to_dict(self) -> dict:
        return {"bits": self.bits, "mapping": list(self.mapping)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def identity(cls, bits: int) -> "CalibrationMap":
        """Map a perfectly linear curve would produce: about every second code."""
        return cls(bits=bits, mapping=tuple(_identity_codes(bits)))


def _identity_codes(bits: int) -> list[int]:
    # 2^B points spread over 0..2^(B+1)-1 with both ends pinned.
    n = 1 << bits
    top = (1 << (bits + 1)) - 1
    return [int(math.floor(k * top / (n - 1) + 0.5)) for k in range(n)]


def extended_gains(model: MrmTransferModel, lambda_laser: float, bits: int,
                   vddh: float = V_MAX) -> np.ndarray:
    """Transmission at every (B+1)-bit DAC level."""
    levels = dac_level(np.arange(1 << (bits + 1)), bits + 1, vddh)
    return np.asarray(transmission(model, lambda_laser, levels), dtype=float)


def select_codes(gains: Sequence[float], n_select: int) -> list[int]:
    """Pick ``n_select`` increasing indices of ``gains`` closest to a linear ramp.

    Each ramp target takes its nearest achievable level.  When two targets
    would share a level, an exact minimax search over strictly increasing
    selections is run instead, and among the minimax-optimal selections the
    one with the smallest total distance is returned.

    Raises
    ------
    CalibrationError
        ``gains`` is not monotone, or has fewer than ``n_select`` entries.
    """
    g = np.asarray(gains, dtype=float)
    if g.size < n_select:
        raise CalibrationError("fewer achievable levels than codes")
    steps = np.diff(g)
    if not (np.all(steps > 0) or np.all(steps < 0)):
        raise CalibrationError("achievable gain set is not strictly monotone")
    targets = np.linspace(g[0], g[-1], n_select)
    nearest = np.abs(g[None, :] - targets[:, None]).argmin(axis=1)
    if np.all(np.diff(nearest) > 0):
        return [int(i) for i in nearest]
    from ._kernels import get_backend

    cost = np.abs(g[None, :] - targets[:, None])
    return [int(i) for i in get_backend().minimax_select(cost)]


def select_codes_exhaustive(gains: Sequence[float], n_select: int) -> list[int]:
    """Brute-force twin of :func:`select_codes` for small level counts."""
    g = np.asarray(gains, dtype=float)
    targets = np.linspace(g[0], g[-1], n_select)
    best = None
    for combo in combinations(range(g.size), n_select):
        err = np.abs(g[list(combo)] - targets)
        key = (err.max(), err.sum())
        if best is None or key < best[0]:
            best = (key, combo)
    return list(best[1])


def build_calibration(model: MrmTransferModel, lambda_laser: float, bits: int = 4,
                      vddh: float = V_MAX) -> CalibrationMap:
    """Map each B-bit code onto the (B+1)-bit level nearest the linear ramp."""
    g = extended_gains(model, lambda_laser, bits, vddh)
    picks = select_codes(g, 1 << bits)
    return CalibrationMap(bits=bits, mapping=tuple(picks), gains=tuple(float(x) for x in g[picks]))


def calibration_from_gains(gains: Sequence[float], bits: int) -> CalibrationMap:
    """Calibration map for an arbitrary sampled extended transfer curve."""
    g = np.asarray(gains, dtype=float)
    if g.size != 1 << (bits + 1):
        raise ValidationError(f"need {1 << (bits + 1)} extended gains")
    picks = select_codes(g, 1 << bits)
    return CalibrationMap(bits=bits, mapping=tuple(picks), gains=tuple(float(x) for x in g[picks]))


def uncalibrated_gains(model: MrmTransferModel, lambda_laser: float, bits: int = 4,
                       vddh: float = V_MAX) -> np.ndarray:
    """Transmission at the plain B-bit DAC levels."""
    levels = dac_level(np.arange(1 << bits), bits, vddh)
    return np.asarray(transmission(model, lambda_laser, levels), dtype=float)


NONLINEARITY_MODES = ("ideal", "uncalibrated", "calibrated")


def code_voltages(mode: str, model: MrmTransferModel, lambda_laser: float, bits: int,
                  vddh: float = V_MAX) -> np.ndarray:
    """Bias applied for each B-bit code under a nonlinearity mode."""
    if mode == "calibrated":
        cal = build_calibration(model, lambda_laser, bits, vddh)
        return np.asarray(dac_level(np.asarray(cal.mapping), bits + 1, vddh), dtype=float)
    if mode in ("ideal", "uncalibrated"):
        return np.asarray(dac_level(np.arange(1 << bits), bits, vddh), dtype=float)
    raise ValidationError(f"unknown nonlinearity mode {mode!r}")


def eo_values(mode: str, model: MrmTransferModel, lambda_laser: float, bits: int,
              vddh: float = V_MAX) -> np.ndarray:
    """Normalised modulation value per code, 0 at code 0 and 1 at full scale.

    ``e_k = (g_k - g_0) / (g_top - g_0)``: the transmitted power above the
    code-0 floor.  ``ideal`` is the exact ramp ``k / (2^B - 1)``.
    """
    n = 1 << bits
    if mode == "ideal":
        return np.arange(n) / (n - 1)
    v = code_voltages(mode, model, lambda_laser, bits, vddh)
    g = np.asarray(transmission(model, lambda_laser, v), dtype=float)
    return (g - g[0]) / (g[-1] - g[0])


@dataclass(frozen=True)
class DacTiming:
    """RC settling problem of one HS-DAC driving a ring's junction."""

    r_hs: float = 2.0e3
    c_load: float = 30e-15
    settle_budget: float = 58e-12
    resolution_bits: int = 4


LOGIC_LATENCY_S = 100e-12


def check_settling(t: DacTiming, clock_hz: float) -> dict:
    """Does the DAC settle to LSB/2 within one clock period?

    Settling to ``2^-(B+1)`` takes ``RC * ln(2^(B+1))``; the push-pull logic
    adds a fixed 100 ps.
    """
    if clock_hz <= 0 or t.c_load <= 0 or t.r_hs < 0:
        raise ValidationError("timing parameters must be positive")
    rc = t.r_hs * t.c_load
    settle = rc * (t.resolution_bits + 1) * math.log(2.0)
    period = 1.0 / clock_hz
    margin = period - (settle + LOGIC_LATENCY_S)
    return {"ok": bool(margin >= 0.0), "rc": rc, "settle_time": settle, "margin": margin}


def quantized_readback(model_gain: Callable[[float], float], bits: int = 8,
                       full_scale: float = 1.0) -> Callable[[float], int]:
    """Wrap a gain function as an ADC-style integer readback."""
    top = (1 << bits) - 1

    def read(lam: float) -> int:
        g = model_gain(lam)
        return int(min(max(math.floor(g / full_scale * top + 0.5), 0), top))

    return read


def trim_resonance(
    model: MrmTransferModel,
    lambda_target: float,
    readback: Callable[[MrmTransferModel, float], int] | None = None,
    capture: float = 0.5,
    tol: float = 1e-4,
    probe: float | None = None,
    max_iter: int = 64,
) -> tuple[MrmTransferModel, int]:
    """Move the zero-bias resonance onto ``lambda_target`` by bisection.

    The loop never reads the true resonance.  For a trial tuning it probes
    the two wavelengths ``lambda_target -/+ probe`` through ``readback``; the
    notch is symmetric, so the sign of the difference says on which side
    of the target the resonance sits.

    Parameters
    ----------
    model : MrmTransferModel
        Ring before trimming.
    lambda_target : float
        Desired zero-bias resonance, nm.
    readback : callable, optional
        ``readback(trial_model, lam) -> int`` quantised power reading.  The
        default is a 12-bit ADC on the ideal transmission.
    capture : float
        Half-width of the coarse range the heater guarantees, nm.
    tol : float
        Final accuracy, nm.
    probe : float, optional
        Probe offset; defaults to one HWHM.

    Returns
    -------
    (MrmTransferModel, int)
        Trimmed ring and the number of bisection steps taken.

    Raises
    ------
    ValidationError
        Target outside the capture range.
    TrimError
        No convergence within ``max_iter`` steps.
    """
    if readback is None:
        def readback(m: MrmTransferModel, lam: float) -> int:
            g = transmission(m, lam, 0.0)
            return int(math.floor(g / m.insertion_gain * 4095 + 0.5))

    start = model.lambda_res0
    if abs(lambda_target - start) <= tol:
        return model, 0
    if abs(lambda_target - start) > capture:
        raise ValidationError(
            f"target {lambda_target} nm is {abs(lambda_target - start):.3f} nm away, "
            f"beyond the {capture} nm capture range"
        )
    a = model.hwhm if probe is None else probe
    lo, hi = start - capture, start + capture
    for step in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        trial = model.at(mid)
        diff = readback(trial, lambda_target - a) - readback(trial, lambda_target + a)
        if diff == 0:
            # Symmetric readings: centred to within the readback resolution.
            return trial, step
        # Resonance right of target -> the blue probe sits further from the notch.
        if diff > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol:
            return model.at(0.5 * (lo + hi)), step
    raise TrimError(f"trimming did not converge in {max_iter} steps")
