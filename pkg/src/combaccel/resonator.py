"""Wavelength-comb and resonator geometry design.

One racetrack photodetector (RTR-PD) per row must be resonant at every comb
line, while each micro-ring modulator (MRM) must address exactly one line.
The racetrack perimeter fixes the comb; the ring radii follow from it.

Lengths: wavelengths in nm, geometry in um.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DispersionError, PlanError, ValidationError

NM_PER_UM = 1.0e3

FIXED_POINT_TOL_NM = 1e-6
FIXED_POINT_MAX_ITER = 100

# Rows of the published design-tradeoff table, (lambda nm, n_eff, n_g).
# Only range endpoints are printed, so these are the endpoint pairs.
TABLE_I_INDEX_SAMPLES: tuple[tuple[float, float, float], ...] = (
    (1519.0, 3.76, 5.06),
    (1534.5, 3.74, 5.02),
    (1535.0, 3.74, 5.02),
    (1550.0, 3.73, 4.98),
)


@dataclass(frozen=True)
class DispersionModel:
    """Effective index as a polynomial in wavelength.

    ``n_eff(lam) = a0 + a1*lam + a2*lam**2`` with ``lam`` in nm.  The group
    index follows as ``n_g = n_eff - lam*dn_eff/dlam = a0 - a2*lam**2``.
    ``a2 = 0`` is the plain affine model.

    Parameters
    ----------
    a0, a1, a2 : float
        Polynomial coefficients (1, 1/nm, 1/nm^2).
    band : tuple of float
        Wavelength interval (nm) over which the model is trusted.
    """

    a0: float
    a1: float
    a2: float = 0.0
    band: tuple[float, float] = (1500.0, 1600.0)

    def __post_init__(self) -> None:
        lo, hi = self.band
        if not (0.0 < lo < hi):
            raise ValidationError(f"invalid dispersion band {self.band}")
        # dn/dlam is affine in lam, so checking the band edges suffices.
        for lam in (lo, hi):
            if self.dn_dlambda(lam) >= 0.0:
                raise DispersionError(
                    f"dn_eff/dlambda = {self.dn_dlambda(lam):.3e} /nm at {lam} nm; "
                    "group index must exceed effective index"
                )

    def n_eff(self, lam):
        """Effective index at ``lam`` (nm)."""
        lam = np.asarray(lam, dtype=float)
        out = self.a0 + self.a1 * lam + self.a2 * lam * lam
        return out if out.ndim else float(out)

    def dn_dlambda(self, lam):
        """Derivative of the effective index, 1/nm."""
        lam = np.asarray(lam, dtype=float)
        out = self.a1 + 2.0 * self.a2 * lam
        return out if out.ndim else float(out)

    def n_g(self, lam):
        """Group index ``n_eff - lam * dn_eff/dlam``."""
        lam = np.asarray(lam, dtype=float)
        out = self.a0 - self.a2 * lam * lam
        return out if out.ndim else float(out)

    def contains(self, lam: float, slack: float = 0.0) -> bool:
        lo, hi = self.band
        return lo - slack <= lam <= hi + slack


def calibrate_dispersion(
    samples: Sequence[tuple[float, float, float]],
    degree: int = 1,
    band_margin: float = 10.0,
) -> DispersionModel:
    """Fit a dispersion model to ``(lambda_nm, n_eff, n_g)`` samples.

    Both columns enter one linear least-squares problem: every sample
    contributes ``n_eff(lam) = n_eff_i`` and ``n_g(lam) = n_g_i``, which are
    linear in the coefficients.  With two samples and ``degree=1`` the
    slope is pinned mostly by the group-index column, since the
    effective-index endpoints alone imply a far too small dispersion.

    Parameters
    ----------
    samples : sequence of (float, float, float)
        Wavelength (nm), effective index, group index.
    degree : {1, 2}
        Polynomial degree of ``n_eff``.
    band_margin : float
        Extra nm added on both sides of the sampled range to form the
        model's validity band.

    Raises
    ------
    DispersionError
        Fewer than two distinct wavelengths, or a fit whose group index
        does not exceed its effective index.
    """
    if degree not in (1, 2):
        raise ValidationError(f"degree must be 1 or 2, got {degree}")
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValidationError("samples must be (lambda_nm, n_eff, n_g) triples")
    lam = arr[:, 0]
    if np.unique(lam).size < 2:
        raise DispersionError("need at least two samples at distinct wavelengths")
    if np.any(lam <= 0):
        raise ValidationError("wavelengths must be positive")

    # Columns are scaled by powers of a reference wavelength for conditioning.
    ref = float(lam.mean())
    u = lam / ref
    ones = np.ones_like(u)
    zeros = np.zeros_like(u)
    rows_eff = [ones, u, u * u][: degree + 1]
    rows_grp = [ones, zeros, -u * u][: degree + 1]
    a = np.vstack([np.column_stack(rows_eff), np.column_stack(rows_grp)])
    b = np.concatenate([arr[:, 1], arr[:, 2]])
    coef, *_ = np.linalg.lstsq(a, b, rcond=None)
    coef = np.concatenate([coef, np.zeros(3 - coef.size)])
    a0, a1, a2 = coef[0], coef[1] / ref, coef[2] / ref**2

    band = (float(lam.min()) - band_margin, float(lam.max()) + band_margin)
    return DispersionModel(a0=float(a0), a1=float(a1), a2=float(a2), band=band)


TABLE_I_DISPERSION = calibrate_dispersion(TABLE_I_INDEX_SAMPLES, degree=2)


@dataclass(frozen=True)
class WavelengthPlan:
    """Comb grid shared by one row's racetrack photodetector.

    Attributes
    ----------
    d : int
        Number of comb lines.
    lambdas : tuple of float
        Resonance wavelengths in nm, strictly increasing.
    spacings : tuple of float
        Local isolation spacing (racetrack FSR) at each line, nm.
    rtr_modes : tuple of int
        Racetrack mode number for each line, strictly decreasing by one.
    rtr_perimeter : float
        Racetrack perimeter, um.
    """

    d: int
    lambdas: tuple[float, ...]
    spacings: tuple[float, ...]
    rtr_modes: tuple[int, ...]
    rtr_perimeter: float

    def __post_init__(self) -> None:
        n = self.d
        if not (len(self.lambdas) == len(self.spacings) == len(self.rtr_modes) == n):
            raise ValidationError("plan arrays must all have length d")
        if n > 1:
            if np.any(np.diff(self.lambdas) <= 0):
                raise ValidationError("plan wavelengths must be strictly increasing")
            if np.any(np.diff(self.rtr_modes) != -1):
                raise ValidationError("plan modes must be consecutive and decreasing")

    @property
    def total_band(self) -> float:
        """Sum of all isolation spacings, nm."""
        return float(np.sum(self.spacings))

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "lambdas_nm": list(self.lambdas),
            "spacings_nm": list(self.spacings),
            "modes": list(self.rtr_modes),
            "perimeter_um": self.rtr_perimeter,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "WavelengthPlan":
        return cls(
            d=int(doc["d"]),
            lambdas=tuple(float(x) for x in doc["lambdas_nm"]),
            spacings=tuple(float(x) for x in doc["spacings_nm"]),
            rtr_modes=tuple(int(x) for x in doc["modes"]),
            rtr_perimeter=float(doc["perimeter_um"]),
        )


def _resonant_wavelength(m: int, perimeter_um: float, disp: DispersionModel, start: float) -> float:
    """Solve ``lam = n_eff(lam) * L / m`` by fixed-point iteration."""
    length_nm = perimeter_um * NM_PER_UM
    lam = start
    for _ in range(FIXED_POINT_MAX_ITER):
        nxt = disp.n_eff(lam) * length_nm / m
        if abs(nxt - lam) < FIXED_POINT_TOL_NM:
            return float(nxt)
        lam = nxt
    raise PlanError(
        f"resonance for mode {m} did not converge in {FIXED_POINT_MAX_ITER} iterations"
    )


def plan_wavelengths(
    d: int, lambda_max: float, spacing_target: float, disp: DispersionModel = TABLE_I_DISPERSION
) -> WavelengthPlan:
    """Solve the comb grid for ``d`` lines ending at ``lambda_max``.

    The top mode number is the largest integer whose racetrack FSR at
    ``lambda_max`` still meets ``spacing_target``:
    ``floor(n_eff/n_g * lambda_max / spacing_target)``.  The plan uses the d
    consecutive modes ending there, with the lowest mode placed exactly at
    ``lambda_max`` to fix the perimeter.  The remaining lines follow from the
    resonance condition, and each spacing is the local FSR
    ``lam**2 / (n_g * L)``.

    Parameters
    ----------
    d : int
        Number of comb lines.
    lambda_max : float
        Longest wavelength, nm.
    spacing_target : float
        Minimum isolation between adjacent lines, nm.
    disp : DispersionModel
        Waveguide dispersion.

    Returns
    -------
    WavelengthPlan

    Raises
    ------
    ValidationError
        Non-positive inputs, or ``lambda_max`` outside the dispersion band.
    PlanError
        Non-convergence, non-positive modes, or lines leaving the band.
    """
    if d < 1:
        raise ValidationError(f"d must be >= 1, got {d}")
    if lambda_max <= 0 or spacing_target <= 0:
        raise ValidationError("lambda_max and spacing_target must be positive")
    if not disp.contains(lambda_max):
        raise ValidationError(f"lambda_max {lambda_max} nm outside dispersion band {disp.band}")
    if not disp.contains(lambda_max - d * spacing_target):
        raise ValidationError(
            f"{d} lines at {spacing_target} nm do not fit in the dispersion band {disp.band}"
        )

    n_eff = disp.n_eff(lambda_max)
    n_g = disp.n_g(lambda_max)
    m_top = math.floor(n_eff / n_g * lambda_max / spacing_target + 1e-9)
    m_low = m_top - d + 1
    if m_low < 1:
        raise PlanError(f"spacing {spacing_target} nm leaves no room for {d} positive modes")

    perimeter = lambda_max * m_low / n_eff / NM_PER_UM
    length_nm = perimeter * NM_PER_UM

    lambdas = [float(lambda_max)]
    for m in range(m_low + 1, m_top + 1):
        lam = _resonant_wavelength(m, perimeter, disp, start=lambdas[-1] * (m - 1) / m)
        if not disp.contains(lam):
            raise PlanError(f"mode {m} resonates at {lam:.4f} nm, outside band {disp.band}")
        lambdas.append(lam)
    lambdas.reverse()
    modes = list(range(m_top, m_low - 1, -1))
    if len(set(modes)) != d:
        raise PlanError("duplicate racetrack modes")
    lam_arr = np.asarray(lambdas)
    spacings = lam_arr**2 / (disp.n_g(lam_arr) * length_nm)
    return WavelengthPlan(
        d=d,
        lambdas=tuple(float(x) for x in lam_arr),
        spacings=tuple(float(x) for x in spacings),
        rtr_modes=tuple(modes),
        rtr_perimeter=float(perimeter),
    )


@dataclass(frozen=True)
class MrmGeometry:
    """Micro-ring modulator for one comb line.

    Attributes
    ----------
    radius : float
        Ring radius, um.
    mode : int
        Azimuthal mode number.
    resonance : float
        Resonance wavelength, nm.
    fsr : float
        Free spectral range at the resonance, nm.
    """

    radius: float
    mode: int
    resonance: float
    fsr: float


def solve_mrm_radius(
    lam: float, plan: WavelengthPlan, disp: DispersionModel = TABLE_I_DISPERSION
) -> MrmGeometry:
    """Largest ring resonant at ``lam`` whose FSR covers the whole comb.

    An FSR no smaller than the comb's total band caps the radius at
    ``lam**2 / (2*pi*n_g*band)``.  The largest mode whose radius
    ``lam*m/(2*pi*n_eff)`` stays under the cap is chosen, since bigger rings
    have lower bend loss.

    Raises
    ------
    ValidationError
        ``lam`` is not one of the plan's wavelengths.
    PlanError
        Not even the first mode fits under the cap.
    """
    if not np.any(np.isclose(plan.lambdas, lam, rtol=0.0, atol=1e-9)):
        raise ValidationError(f"{lam} nm is not a wavelength of the plan")
    band = plan.total_band
    n_eff = disp.n_eff(lam)
    n_g = disp.n_g(lam)
    r_max_nm = lam**2 / (n_g * 2.0 * math.pi * band)
    m = math.floor(r_max_nm * 2.0 * math.pi * n_eff / lam + 1e-12)
    if m < 1:
        raise PlanError(f"band {band:.3f} nm too wide for any ring at {lam} nm")
    radius_nm = lam * m / (2.0 * math.pi * n_eff)
    fsr = lam**2 / (n_g * 2.0 * math.pi * radius_nm)
    return MrmGeometry(radius=radius_nm / NM_PER_UM, mode=m, resonance=float(lam), fsr=float(fsr))


@dataclass(frozen=True)
class RtrGeometry:
    """Racetrack with two bends of radius ``bend_radius`` and two straights."""

    bend_radius: float
    straight_length: float
    perimeter: float


def rtr_geometry(perimeter: float, bend_radius: float) -> RtrGeometry:
    """Straight-section length giving ``perimeter`` (um) at ``bend_radius`` (um)."""
    if bend_radius <= 0:
        raise ValidationError("bend radius must be positive")
    straight = (perimeter - 2.0 * math.pi * bend_radius) / 2.0
    if straight <= 1e-12:
        raise PlanError(
            f"perimeter {perimeter} um leaves no straight section at bend radius {bend_radius} um"
        )
    return RtrGeometry(bend_radius=float(bend_radius), straight_length=float(straight),
                       perimeter=float(perimeter))


@dataclass(frozen=True)
class DesignReport:
    """Full grid design: comb plan, one ring per line, and the racetrack."""

    plan: WavelengthPlan
    rings: tuple[MrmGeometry, ...]
    rtr: RtrGeometry
    disp: DispersionModel

    def summary(self) -> dict:
        lam = np.asarray(self.plan.lambdas)
        radii = [g.radius for g in self.rings]
        modes = [g.mode for g in self.rings]
        return {
            "d": self.plan.d,
            "n_eff": [float(self.disp.n_eff(lam.min())), float(self.disp.n_eff(lam.max()))],
            "n_g": [float(self.disp.n_g(lam.min())), float(self.disp.n_g(lam.max()))],
            "rtr_modes": [self.plan.rtr_modes[0], self.plan.rtr_modes[-1]],
            "perimeter_um": self.plan.rtr_perimeter,
            "lambda_nm": [float(lam.min()), float(lam.max())],
            "spacing_nm": [min(self.plan.spacings), max(self.plan.spacings)],
            "mrm_modes": [min(modes), max(modes)],
            "mrm_radius_um": [min(radii), max(radii)],
            "rtr_straight_um": self.rtr.straight_length,
        }

    def to_dict(self) -> dict:
        return {
            "summary": self.summary(),
            "plan": self.plan.to_dict(),
            "rings": [
                {"lambda_nm": g.resonance, "mode": g.mode, "radius_um": g.radius, "fsr_nm": g.fsr}
                for g in self.rings
            ],
            "rtr": {
                "bend_radius_um": self.rtr.bend_radius,
                "straight_um": self.rtr.straight_length,
                "perimeter_um": self.rtr.perimeter,
            },
        }


def design(
    d: int,
    lambda_max: float = 1550.0,
    spacing_target: float = 0.5,
    rtr_bend_radius: float = 5.0,
    disp: DispersionModel = TABLE_I_DISPERSION,
) -> DesignReport:
    """Plan the comb and size every ring and the racetrack."""
    plan = plan_wavelengths(d, lambda_max, spacing_target, disp)
    rings = tuple(solve_mrm_radius(lam, plan, disp) for lam in plan.lambdas)
    rtr = rtr_geometry(plan.rtr_perimeter, rtr_bend_radius)
    return DesignReport(plan=plan, rings=rings, rtr=rtr, disp=disp)


TABLE_I_CSV_FIELDS = (
    "d", "n_eff_min", "n_eff_max", "n_g_min", "n_g_max", "rtr_mode_max", "rtr_mode_min",
    "perimeter_um", "lambda_min_nm", "lambda_max_nm", "spacing_min_nm", "spacing_max_nm",
    "mrm_mode_min", "mrm_mode_max", "mrm_radius_min_um", "mrm_radius_max_um",
)


def table_i_csv(reports: Iterable[DesignReport]) -> str:
    """Table-I-shaped CSV, one row per design."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_I_CSV_FIELDS)
    for rep in reports:
        s = rep.summary()
        writer.writerow([
            s["d"], *_fmt(s["n_eff"]), *_fmt(s["n_g"]), *s["rtr_modes"],
            f"{s['perimeter_um']:.4f}", *_fmt(s["lambda_nm"], 4), *_fmt(s["spacing_nm"], 4),
            *s["mrm_modes"], *_fmt(s["mrm_radius_um"], 4),
        ])
    return buf.getvalue()


def _fmt(values, digits: int = 4) -> list[str]:
    return [f"{v:.{digits}f}" for v in values]
