"""Accelerator configuration and unit-aware config-file loading.

Config files are JSON objects whose keys are :class:`AccelConfig` fields.
The nested models use sub-objects under ``"tia"`` and ``"amp"``.
Dimensioned values must be strings that carry their unit, e.g.
``"2 kOhm"``, ``"670 uW"``, ``"0.07 dB"`` or ``"1000 um^2"``.  Plain numbers
are accepted only for dimensionless fields.  Unknown keys are rejected.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .errors import ValidationError
from .frontend import AmpModel, TiaModel


@dataclass(frozen=True)
class AccelConfig:
    """Every electrical, optical and layout constant of one MVM core.

    Powers in W, resistances in ohm, rates in Hz, areas in um^2.  The two
    area overheads and ``per_row_overhead`` are least-squares fits to the
    published performance table (see :mod:`combaccel.power`).

    ``hs_dac_static=None`` evaluates the HS-DAC divider formula;
    ``r2r_static=None`` evaluates the R-2R ladder formula.  The R-2R default
    is the published 7.2 uW per DAC, which the ladder formula does not
    reproduce (it gives about 0.45 uW for a 5 Mohm unit).
    """

    d: int = 32
    bits: int = 4
    f_clk: float = 2.0e9
    vddh: float = 2.4
    vdd: float = 1.2
    r_hs: float = 2.0e3
    c_dac_load: float = 30e-15
    r_u: float = 5.0e6
    dr_eo: float = 670e-6
    responsivity: float = 0.5
    splitter_loss_db: float = 0.07
    mrm_dr_db: float = 2.5
    rtr_dr_db: float = 2.5
    heater_unit: float = 2.4e-3
    q_factor: float = 1.0e4
    shift_rate: float = 0.04
    hs_dac_static: float | None = None
    hs_dac_dyn: float = 0.2e-3
    hs_dac_dyn_rate: float = 2.0e9
    r2r_static: float | None = 7.2e-6
    tia_power: float = 0.1e-3
    s2d_power: float = 0.75e-3
    adc_power: float = 1.2e-3
    per_row_overhead: float = 0.6358e-3
    hs_dac_tile: float = 1000.0
    r2r_tile: float = 200.0
    mrm_tile: float = 400.0
    rtr_pd_tile: float = 9600.0
    ops_stage_length: float = 35.0
    ops_row_pitch: float = 20.0
    per_cell_overhead: float = 299.98
    per_row_fixed: float = -7737.5
    s2d_gain: float = 3.0
    tia: TiaModel = field(default_factory=TiaModel)
    amp: AmpModel = field(default_factory=AmpModel)

    def __post_init__(self) -> None:
        if self.d < 1 or self.bits < 1:
            raise ValidationError("d and bits must be >= 1")
        positive = ("f_clk", "vddh", "vdd", "r_hs", "c_dac_load", "r_u", "dr_eo",
                    "responsivity", "heater_unit", "q_factor", "shift_rate", "s2d_gain")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        for name in ("splitter_loss_db", "mrm_dr_db", "rtr_dr_db", "hs_dac_dyn", "tia_power",
                     "s2d_power", "adc_power", "per_row_overhead", "hs_dac_tile", "r2r_tile",
                     "mrm_tile", "rtr_pd_tile", "ops_stage_length", "ops_row_pitch",
                     "per_cell_overhead"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        for name in ("hs_dac_static", "r2r_static"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValidationError(f"{name} must be non-negative")

    def with_d(self, d: int) -> "AccelConfig":
        return replace(self, d=d)

    @property
    def max_code(self) -> int:
        return (1 << self.bits) - 1

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Units

_PREFIX = {"f": 1e-15, "p": 1e-12, "n": 1e-9, "u": 1e-6, "µ": 1e-6, "μ": 1e-6,
           "m": 1e-3, "": 1.0, "k": 1e3, "M": 1e6, "G": 1e9, "T": 1e12}
_BASE = {"Hz": "Hz", "Ohm": "ohm", "ohm": "ohm", "Ω": "ohm", "V": "V", "A": "A", "W": "W",
         "F": "F", "s": "s", "K": "K", "A/V": "A/V", "S": "A/V", "A/W": "A/W", "m": "m"}
_AREA = {"um^2": 1.0, "µm^2": 1.0, "mm^2": 1.0e6}

# Expected dimension per field; "1" means dimensionless.
_DIMS: dict[str, str] = {
    "d": "1", "bits": "1", "f_clk": "Hz", "vddh": "V", "vdd": "V", "r_hs": "ohm",
    "c_dac_load": "F", "r_u": "ohm", "dr_eo": "W", "responsivity": "A/W",
    "splitter_loss_db": "dB", "mrm_dr_db": "dB", "rtr_dr_db": "dB", "heater_unit": "W",
    "q_factor": "1", "shift_rate": "nm/V", "hs_dac_static": "W", "hs_dac_dyn": "W",
    "hs_dac_dyn_rate": "Hz", "r2r_static": "W", "tia_power": "W", "s2d_power": "W",
    "adc_power": "W", "per_row_overhead": "W", "hs_dac_tile": "um^2", "r2r_tile": "um^2",
    "mrm_tile": "um^2", "rtr_pd_tile": "um^2", "ops_stage_length": "um",
    "ops_row_pitch": "um", "per_cell_overhead": "um^2", "per_row_fixed": "um^2",
    "s2d_gain": "1",
}
_TIA_DIMS = {"g_m": "A/V", "r_f": "ohm", "c_tia": "F", "gamma": "1", "temperature": "K"}
_AMP_DIMS = {"g_m_amp": "A/V", "r_amp": "ohm", "c_amp": "F", "g_m_ind": "A/V", "bw_boost": "1"}

_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S*)\s*$")


def parse_quantity(text: str, dim: str) -> float:
    """Parse ``"<number> <unit>"`` into SI (areas: um^2, lengths: um).

    Parameters
    ----------
    text : str
        Value with its unit, e.g. ``"1.65 kOhm"``.
    dim : str
        Expected dimension, e.g. ``"ohm"``, ``"dB"``, ``"um^2"``, ``"nm/V"``.

    Raises
    ------
    ValidationError
        Malformed text or a unit of the wrong dimension.
    """
    m = _QTY.match(text)
    if not m:
        raise ValidationError(f"cannot parse quantity {text!r}")
    value = float(m.group(1))
    unit = m.group(2)
    if dim == "1":
        if unit:
            raise ValidationError(f"{text!r} should be dimensionless")
        return value
    if dim == "dB":
        if unit != "dB":
            raise ValidationError(f"{text!r} should be in dB")
        return value
    if dim == "um^2":
        if unit not in _AREA:
            raise ValidationError(f"{text!r} should be an area in um^2 or mm^2")
        return value * _AREA[unit]
    if dim == "um":
        return _scaled(value, unit, "m", text) * 1e6
    if dim == "nm/V":
        if not unit.endswith("/V"):
            raise ValidationError(f"{text!r} should be in nm/V")
        return _scaled(value, unit[:-2], "m", text) * 1e9
    return _scaled(value, unit, dim, text)


def _scaled(value: float, unit: str, dim: str, text: str) -> float:
    for base, base_dim in sorted(_BASE.items(), key=lambda kv: -len(kv[0])):
        if unit.endswith(base) and base_dim == dim:
            prefix = unit[: len(unit) - len(base)]
            if prefix in _PREFIX:
                return value * _PREFIX[prefix]
    raise ValidationError(f"{text!r}: unit {unit!r} is not a {dim} unit")


def _convert(key: str, raw: Any, dims: Mapping[str, str], where: str) -> Any:
    if key not in dims:
        raise ValidationError(f"unknown config key {where}{key!r}")
    dim = dims[key]
    if raw is None and key in ("hs_dac_static", "r2r_static"):
        return None
    if isinstance(raw, bool):
        raise ValidationError(f"{where}{key}: boolean is not a quantity")
    if isinstance(raw, (int, float)):
        if dim != "1":
            raise ValidationError(f"{where}{key}: give a unit, e.g. \"{raw} {dim}\"")
        return int(raw) if key in ("d", "bits") else float(raw)
    if isinstance(raw, str):
        value = parse_quantity(raw, dim)
        if key in ("d", "bits"):
            if value != int(value):
                raise ValidationError(f"{key} must be an integer")
            return int(value)
        return value
    raise ValidationError(f"{where}{key}: unsupported value {raw!r}")


def config_from_mapping(doc: Mapping[str, Any], base: AccelConfig | None = None) -> AccelConfig:
    """Overlay a parsed config document on ``base`` (defaults if omitted)."""
    base = base or AccelConfig()
    if not isinstance(doc, Mapping):
        raise ValidationError("config must be a JSON object")
    kwargs: dict[str, Any] = {}
    for key, raw in doc.items():
        if key == "tia":
            kwargs["tia"] = _sub_model(TiaModel, base.tia, raw, _TIA_DIMS, "tia.")
        elif key == "amp":
            kwargs["amp"] = _sub_model(AmpModel, base.amp, raw, _AMP_DIMS, "amp.")
        else:
            kwargs[key] = _convert(key, raw, _DIMS, "")
    return replace(base, **kwargs)


def _sub_model(cls, base, raw, dims, where):
    if not isinstance(raw, Mapping):
        raise ValidationError(f"{where[:-1]} must be an object")
    return replace(base, **{k: _convert(k, v, dims, where) for k, v in raw.items()})


def load_config(path: str | Path | None) -> AccelConfig:
    """Read a JSON config file; ``None`` gives the defaults."""
    if path is None:
        return AccelConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ValidationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_mapping(doc)


CONFIG_KEYS = tuple(f.name for f in fields(AccelConfig))
