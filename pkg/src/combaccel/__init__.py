"""Design calculator and bit-true simulator for a comb-laser photonic-electronic
linear-algebra accelerator.

Submodules
----------
resonator   wavelength plan, ring and racetrack geometry
eo          modulator transfer, DAC calibration, settling, trimming
frontend    TIA, S2D amplifier and ADC models with the noise budget
power       power, area and performance table
mvm         one MVM through the optical chain, and its oracle
mmm         MMM scheduling and the all-optical D-MMM
attention   attention heads on the D-MMM engine
cli         ``combaccel`` command line
"""

from .attention import (
    AttentionWeights, ExactBackend, LutSizing, OracleBackend, SimulatedBackend, attention_head,
    fidelity_report, multihead,
)
from .config import AccelConfig, load_config
from .errors import (
    CalibrationError, CombAccelError, DispersionError, PlanError, SolverError, TrimError,
    ValidationError,
)
from .mmm import MmmStrategy, dmmm_oracle, dmmm_simulate, mmm
from .mvm import SimFlags, error_stats, mvm_oracle, mvm_simulate, mvm_simulate_batch
from .power import perf_report
from .resonator import design, plan_wavelengths

__version__ = "0.1.0"

__all__ = [
    "AccelConfig", "AttentionWeights", "ExactBackend", "LutSizing", "OracleBackend",
    "SimulatedBackend", "attention_head", "fidelity_report", "multihead", "CalibrationError", "CombAccelError", "DispersionError", "MmmStrategy",
    "PlanError", "SimFlags", "SolverError", "TrimError", "ValidationError", "design",
    "dmmm_oracle", "dmmm_simulate", "error_stats", "load_config", "mmm", "mvm_oracle",
    "mvm_simulate", "mvm_simulate_batch", "perf_report", "plan_wavelengths",
]
