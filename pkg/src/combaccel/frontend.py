"""Receive chain: transimpedance amplifier, S2D amplifier and flash ADC.

Noise quantities are mean-square voltages at the ADC input.  They are
quoted in "W" in reports, following the usual power-into-1-ohm shorthand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

K_BOLTZMANN = 1.380649e-23
Q_ELECTRON = 1.602176634e-19

# Half-LSB ties round up; the guard absorbs float error at exact ties.
TIE_GUARD_LSB = 1e-9

# Largest photocurrent of the published design, used for the noise budget.
I_PD_MAX = 335e-6


@dataclass(frozen=True)
class TiaModel:
    """Shunt-feedback TIA: transconductor ``g_m`` with feedback ``r_f``."""

    g_m: float = 1.0e-3
    r_f: float = 1.65e3
    c_tia: float = 30e-15
    gamma: float = 2.5
    temperature: float = 300.0

    def __post_init__(self) -> None:
        if min(self.g_m, self.r_f, self.c_tia, self.gamma, self.temperature) <= 0:
            raise ValidationError("TIA parameters must be positive")

    @property
    def r_tia(self) -> float:
        return self.r_f / (1.0 + self.g_m * self.r_f)


@dataclass(frozen=True)
class AmpModel:
    """Single-ended-to-differential gain stage with an active-inductor load.

    ``g_m_ind`` defaults to the value that brings the ADC-input noise budget
    to the published ~11 uW; it is not given explicitly anywhere.
    """

    g_m_amp: float = 5.0e-3
    r_amp: float = 600.0
    c_amp: float = 80e-15
    g_m_ind: float = 23.0e-3
    bw_boost: float = 1.6588

    def __post_init__(self) -> None:
        if min(self.g_m_amp, self.r_amp, self.c_amp, self.bw_boost) <= 0 or self.g_m_ind < 0:
            raise ValidationError("amplifier parameters must be positive")


@dataclass(frozen=True)
class AdcModel:
    """Flash ADC with ``2^bits - 1`` comparators over ``[0, full_scale]``."""

    bits: int = 4
    full_scale: float = 1.0
    sample_rate: float = 2.0e9

    def __post_init__(self) -> None:
        if self.bits < 1 or self.full_scale <= 0 or self.sample_rate <= 0:
            raise ValidationError("invalid ADC parameters")

    @property
    def levels(self) -> int:
        return (1 << self.bits) - 1

    @property
    def lsb(self) -> float:
        return self.full_scale / self.levels


def tia_characteristics(m: TiaModel) -> dict:
    """DC transimpedance, bandwidth and input-referred noise density.

    The noise density keeps the 2*pi factor of the published expression,
    which is needed to land on 6.26 pA/sqrt(Hz).
    """
    r_tia = m.r_tia
    kt = K_BOLTZMANN * m.temperature
    psd = (2.0 * math.pi * kt / m.r_f**2) * (m.gamma / m.g_m + 1.0 / (m.g_m**2 * r_tia))
    return {
        "r_tia": r_tia,
        "dc_transimpedance": m.g_m * m.r_f * r_tia,
        "bandwidth": 1.0 / (2.0 * math.pi * r_tia * m.c_tia),
        "in_noise_psd": math.sqrt(psd),
    }


def amp_characteristics(m: AmpModel) -> dict:
    """DC gain and (peaking-extended) bandwidth."""
    return {
        "dc_gain": m.g_m_amp * m.r_amp,
        "bandwidth": m.bw_boost / (2.0 * math.pi * m.r_amp * m.c_amp),
    }


def noise_terms(tia: TiaModel, amp: AmpModel, i_pd) -> dict:
    """The three ADC-input noise contributions (V^2)."""
    i_pd = np.asarray(i_pd, dtype=float)
    if np.any(i_pd < 0):
        raise ValidationError("photocurrent must be non-negative")
    kt = K_BOLTZMANN * tia.temperature
    r_tia = tia.r_tia
    amp_gain = amp.g_m_amp**2 * amp.r_amp / amp.c_amp
    shot = 0.5 * Q_ELECTRON * i_pd * (tia.g_m * tia.r_f * r_tia) ** 2 * amp_gain
    thermal = kt * (tia.gamma * tia.g_m * r_tia**2 + r_tia) * amp_gain
    amplifier = 2.0 * kt * (tia.gamma * amp.g_m_amp * amp.r_amp
                            + tia.gamma * amp.g_m_ind * amp.r_amp + 1.0) / amp.c_amp
    return {"shot": shot, "tia_thermal": thermal, "amplifier": amplifier}


def oe_noise_power(tia: TiaModel, amp: AmpModel, i_pd):
    """Total mean-square noise voltage at the ADC input."""
    t = noise_terms(tia, amp, i_pd)
    total = t["shot"] + t["tia_thermal"] + t["amplifier"]
    return total if np.ndim(total) else float(total)


def snr_margin(noise_power: float, adc: AdcModel) -> dict:
    """Margin of the quantisation noise over the analog noise."""
    if noise_power <= 0:
        raise ValidationError("noise power must be positive")
    quant = adc.lsb**2 / 12.0
    margin_db = 10.0 * math.log10(quant / noise_power)
    return {"quant_noise": quant, "margin_db": margin_db, "margin_bits": margin_db / 6.02}


def adc_quantize(v_diff, adc: AdcModel):
    """Mid-tread quantiser saturating at 0 and ``2^bits - 1``; ties round up."""
    x = np.asarray(v_diff, dtype=float) / adc.lsb
    codes = np.clip(np.floor(x + 0.5 + TIE_GUARD_LSB), 0, adc.levels).astype(np.int64)
    return codes if codes.ndim else int(codes)


def adc_dequantize(code, adc: AdcModel):
    """Voltage at the centre of a code's bin."""
    out = np.asarray(code, dtype=float) * adc.lsb
    return out if out.ndim else float(out)


REFERENCE_TIA = TiaModel()
REFERENCE_AMP = AmpModel()
