"""Independent reference implementations used only by the tests.

None of these import the code they check; each solves the underlying
problem a different way (circuit analysis, brute force, exact rationals,
dense loops).
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def divider_power_states(bits: int, r_unit: float, vdd: float) -> float:
    """Code-averaged supply power of a thermometer-coded resistive DAC.

    ``N = 2^B - 1`` legs of resistance ``N R`` meet at the output node
    (parallel total R).  Code c ties c legs to ``vdd`` and the rest to
    ground.  The output voltage is solved from KCL and the supply power
    summed leg by leg, then averaged over all ``2^B`` codes.
    """
    n_legs = (1 << bits) - 1
    r_leg = n_legs * r_unit
    acc = 0.0
    for code in range(1 << bits):
        drive = [vdd] * code + [0.0] * (n_legs - code)
        v_out = sum(v / r_leg for v in drive) / (n_legs / r_leg)
        acc += sum(vdd * (vdd - v_out) / r_leg for v in drive if v == vdd)
    return acc / (1 << bits)


def r2r_nodal_power(bits: int, r_unit: float = 1.0, vdd: float = 1.0) -> float:
    """R-2R ladder static supply power by nodal analysis, averaged over codes.

    Node 0 is the LSB end, terminated by 2R to ground; node B-1 is the
    output.  Each node has a 2R leg to ``vdd`` (bit 1) or ground (bit 0),
    and adjacent nodes are joined by R.  Power drawn from the supply is
    ``sum over set bits of vdd * (vdd - v_node) / (2R)``.
    """
    total = 0.0
    for code in range(1 << bits):
        b = [(code >> i) & 1 for i in range(bits)]
        g = np.zeros((bits, bits))
        i_src = np.zeros(bits)
        for i in range(bits):
            g[i, i] += 1.0 / (2 * r_unit)
            i_src[i] += b[i] * vdd / (2 * r_unit)
            if i == 0:
                g[i, i] += 1.0 / (2 * r_unit)
            if i + 1 < bits:
                g[i, i] += 1.0 / r_unit
                g[i + 1, i + 1] += 1.0 / r_unit
                g[i, i + 1] -= 1.0 / r_unit
                g[i + 1, i] -= 1.0 / r_unit
        v = np.linalg.solve(g, i_src)
        total += sum(vdd * (vdd - v[i]) / (2 * r_unit) for i in range(bits) if b[i])
    return total / (1 << bits)


def mvm_reference(y, z, bits: int) -> list[int]:
    """Round-half-up of each row's average product in units of M, with Fractions."""
    m = (1 << bits) - 1
    out = []
    for row in y:
        c = len(row)
        val = Fraction(sum(int(a) * int(b) for a, b in zip(row, z)), c * m)
        out.append(math.floor(val + Fraction(1, 2)))
    return out


def dmmm_reference(x, y, z, bits: int) -> list[list[int]]:
    """Stage-wise exact rationals: stage 1 kept unrounded, one final rounding."""
    m = (1 << bits) - 1
    p, r = len(x), len(x[0])
    c, q = len(z), len(z[0])
    stage1 = [[Fraction(sum(int(y[k][t]) * int(z[t][j]) for t in range(c)), c * m)
               for j in range(q)] for k in range(r)]
    out = []
    for i in range(p):
        row = []
        for j in range(q):
            v = sum(int(x[i][k]) * stage1[k][j] for k in range(r)) / (r * m)
            row.append(math.floor(v + Fraction(1, 2)))
        out.append(row)
    return out


def matmul_int(a, b) -> list[list[int]]:
    """Triple-loop integer matrix product."""
    n, k, m = len(a), len(b), len(b[0])
    return [[sum(int(a[i][t]) * int(b[t][j]) for t in range(k)) for j in range(m)]
            for i in range(n)]


def softmax_dense(row) -> np.ndarray:
    a = [float(v) for v in row]
    top = max(a)
    e = [math.exp(v - top) for v in a]
    s = sum(e)
    return np.array([v / s for v in e])


def attention_dense(x, w_q, w_k, w_v, bits: int, gain: float, shift: int) -> np.ndarray:
    """Loop-form ``softmax(gain * Q K^T / 2^shift) V`` on normalised operands."""
    m = (1 << bits) - 1
    n, d = len(x), len(x[0])

    def proj(w):
        return [[sum(x[i][t] * w[t][j] for t in range(d)) / (m * m) for j in range(d)]
                for i in range(n)]

    q, k, v = proj(w_q), proj(w_k), proj(w_v)
    out = np.zeros((n, d))
    for i in range(n):
        scores = [gain * sum(q[i][t] * k[j][t] for t in range(d)) / 2**shift for j in range(n)]
        s = softmax_dense(scores)
        for j in range(d):
            out[i, j] = sum(s[t] * v[t][j] for t in range(n))
    return out


def lorentzian_notch(lam: float, centre: float, hwhm: float, t_min: float) -> float:
    """All-pass ring power transmission written from scratch."""
    delta = (lam - centre) / hwhm
    return (t_min + delta * delta) / (1.0 + delta * delta)


def table_i_plan(d: int, lambda_max: float, spacing: float, a0: float, a1: float, a2: float):
    """Comb plan by direct root finding on ``m lam = n_eff(lam) L``.

    Uses bisection rather than fixed-point iteration.
    """
    def n_eff(lam):
        return a0 + a1 * lam + a2 * lam * lam

    def n_g(lam):
        return a0 - a2 * lam * lam

    m_top = math.floor(n_eff(lambda_max) / n_g(lambda_max) * lambda_max / spacing + 1e-9)
    m_low = m_top - d + 1
    length = lambda_max * m_low / n_eff(lambda_max)
    lams = []
    for mode in range(m_top, m_low - 1, -1):
        lo, hi = lambda_max - 3 * d * spacing - 10, lambda_max + 1e-6
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mode * mid - n_eff(mid) * length > 0:
                hi = mid
            else:
                lo = mid
        lams.append(0.5 * (lo + hi))
    return m_top, m_low, length / 1e3, lams
