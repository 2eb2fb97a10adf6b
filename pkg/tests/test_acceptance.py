"""One test per acceptance criterion.

Each test records a single PASS/FAIL line (printed at the end of the pytest
run by ``conftest.pytest_terminal_summary``) and then asserts every
sub-check, naming the ones that failed.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest

from combaccel.attention import (
    AttentionWeights, SimulatedBackend, SoftmaxLut, attention_head, collapse_qk, softmax_lut,
)
from combaccel.cli import main as cli_main
from combaccel.config import AccelConfig
from combaccel.eo import build_calibration, dnl_inl, reference_mrm_model, uncalibrated_gains
from combaccel.frontend import (
    I_PD_MAX, AdcModel, AmpModel, TiaModel, oe_noise_power, snr_margin, tia_characteristics,
)
from combaccel.mmm import MmmStrategy, dmmm_oracle, dmmm_simulate, dmmm_simulate_batch, mmm
from combaccel.mvm import SimFlags, mvm_oracle, mvm_simulate, mvm_simulate_batch
from combaccel.power import (
    TABLE_II, hs_dac_static_power, laser_power, perf_report, r2r_static_power,
)
from combaccel.resonator import design
from conftest import cfg_for, plan_for
from oracles import divider_power_states, matmul_int, mvm_reference, r2r_nodal_power, softmax_dense

RESULTS: dict[int, str] = {}


def _verdict(n: int, title: str, checks: list[tuple[str, bool, str]]) -> None:
    failed = [f"{name} ({detail})" for name, ok, detail in checks if not ok]
    line = f"criterion {n:2d} {'PASS' if not failed else 'FAIL'}  {title}"
    if failed:
        line += "  -- failed: " + "; ".join(failed)
    RESULTS[n] = line
    print(line)
    assert not failed, line


def _rel(value: float, target: float, tol: float) -> tuple[bool, str]:
    err = abs(value - target) / abs(target)
    return err <= tol, f"{value:.6g} vs {target:.6g}, {err:.2%} > {tol:.0%}" if err > tol else ""


def _within(name: str, value: float, target: float, tol: float):
    ok, detail = _rel(value, target, tol)
    return name, ok, detail


def _printed(value: float, shown: float, decimals: int) -> bool:
    """``value`` agrees with a table entry printed to ``decimals`` places."""
    return abs(value - shown) < 10.0 ** -decimals


# Published rows: (d, spacing, L_RTR um, RTR modes, lambda span, spacing span,
# MRM modes, MRM radius span).
TABLE_I = [
    (32, 0.5, 951.32, (2321, 2290), (1534.5, 1550.0), (0.49, 0.51), (71, 72), (4.63, 4.76)),
    (32, 1.0, 469.01, (1160, 1129), (1519.0, 1550.0), (0.97, 1.03), (35, 36), (2.25, 2.38)),
    (16, 1.0, 475.66, (1160, 1145), (1535.0, 1550.0), (0.99, 1.01), (71, 72), (4.63, 4.76)),
]


def test_criterion_01_table_i(capsys):
    checks = []
    for d, sp, length, modes, lam, sps, mrm, radii in TABLE_I:
        tag = f"d={d}/{sp}nm"
        s = design(d, 1550.0, sp).summary()
        checks.append(_within(f"{tag} L_RTR", s["perimeter_um"], length, 0.005))
        top, low = s["rtr_modes"]
        checks.append((f"{tag} modes", (top, low) == modes and top - low == d - 1,
                       f"{top}..{low}"))
        for k in range(2):
            checks.append((f"{tag} lambda[{k}]", abs(s["lambda_nm"][k] - lam[k]) <= 0.1,
                           f"{s['lambda_nm'][k]:.4f}"))
        # Spacings are printed to two decimals in the table.
        lo, hi = s["spacing_nm"]
        checks.append((f"{tag} spacing", _printed(lo, sps[0], 2) or lo >= sps[0],
                       f"min {lo:.4f}"))
        checks.append((f"{tag} spacing", _printed(hi, sps[1], 2) or hi <= sps[1],
                       f"max {hi:.4f}"))
        checks.append((f"{tag} MRM modes", tuple(s["mrm_modes"]) == mrm, str(s["mrm_modes"])))
        for k in range(2):
            checks.append(_within(f"{tag} radius[{k}]", s["mrm_radius_um"][k], radii[k], 0.01))
    # Row 1 spacing literally inside [0.49, 0.51].
    lo, hi = design(32, 1550.0, 0.5).summary()["spacing_nm"]
    checks.append(("row 1 spacing literal", 0.49 <= lo and hi <= 0.51, f"{lo:.4f}..{hi:.4f}"))
    t0 = time.perf_counter()
    code = cli_main(["design", "--table-i", "--format", "csv"])
    dt = time.perf_counter() - t0
    capsys.readouterr()
    checks.append(("design runtime", code == 0 and dt < 1.0, f"{dt:.3f} s"))
    _verdict(1, "Table I reproduction", checks)


def test_criterion_02_hs_dac():
    checks = [_within("B=4 2kOhm 2.4V", hs_dac_static_power(4, 2e3, 2.4), 0.45e-3, 0.02)]
    for b in (1, 2, 3, 4):
        got, ref = hs_dac_static_power(b, 2e3, 2.4), divider_power_states(b, 2e3, 2.4)
        checks.append((f"divider oracle B={b}", math.isclose(got, ref, rel_tol=1e-12),
                       f"{got!r} vs {ref!r}"))
    _verdict(2, "HS-DAC static power", checks)


def test_criterion_03_r2r_dac():
    checks = [_within("B=4 5MOhm 2.4V", r2r_static_power(4, 5e6, 2.4), 7.2e-6, 0.05)]
    for b in (1, 2, 3, 4):
        got, ref = r2r_static_power(b, 5e6, 2.4), r2r_nodal_power(b, 5e6, 2.4)
        checks.append((f"nodal oracle B={b}", math.isclose(got, ref, rel_tol=1e-12),
                       f"{got!r} vs {ref!r}"))
    _verdict(3, "R2R-DAC static power", checks)


def test_criterion_04_tia():
    t = tia_characteristics(TiaModel())
    _verdict(4, "TIA transimpedance, bandwidth, input noise", [
        _within("dc transimpedance", t["dc_transimpedance"], 1027.0, 0.01),
        _within("bandwidth", t["bandwidth"], 8.52e9, 0.01),
        _within("input noise", t["in_noise_psd"], 6.26e-12, 0.02),
    ])


def test_criterion_05_noise_budget():
    total = oe_noise_power(TiaModel(), AmpModel(), I_PD_MAX)
    m = snr_margin(total, AdcModel(bits=4, full_scale=1.0))
    q_uw = m["quant_noise"] * 1e6
    _verdict(5, "O/E noise budget and margin", [
        _within("total noise", total, 11e-6, 0.15),
        ("quantisation noise", round(q_uw) == 370, f"{q_uw:.3f} uW"),
        ("margin", abs(m["margin_db"] - 15.3) <= 0.5, f"{m['margin_db']:.3f} dB"),
    ])


def test_criterion_06_laser():
    l32, l8 = laser_power(AccelConfig(d=32)), laser_power(AccelConfig(d=8))
    _verdict(6, "Laser budget", [
        _within("d=32 per line", l32["p_per_lambda"], 4.08e-3, 0.01),
        _within("d=32 total", l32["total"], 130.7e-3, 0.01),
        _within("d=8 total", l8["total"], 31.6e-3, 0.01),
    ])


def test_criterion_07_table_ii(capsys):
    checks = []
    for row in TABLE_II:
        r = perf_report(AccelConfig(d=row.d))
        tag = f"d={row.d}"
        checks += [
            _within(f"{tag} laser", r.laser_w * 1e3, row.laser_mw, 0.03),
            _within(f"{tag} heater", r.heater_w * 1e3, row.heater_mw, 0.03),
            _within(f"{tag} SoC", r.soc_w * 1e3, row.soc_mw, 0.03),
            _within(f"{tag} area", r.area_mm2, row.area_mm2, 0.15),
            (f"{tag} throughput", r.throughput_mac_s == float(row.d**2) * 2e9,
             repr(r.throughput_mac_s)),
            (f"{tag} density identity",
             math.isclose(r.density_tmac_s_mm2, r.tmac_s / r.area_mm2, rel_tol=1e-15), ""),
            (f"{tag} energy identity",
             math.isclose(r.energy_fj_mac, r.soc_w / r.throughput_mac_s * 1e15, rel_tol=1e-15),
             ""),
        ]
    r = perf_report(AccelConfig(d=32))
    checks += [
        ("d=32 TMAC/s", r.tmac_s == 2.048, repr(r.tmac_s)),
        ("d=32 density", _printed(r.density_tmac_s_mm2, 1.80, 2), f"{r.density_tmac_s_mm2:.4f}"),
        ("d=32 energy", _printed(r.energy_fj_mac, 195.6, 1), f"{r.energy_fj_mac:.3f}"),
    ]
    t0 = time.perf_counter()
    code = cli_main(["perf", "--format", "csv"])
    dt = time.perf_counter() - t0
    rows = capsys.readouterr().out.strip().splitlines()
    checks.append(("perf runtime and rows", code == 0 and dt < 1.0 and len(rows) == 7,
                   f"{dt:.3f} s, {len(rows)} lines"))
    _verdict(7, "Table II reproduction", checks)


def test_criterion_08_calibration():
    model = reference_mrm_model()
    _, inl_u = dnl_inl(uncalibrated_gains(model, 1534.5))
    cal = build_calibration(model, 1534.5)
    dnl_c, inl_c = dnl_inl(cal.gains)
    _verdict(8, "E/O calibration within LSB/2", [
        ("uncalibrated INL > LSB/2", np.abs(inl_u).max() > 0.5, f"{np.abs(inl_u).max():.3f}"),
        ("calibrated DNL <= LSB/2", np.abs(dnl_c).max() <= 0.5, f"{np.abs(dnl_c).max():.3f}"),
        ("calibrated INL <= LSB/2", np.abs(inl_c).max() <= 0.5, f"{np.abs(inl_c).max():.3f}"),
    ])


def _mvm_exhaustive(d: int, bits: int) -> int:
    vals = range(1 << bits)
    ys = np.array(list(itertools.product(vals, repeat=d * d))).reshape(-1, d, d)
    zs = np.array(list(itertools.product(vals, repeat=d))).reshape(-1, d)
    yb = np.repeat(ys, len(zs), axis=0)
    zb = np.tile(zs, (len(ys), 1))
    codes = mvm_simulate_batch(yb, zb, cfg_for(d, bits), plan_for(d)).codes
    ref = np.array([mvm_oracle(y, z, bits) for y, z in zip(yb, zb)])
    return int((codes != ref).sum())


def _dmmm_exhaustive(d: int, bits: int) -> int:
    vals = range(1 << bits)
    mats = np.array(list(itertools.product(vals, repeat=d * d))).reshape(-1, d, d)
    n, m2 = len(mats), (1 << bits) - 1
    ys, zs = np.repeat(mats, n, axis=0), np.tile(mats, (n, 1, 1))
    bad = 0
    for x in mats:
        xs = np.broadcast_to(x, ys.shape)
        codes = dmmm_simulate_batch(xs, ys, zs, cfg_for(d, bits), plan_for(d))
        s = np.einsum("bik,bkm,bmj->bij", xs, ys, zs)
        bad += int((codes != (2 * s + d * d * m2 * m2) // (2 * d * d * m2 * m2)).sum())
    return bad


def test_criterion_09_oracle_equivalence():
    checks = []
    for d, bits in itertools.product((1, 2), (1, 2)):
        bad = _mvm_exhaustive(d, bits)
        checks.append((f"mvm exhaustive d={d} B={bits}", bad == 0, f"{bad} mismatches"))
        bad = _dmmm_exhaustive(d, bits)
        checks.append((f"dmmm exhaustive d={d} B={bits}", bad == 0, f"{bad} mismatches"))
    rng = np.random.default_rng(2024)
    for d in (4, 8):
        cfg, plan = cfg_for(d), plan_for(d)
        n = 10_000
        ys, zs = rng.integers(0, 16, (n // d, d, d)), rng.integers(0, 16, (n // d, d))
        codes = mvm_simulate_batch(ys, zs, cfg, plan).codes
        ref = np.array([mvm_reference(y.tolist(), z.tolist(), 4) for y, z in zip(ys, zs)])
        bad = int((codes != ref).sum())
        checks.append((f"mvm random d={d} ({codes.size} outputs)", bad == 0 and codes.size >= n,
                       f"{bad} mismatches"))
        xs, ys, zs = (rng.integers(0, 16, (n, d, d)) for _ in range(3))
        codes = dmmm_simulate_batch(xs, ys, zs, cfg, plan)
        ref = np.stack([dmmm_oracle(a, b, c, 4) for a, b, c in zip(xs[:200], ys[:200], zs[:200])])
        s = np.einsum("bik,bkm,bmj->bij", xs, ys, zs)
        bulk = (2 * s + d * d * 225) // (2 * d * d * 225)
        bad = int((codes != bulk).sum()) + int((codes[:200] != ref).sum())
        checks.append((f"dmmm random d={d} ({n} cases)", bad == 0, f"{bad} mismatches"))
        # The per-stage watt-level path agrees with the batch kernel.
        for k in range(20):
            one = dmmm_simulate(xs[k], ys[k], zs[k], cfg, plan).codes
            checks.append((f"dmmm_simulate d={d} case {k}", np.array_equal(one, codes[k]), ""))
            one = mvm_simulate(ys[k], zs[k, 0], cfg, plan).codes
            checks.append((f"mvm_simulate d={d} case {k}",
                           np.array_equal(one, mvm_oracle(ys[k], zs[k, 0], 4)), ""))
    _verdict(9, "Ideal simulators equal their oracles", checks)


def test_criterion_10_collapse_identity():
    rng = np.random.default_rng(10)
    bad = 0
    count = 0
    for d in (2, 4, 8):
        for _ in range(1000):
            x, wq, wk = (rng.integers(0, 16, (d, d)).tolist() for _ in range(3))
            w_c = collapse_qk(wq, wk, 4).product.tolist()
            lhs = matmul_int(matmul_int(x, w_c), np.array(x).T.tolist())
            q, k = matmul_int(x, wq), matmul_int(x, wk)
            bad += lhs != matmul_int(q, np.array(k).T.tolist())
            count += 1
    _verdict(10, "Collapsed-weight identity", [
        ("exact instances", bad == 0 and count >= 3000, f"{bad} of {count} differ")])


def test_criterion_11_softmax_lut():
    rng = np.random.default_rng(11)
    checks = []
    for k in (2, 4, 8, 16, 64, 256):
        lut = SoftmaxLut.build(k)
        bound = lut.error_bound()
        checks.append((f"K={k} bound <= 2^-6", bound <= 2.0**-6, f"{bound:.5f}"))
        worst_err = worst_sum = 0.0
        shift_ok = True
        for _ in range(200):
            row = rng.integers(-20 * 128, 20 * 128, k) / 128.0
            got = softmax_lut(row, lut)
            worst_err = max(worst_err, float(np.abs(got - softmax_dense(row)).max()))
            worst_sum = max(worst_sum, abs(float(got.sum()) - 1.0))
            shifted = softmax_lut(row + rng.integers(-5000, 5000) / 128.0, lut)
            shift_ok &= shifted.tobytes() == got.tobytes()
        checks += [(f"K={k} max error", worst_err <= bound, f"{worst_err:.5f} > {bound:.5f}"),
                   (f"K={k} row sum", worst_sum <= bound, f"{worst_sum:.5f}"),
                   (f"K={k} shift invariance", shift_ok, "")]
    _verdict(11, "LUT softmax bounds and invariance", checks)


def test_criterion_12_structural():
    checks = []
    rng = np.random.default_rng(12)
    for n, d in ((4, 4), (8, 8), (8, 16), (32, 32)):
        x, y, z = (rng.integers(0, 16, s) for s in ((n, d), (d, d), (d, n)))
        t = dmmm_simulate(x, y, z, cfg_for(d), plan_for(d)).trace
        pd_events = [e for e in t.events if e.kind == "O/E"]
        checks += [
            (f"n={n} d={d} photodetections", t.photodetections == n * n,
             f"{t.photodetections} != {n * n}"),
            (f"n={n} d={d} only final O/E", all(e.stage == 2 for e in pd_events)
             and sum(e.count for e in pd_events) == n * n, str(pd_events)),
            (f"n={n} d={d} intermediate O/E/O", t.intermediate_oe == 0, str(t.intermediate_oe)),
        ]
    _verdict(12, "D-MMM has n^2 photodetections and no intermediate O/E/O", checks)


def test_criterion_13_determinism(capsys, tmp_path):
    rng = np.random.default_rng(13)
    d = 8
    y, z = rng.integers(0, 16, (d, d)), rng.integers(0, 16, (d, d))
    x = rng.integers(0, 16, (d, d))
    w = AttentionWeights(*(rng.integers(0, 16, (d, d)) for _ in range(3)))
    flags = SimFlags(nonlinearity="calibrated", noise=True, seed=1234, crosstalk=True,
                     absorption_weighting=True)
    other = SimFlags(nonlinearity="calibrated", noise=True, seed=1235, crosstalk=True,
                     absorption_weighting=True)
    cfg, plan = cfg_for(d), plan_for(d)
    runs = {
        "mvm": lambda f: mvm_simulate(y, z[:, 0], cfg, plan, f).trace.adc_in,
        "mvm batch": lambda f: mvm_simulate_batch(y[None].repeat(4, 0), z[:4], cfg, plan,
                                                  f).analog,
        "mmm hybrid": lambda f: mmm(y, z, MmmStrategy.hybrid(3), cfg, plan, f).analog,
        "dmmm": lambda f: dmmm_simulate(x, y, z, cfg, plan, f).analog,
        "attention": lambda f: attention_head(x, w, SimulatedBackend(flags=f)).output,
    }
    checks = []
    for name, run in runs.items():
        a, b, c = run(flags), run(flags), run(other)
        checks.append((f"{name} repeat", a.tobytes() == b.tobytes(), "bytes differ"))
        checks.append((f"{name} seed matters", a.tobytes() != c.tobytes(), "noise inert"))
    inp = tmp_path / "mvm.json"
    inp.write_text(json.dumps({"Y": y.tolist(), "Z": z[:, 0].tolist()}))
    argv = ["simulate-mvm", "--input", str(inp), "--noise", "--seed", "99", "--trace"]
    outs = []
    for _ in range(2):
        assert cli_main(argv) == 0
        outs.append(capsys.readouterr().out)
    checks.append(("CLI repeat", outs[0] == outs[1], "stdout differs"))
    _verdict(13, "Seeded noisy runs are byte-identical", checks)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
