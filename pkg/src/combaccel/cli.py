"""Command-line interface.

Every subcommand writes JSON (or CSV where a table is natural) to stdout or
``--output``.  Errors go to stderr as one JSON object and set the exit code:
2 for invalid input, 3 for a solver failure, 1 for anything else.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .config import AccelConfig, load_config
from .attention import LUT_FRAC_BITS, LUT_LOG_ENTRIES, LUT_RANGE
from .errors import CombAccelError, ValidationError

TABLE_I_ROWS = ((32, 0.5), (32, 1.0), (16, 1.0))
TABLE_II_DS = (8, 16, 32, 64, 128, 256)


# ---------------------------------------------------------------------------
# Input and output helpers

def load_matrix(path: str | Path, key: str | None = None) -> np.ndarray:
    """Integer codes from a CSV file or a JSON array / object.

    JSON objects are indexed by ``key``.  CSV rows are comma-separated
    integers; blank lines and ``#`` comments are skipped.
    """
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError as exc:
        raise ValidationError(f"input file not found: {p}") from exc
    if p.suffix.lower() == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{p} is not valid JSON: {exc}") from exc
        if isinstance(doc, dict):
            if key is None or key not in doc:
                raise ValidationError(f"{p} has no entry {key!r}")
            doc = doc[key]
        return _as_int_array(doc, str(p))
    rows = [r for r in csv.reader(io.StringIO(text))
            if r and not r[0].lstrip().startswith("#")]
    try:
        return _as_int_array([[int(v) for v in r] for r in rows], str(p))
    except ValueError as exc:
        raise ValidationError(f"{p}: CSV entries must be integers") from exc


def _as_int_array(doc: Any, where: str) -> np.ndarray:
    try:
        arr = np.asarray(doc)
    except ValueError as exc:
        raise ValidationError(f"{where}: ragged array") from exc
    if arr.dtype.kind not in "iu":
        raise ValidationError(f"{where}: expected integer codes")
    return arr.astype(np.int64)


def _operand(args, name: str) -> np.ndarray:
    path = getattr(args, name.lower())
    if path is not None:
        return load_matrix(path)
    if args.input is not None:
        return load_matrix(args.input, key=name)
    raise ValidationError(f"operand {name} missing: pass --{name.lower()} or --input")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dump_json(doc) -> str:
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def _emit(text: str, args) -> None:
    if getattr(args, "output", None):
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def _config(args) -> AccelConfig:
    cfg = load_config(args.config)
    overrides = {}
    if getattr(args, "d", None) is not None:
        overrides["d"] = args.d
    if getattr(args, "bits", None) is not None:
        overrides["bits"] = args.bits
    return replace(cfg, **overrides) if overrides else cfg


def _flags(args):
    from .mvm import SimFlags

    return SimFlags(nonlinearity=args.nonlinearity, noise=args.noise, seed=args.seed,
                    crosstalk=args.crosstalk, absorption_weighting=args.absorption_weighting,
                    backend=args.backend)


def _plan(cfg: AccelConfig, args):
    from .resonator import plan_wavelengths

    return plan_wavelengths(cfg.d, args.lambda_max, args.spacing)


# ---------------------------------------------------------------------------
# Subcommands

def cmd_design(args) -> int:
    from .resonator import design, table_i_csv

    rows = TABLE_I_ROWS if args.table_i else ((args.d, args.spacing),)
    reports = [design(d, args.lambda_max, sp, args.bend_radius) for d, sp in rows]
    if args.format == "csv":
        _emit(table_i_csv(reports), args)
    else:
        docs = [r.to_dict() for r in reports]
        _emit(dump_json(docs if args.table_i else docs[0]), args)
    return 0


def cmd_perf(args) -> int:
    from .power import perf_csv, perf_report

    cfg = load_config(args.config)
    if args.r_u is not None:
        cfg = replace(cfg, r_u=args.r_u, r2r_static=None)
    if args.r2r_formula:
        cfg = replace(cfg, r2r_static=None)
    reports = [perf_report(cfg.with_d(d)) for d in (args.d or TABLE_II_DS)]
    if args.format == "csv":
        _emit(perf_csv(reports), args)
    else:
        _emit(dump_json([r.to_dict() for r in reports]), args)
    return 0


def cmd_calibrate(args) -> int:
    from .eo import (
        build_calibration, calibration_from_gains, dnl_inl, reference_mrm_model, uncalibrated_gains,
    )

    cfg = load_config(args.config)
    bits = args.bits or cfg.bits
    if args.gains:
        g = np.loadtxt(args.gains, delimiter=",", ndmin=1, dtype=float).ravel()
        if g.size != 1 << (bits + 1):
            raise ValidationError(f"--gains needs {1 << (bits + 1)} samples, got {g.size}")
        raw = g[_uniform_picks(bits)]
        cal = calibration_from_gains(g, bits)
    else:
        model = reference_mrm_model(lambda_res0=args.lambda_res, q_factor=cfg.q_factor,
                           shift_rate=cfg.shift_rate, dr_db=cfg.mrm_dr_db, v_max=cfg.vddh)
        raw = uncalibrated_gains(model, args.lambda_res, bits, cfg.vddh)
        cal = build_calibration(model, args.lambda_res, bits, cfg.vddh)
    u_dnl, u_inl = dnl_inl(raw)
    c_dnl, c_inl = dnl_inl(cal.gains)
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["code", "dac_code", "gain_uncal", "dnl_uncal", "inl_uncal",
                    "gain_cal", "dnl_cal", "inl_cal"])
        for k in range(1 << bits):
            dn_u = f"{u_dnl[k - 1]:.6f}" if k else ""
            dn_c = f"{c_dnl[k - 1]:.6f}" if k else ""
            w.writerow([k, cal.mapping[k], f"{raw[k]:.6f}", dn_u, f"{u_inl[k]:.6f}",
                        f"{cal.gains[k]:.6f}", dn_c, f"{c_inl[k]:.6f}"])
        _emit(buf.getvalue(), args)
        return 0
    summary = {
        "uncalibrated": {"max_dnl": float(np.abs(u_dnl).max()), "max_inl": float(np.abs(u_inl).max())},
        "calibrated": {"max_dnl": float(np.abs(c_dnl).max()), "max_inl": float(np.abs(c_inl).max())},
    }
    summary["calibrated"]["within_half_lsb"] = bool(
        summary["calibrated"]["max_dnl"] <= 0.5 and summary["calibrated"]["max_inl"] <= 0.5)
    doc = {"map": cal.to_dict(), "gains": list(cal.gains), "summary": summary,
           "dnl_uncal": u_dnl, "inl_uncal": u_inl, "dnl_cal": c_dnl, "inl_cal": c_inl}
    _emit(dump_json(doc), args)
    return 0


def _uniform_picks(bits: int) -> list[int]:
    # Plain B-bit DAC levels inside the (B+1)-bit grid.
    from .eo import _identity_codes

    return _identity_codes(bits)


def cmd_simulate_mvm(args) -> int:
    from .mvm import error_stats, mvm_oracle, mvm_simulate

    cfg = _config(args)
    y = _operand(args, "Y")
    z = _operand(args, "Z")
    if args.d is None:
        cfg = cfg.with_d(int(y.shape[-1]))
    plan = _plan(cfg, args)
    res = mvm_simulate(y, z, cfg, plan, _flags(args))
    oracle = mvm_oracle(y, z, cfg.bits)
    doc = {"codes": res.codes, "oracle": oracle, "saturated": res.saturated,
           "error": error_stats(res.codes, oracle, cfg.bits).to_dict()}
    if args.trace:
        doc["trace"] = res.trace.to_dict()
    _emit(dump_json(doc), args)
    return 0


def cmd_simulate_dmmm(args) -> int:
    from .mmm import MmmStrategy, compare_naive, dmmm_oracle, dmmm_simulate
    from .mvm import error_stats

    cfg = _config(args)
    x = _operand(args, "X")
    y = _operand(args, "Y")
    z = _operand(args, "Z")
    if args.d is None:
        cfg = cfg.with_d(int(y.shape[-1]))
    plan = _plan(cfg, args)
    res = dmmm_simulate(x, y, z, cfg, plan, _flags(args), MmmStrategy.parse(args.strategy))
    oracle = dmmm_oracle(x, y, z, cfg.bits)
    doc = {"codes": res.codes, "oracle": oracle, "saturated": res.saturated,
           "error": error_stats(res.codes.ravel(), oracle.ravel(), cfg.bits).to_dict(),
           "schedule": res.schedule.to_dict(),
           "naive_comparison": compare_naive(x, y, z, cfg.bits).to_dict(),
           "trace": res.trace.to_dict(full=args.trace)}
    _emit(dump_json(doc), args)
    return 0


def cmd_simulate_attention(args) -> int:
    from .attention import (
        AttentionWeights, ExactBackend, LutSizing, OracleBackend, SimulatedBackend,
        attention_head, fidelity_report, multihead,
    )

    cfg = _config(args)
    bits = cfg.bits
    x = _operand(args, "X")
    doc = json.loads(Path(args.weights).read_text()) if args.weights else None
    if doc is None:
        raise ValidationError("--weights is required")
    heads_doc = doc.get("heads") or [doc]
    try:
        heads = [AttentionWeights(h["w_q"], h["w_k"], h["w_v"], bits=bits,
                                  d_k=h.get("d_k"), shift=args.shift if args.shift is not None
                                  else h.get("shift")) for h in heads_doc]
    except KeyError as exc:
        raise ValidationError(f"weights file lacks {exc.args[0]!r}") from exc
    w_o = doc.get("w_o")
    lut = LutSizing(args.lut_range, args.lut_frac_bits, args.lut_log_entries)
    if args.backend_kind == "exact":
        backend = ExactBackend()
    elif args.backend_kind == "oracle":
        backend = OracleBackend()
    else:
        backend = SimulatedBackend(cfg=cfg, flags=_flags(args), lambda_max=args.lambda_max,
                                   spacing=args.spacing)
    if w_o is None and len(heads) == 1:
        exact = attention_head(x, heads[0], ExactBackend())
        result = attention_head(x, heads[0], backend, lut)
    else:
        if w_o is None:
            raise ValidationError("multi-head weights need w_o")
        exact = multihead(x, heads, w_o, ExactBackend())
        result = multihead(x, heads, w_o, backend, lut)
    out = {"output": result.output, "fidelity": fidelity_report(exact, result)}
    if args.trace:
        out["result"] = result.to_dict()
    _emit(dump_json(out), args)
    return 0


# ---------------------------------------------------------------------------
# Parser

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (units required on quantities)")
    p.add_argument("--output", "-o", help="write to this file instead of stdout")


def _grid(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda-max", type=float, default=1550.0, help="longest comb line, nm")
    p.add_argument("--spacing", type=float, default=0.5, help="target line spacing, nm")


def _sim(p: argparse.ArgumentParser) -> None:
    _common(p)
    _grid(p)
    p.add_argument("--d", type=int, help="comb lines (default: operand width)")
    p.add_argument("--bits", type=int, help="code resolution (default from config)")
    p.add_argument("--input", help="JSON object holding the operands by name")
    p.add_argument("--nonlinearity", choices=("ideal", "uncalibrated", "calibrated"),
                   default="ideal")
    p.add_argument("--noise", action="store_true", help="add receiver noise (needs --seed)")
    p.add_argument("--seed", type=int)
    p.add_argument("--crosstalk", action="store_true", help="model neighbour-ring tails")
    p.add_argument("--absorption-weighting", action="store_true",
                   help="wavelength-dependent racetrack absorption")
    p.add_argument("--backend", choices=("numba", "numpy"), help="kernel backend")
    p.add_argument("--trace", action="store_true", help="include the full per-stage trace")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="combaccel",
        description="Design calculator and bit-true simulator for a comb-laser "
                    "photonic-electronic MVM accelerator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="wavelength plan, ring radii and racetrack geometry")
    _common(p)
    _grid(p)
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--bend-radius", type=float, default=5.0, help="racetrack bend radius, um")
    p.add_argument("--table-i", action="store_true", help="emit the three reference rows")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("perf", help="power, area and energy per dimension")
    _common(p)
    p.add_argument("--d", type=int, nargs="+", help=f"dimensions (default {TABLE_II_DS})")
    p.add_argument("--r-u", type=float, help="R-2R unit resistance, ohm (uses the ladder formula)")
    p.add_argument("--r2r-formula", action="store_true",
                   help="evaluate the R-2R ladder formula instead of the 7.2 uW figure")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_perf)

    p = sub.add_parser("calibrate", help="DAC-code calibration map with DNL/INL")
    _common(p)
    p.add_argument("--bits", type=int)
    p.add_argument("--lambda-res", type=float, default=1534.5, help="ring resonance at 0 V, nm")
    p.add_argument("--gains", help="CSV of measured transmissions at all (B+1)-bit codes")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate-mvm", help="one MVM through the optical chain")
    _sim(p)
    p.add_argument("--y", help="weight matrix (CSV or JSON)")
    p.add_argument("--z", help="input vector (CSV or JSON)")
    p.set_defaults(func=cmd_simulate_mvm)

    p = sub.add_parser("simulate-dmmm", help="all-optical X.Y.Z product")
    _sim(p)
    p.add_argument("--x")
    p.add_argument("--y")
    p.add_argument("--z")
    p.add_argument("--strategy", default="parallel",
                   help="parallel | time_multiplexed | hybrid:<k>")
    p.set_defaults(func=cmd_simulate_dmmm)

    p = sub.add_parser("simulate-attention", help="attention head(s) with fidelity report")
    _sim(p)
    p.add_argument("--x", help="token matrix, n x d")
    p.add_argument("--weights", help="JSON: {w_q, w_k, w_v[, d_k, shift]} or {heads: [...], w_o}")
    p.add_argument("--backend-kind", choices=("exact", "oracle", "simulated"),
                   default="simulated")
    p.add_argument("--shift", type=int, help="score right-shift m")
    p.add_argument("--lut-range", type=float, default=LUT_RANGE,
                   help="exp table covers [-range, 0]")
    p.add_argument("--lut-frac-bits", type=int, default=LUT_FRAC_BITS,
                   help="exp table step is 2^-bits")
    p.add_argument("--lut-log-entries", type=int, default=LUT_LOG_ENTRIES,
                   help="log table entries over [0, ln K]")
    p.set_defaults(func=cmd_simulate_attention)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CombAccelError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        sys.stderr.write(json.dumps(err) + "\n")
        return exc.exit_code
    except OSError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": 2}
        sys.stderr.write(json.dumps(err) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
