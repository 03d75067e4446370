"""Command-line entry point: ``rkcq {tableau,semigroup,heat-sphere,diagnostics}``.

Exit codes: 0 success, 1 numerical failure or invalid report, 2 usage error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .report import ConvergenceReport, emit_report
from .tableau import (
    BUILTIN_NAMES,
    SingularityError,
    builtin_tableau,
    classify_method,
    order_failures,
    validate_order_conditions,
)

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _levels(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be comma-separated integers, got {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("levels must be positive integers")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise argparse.ArgumentTypeError("levels must be strictly increasing (they divide T)")
    return vals


def _grid(text: str) -> int | str:
    if text == "auto":
        return text
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("grid must be an integer >= 3 or 'auto'") from None
    if n < 3:
        raise argparse.ArgumentTypeError("grid must be at least 3")
    return n


def _positive(text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (x > 0 and math.isfinite(x)):
        raise argparse.ArgumentTypeError("expected a positive finite number")
    return x


def thread_cap() -> int:
    """``RKCQ_THREADS`` (0 or unset: serial)."""
    raw = os.environ.get("RKCQ_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"RKCQ_THREADS must be a non-negative integer, got {raw!r}") from None
    if n < 0:
        raise UsageError("RKCQ_THREADS must be non-negative")
    return n


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rkcq", description="Runge-Kutta convolution quadrature lab")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    tp = sub.add_parser("tableau", help="inspect a built-in Butcher tableau")
    tp.add_argument("name", choices=BUILTIN_NAMES)
    tp.add_argument("--validate", action="store_true", help="check order conditions and A-stability")
    tp.add_argument("--json", action="store_true", help="machine-readable output")

    sp = sub.add_parser("semigroup", help="convergence study on the finite-difference heat testbed")
    sp.add_argument("--method", default="radau_iia_2", choices=BUILTIN_NAMES)
    sp.add_argument("--quantity", default="step", choices=("step", "integrated", "differentiated", "strong"))
    sp.add_argument("--grid", type=_grid, default=20, help="interior grid points, or 'auto' for ceil(1/k)")
    sp.add_argument("--levels", type=_levels, default=[16, 32, 64, 128], help="divisors of T, e.g. 16,32,64")
    sp.add_argument("--T", type=_positive, default=1.0, dest="T")
    sp.add_argument("--forcing", choices=("manufactured", "zero"), default="manufactured")
    sp.add_argument("--reference", choices=("auto", "numerical"), default="auto")
    sp.add_argument("--out", type=Path, help="CSV path; a .json sidecar is written next to it")

    hp = sub.add_parser("heat-sphere", help="density convergence for heat conduction outside the unit sphere")
    hp.add_argument("--method", default="radau_iia_3", choices=BUILTIN_NAMES)
    hp.add_argument("--degree", type=int, default=2)
    hp.add_argument("--T", type=_positive, default=6.0, dest="T")
    hp.add_argument("--levels", type=_levels, default=[32, 64, 128, 256])
    hp.add_argument("--out", type=Path)

    dp = sub.add_parser("diagnostics", help="run the acceptance checks")
    dp.add_argument("--out-dir", type=Path, help="directory for the stiff-regime reports")
    dp.add_argument("--json", action="store_true")
    return ap


def _manifest(argv: list[str], config: dict, report: ConvergenceReport, outputs: list[str]) -> dict:
    digest = hashlib.sha256(report.to_csv().encode()).hexdigest()
    return {
        "command_line": ["rkcq", *argv],
        "configuration": config,
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "outputs": outputs,
        "results_sha256": digest,
    }


def _finish(report: ConvergenceReport, args, argv, config) -> int:
    if args.out is None:
        sys.stdout.write(report.to_csv())
    else:
        csv_path = args.out if args.out.suffix == ".csv" else args.out.with_suffix(".csv")
        outputs = [str(csv_path), str(csv_path.with_suffix(".json"))]
        emit_report(report, csv_path, manifest=_manifest(argv, config, report, outputs))
        print(f"wrote {outputs[0]} and {outputs[1]}")
    if not report.valid:
        print("error: report is invalid (reference check failed)", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_tableau(args) -> int:
    t = builtin_tableau(args.name)
    payload = t.to_dict()
    failures = []
    if args.validate:
        res = validate_order_conditions(t)
        failures = order_failures(res)
        payload["order_residual_max"] = max(r.residual for r in res)
        payload["order_failures"] = [r.label for r in failures]
        payload["classification"] = classify_method(t).to_dict()
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        with np.printoptions(precision=16, suppress=False, linewidth=120):
            print(f"{t.name}: m={t.m}, (q, p) = ({t.q}, {t.p}), r(inf) = {t.r_inf:.3g}")
            print("Q =\n" + str(t.Q))
            print("b = " + str(t.b))
            print("c = " + str(t.c))
        if args.validate:
            cls = payload["classification"]
            print(f"order conditions: {len(failures)} failures (max residual {payload['order_residual_max']:.2e})")
            print(f"A-stable: {cls['a_stable']}, stiffly accurate: {cls['stiffly_accurate']}")
    return EXIT_NUMERICAL if failures else EXIT_OK


def cmd_semigroup(args, argv) -> int:
    from .semigroup import boundary_driven_heat_problem, manufactured_heat_problem, measure_theorem_rates

    t = builtin_tableau(args.method)
    if args.quantity in ("differentiated", "strong") and not t.stiffly_accurate:
        raise UsageError(f"--quantity {args.quantity} needs a stiffly accurate method; {t.name} is not")
    build = manufactured_heat_problem if args.forcing == "manufactured" else boundary_driven_heat_problem
    ks = [args.T / L for L in args.levels]
    if args.grid == "auto":
        prob = lambda k: build(math.ceil(1 / k), args.T)  # noqa: E731
    else:
        prob = build(args.grid, args.T)
    report = measure_theorem_rates(prob, t, ks, args.quantity, reference=args.reference, workers=thread_cap())
    report.metadata.update({"grid": args.grid, "T": args.T, "levels": args.levels, "forcing": args.forcing})
    config = {k: v for k, v in vars(args).items() if k not in ("out", "command")}
    return _finish(report, args, argv, config)


def cmd_heat(args, argv) -> int:
    from .heat_sphere import MAX_DEGREE, HeatExperimentConfig, run_heat_convergence

    if not 0 <= args.degree <= MAX_DEGREE:
        raise UsageError(f"--degree must be in [0, {MAX_DEGREE}]")
    try:
        cfg = HeatExperimentConfig(
            n=args.degree, T=args.T, tableau=builtin_tableau(args.method), ks=[args.T / L for L in args.levels]
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = run_heat_convergence(cfg, workers=thread_cap())
    config = {k: v for k, v in vars(args).items() if k not in ("out", "command")}
    return _finish(report, args, argv, config)


def cmd_diagnostics(args) -> int:
    from .acceptance import format_result, run_all

    results = run_all(out_dir=args.out_dir, echo=None if args.json else print)
    if args.json:
        print(json.dumps([r.to_dict() for r in results], indent=2))
    passed = sum(r.passed for r in results)
    if not args.json:
        print(f"{passed}/{len(results)} criteria passed")
    return EXIT_OK if passed == len(results) else EXIT_NUMERICAL


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help/--version, 2 for usage errors
        return int(exc.code or 0)
    try:
        thread_cap()
        if args.command == "tableau":
            return cmd_tableau(args)
        if args.command == "semigroup":
            return cmd_semigroup(args, argv)
        if args.command == "heat-sphere":
            return cmd_heat(args, argv)
        return cmd_diagnostics(args)
    except UsageError as exc:
        print(f"rkcq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SingularityError, ArithmeticError, np.linalg.LinAlgError, ValueError, OSError) as exc:
        print(f"rkcq: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
