"""Command line interface: ``tmeplab {validate,mgf,tdl-sweep,balance,spin-sweep}``.

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 resource budget exceeded.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import FORMATS, RunConfig, load_config
from .errors import ConfigError, ResourceError, ValidationError
from .validation import MUTATIONS, run_validation

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RESOURCE = 0, 1, 2, 3
THREADS_ENV = "TMEPLAB_THREADS"

log = logging.getLogger("tmeplab")


def _threads(arg: int | None) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"not an integer: {env!r}", key=THREADS_ENV) from exc
    return os.cpu_count() or 1


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.format is not None:
        cfg.output.format = args.format
    # --out only relocates the files; it is not part of the computation and
    # is kept out of the embedded config so reports stay byte-identical
    return cfg.validate()


def _emit(cfg: RunConfig, out_dir: str | None, stem: str, json_text: str | None, csv_text: str | None) -> list[Path]:
    out = Path(out_dir or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = cfg.output.stem or stem
    written = []
    if json_text is not None and cfg.output.format in ("json", "both"):
        p = out / f"{stem}.json"
        p.write_text(json_text)
        written.append(p)
    if csv_text is not None and cfg.output.format in ("csv", "both"):
        p = out / f"{stem}.csv"
        p.write_text(csv_text)
        written.append(p)
    for p in written:
        log.info("wrote %s", p)
    return written


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def cmd_validate(args) -> int:
    cfg = _resolve(args)
    report = run_validation(cfg.seed, mutate=args.mutate)
    for s in report.suites:
        status = "PASS" if s.passed else "FAIL"
        print(f"{status}  {s.name}" + (f"  ({s.error.splitlines()[0]})" if s.error else ""))
        for c in s.checks:
            if not c.passed:
                print(f"      {c.name}: {c.value:.3e} > {c.tol:.1e}")
    payload = report.to_dict()
    payload["config"] = cfg.to_dict()
    if args.out is not None or args.config is not None:
        _emit(cfg, args.out, "validate", _dumps(payload), None)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_mgf(args) -> int:
    from .experiments import mgf_csv, mgf_table

    cfg = _resolve(args)
    table = mgf_table(cfg)
    _emit(cfg, args.out, "mgf", _dumps(table), mgf_csv(table))
    print(f"max |law - modular| = {table['max_law_vs_modular']:.3e} (tol {cfg.numerics.route_tol:.1e})")
    print(f"max |cesaro - modular| = {table['max_cesaro_vs_modular']:.3e} (R = {table['meta']['cesaro_R']:g})")
    return EXIT_OK if table["passed"] else EXIT_FAIL


def _sweep(args, force_spin: bool) -> int:
    from .experiments import spin_sweep, volume_sweep

    cfg = _resolve(args)
    threads = _threads(args.threads)
    report = spin_sweep(cfg, threads) if force_spin else volume_sweep(cfg, threads)
    _emit(cfg, args.out, "spin_sweep" if force_spin else "tdl_sweep", report.to_json(), report.to_csv())
    for c in report.cauchy:
        print(f"{c['scheme']:>24s}  L={c['L']:<3d} delta={c['delta']:.3e}")
    return EXIT_OK


def cmd_tdl_sweep(args) -> int:
    return _sweep(args, force_spin=False)


def cmd_spin_sweep(args) -> int:
    return _sweep(args, force_spin=True)


def cmd_balance(args) -> int:
    from .experiments import balance_csv, balance_table

    cfg = _resolve(args)
    table = balance_table(cfg)
    _emit(cfg, args.out, "balance", _dumps(table), balance_csv(table))
    worst = max((r["balance_residual"] for r in table["rows"] if r["balance_residual"] is not None), default=0.0)
    print(f"max balance residual = {worst:.3e}")
    return EXIT_OK if worst <= 1e-8 else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tmeplab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration (defaults when omitted)")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--threads", type=int, help=f"worker threads (default: ${THREADS_ENV} or all cores)")
    common.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides the config)")
    common.add_argument("--format", choices=FORMATS, help="report format (overrides output.format)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("validate", parents=[common], help="run the invariant suites")
    p.add_argument("--mutate", choices=MUTATIONS, help="inject a known bug to check that the suites catch it")
    p.set_defaults(func=cmd_validate)
    sub.add_parser("mgf", parents=[common], help="MGF by all routes with pairwise discrepancies").set_defaults(func=cmd_mgf)
    sub.add_parser("tdl-sweep", parents=[common], help="volume sweep with Cauchy diagnostics").set_defaults(func=cmd_tdl_sweep)
    sub.add_parser("balance", parents=[common], help="entropy balance residual table").set_defaults(func=cmd_balance)
    sub.add_parser("spin-sweep", parents=[common], help="volume sweep for a spin model").set_defaults(func=cmd_spin_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceError as exc:
        print(f"resource budget exceeded: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except ValidationError as exc:
        print(f"invalid model: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
