"""Command-line front end: ``epictrl {solve,simulate,sweep,accept}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import warnings
from pathlib import Path

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, help="INI scenario file")
    sub.add_argument("--seed", type=int, help="overrides solver and ensemble seeds")
    sub.add_argument("--out", type=Path, help="output directory")
    sub.add_argument("--preset", choices=("desk", "paper"), default="desk")
    sub.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="epictrl", description="Optimal lockdown under stochastic transmission.")
    subs = ap.add_subparsers(dest="command", required=True)

    s = subs.add_parser("solve", help="solve for the value grid and write it")
    _common(s)
    s.add_argument("--max-iterations", type=int)
    s.add_argument("--scheme", choices=("policy", "explicit"))

    s = subs.add_parser("simulate", help="simulate an ensemble and export CSV, SVG and metrics")
    _common(s)
    s.add_argument("--policy", default="feedback", help="feedback, none or constant:<v>")
    s.add_argument("--grid", type=Path, help="value grid file (required for feedback)")
    s.add_argument("--n-paths", type=int)

    s = subs.add_parser("sweep", help="solve and simulate over cap_L or sigma_vol")
    _common(s)
    s.add_argument("--param", choices=("cap_L", "sigma_vol"))
    s.add_argument("--values", help="comma-separated values")
    s.add_argument("--drift-modes", help="comma-separated subset of paper,normalized")

    s = subs.add_parser("accept", help="run the acceptance criteria")
    _common(s)
    s.add_argument("--only", help="comma-separated criterion numbers")
    s.add_argument("--tol", action="append", metavar="KEY=VALUE", help="tolerance override, e.g. 3.onset=15")
    s.add_argument("--cache", type=Path, help="grid cache directory (default <out>/grids)")
    return ap


def _load(args):
    from .config import load_config

    if args.config is not None and not args.config.is_file():
        raise UsageError(f"config file not found: {args.config}")
    cfg = load_config(args.config, args.preset)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise UsageError("seed must be an unsigned 64-bit integer")
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, output_dir=str(args.out))
    return cfg


def cmd_solve(args) -> int:
    from .grid import save_grid
    from .solver import solve

    cfg = _load(args)
    if args.max_iterations is not None:
        cfg = dataclasses.replace(cfg, solver=dataclasses.replace(cfg.solver, max_iterations=args.max_iterations))
    if args.scheme is not None:
        cfg = dataclasses.replace(cfg, solver=dataclasses.replace(cfg.solver, scheme=args.scheme))
    cfg.validate()
    out = Path(cfg.output_dir)
    g = solve(cfg.model, cfg.solver, cfg.grid, callback=lambda g: print(f"sweep {g.iteration}: residual {g.residual:.6g}"))
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "scenario.ini")
    path = save_grid(g, out / "grid.bin")
    print(f"wrote {path} (fingerprint {g.fingerprint:016x}, converged={g.converged})")
    return EXIT_OK if g.converged else EXIT_FAIL


def cmd_simulate(args) -> int:
    from .experiments import run_ensemble
    from .grid import load_grid
    from .simulate import PolicySource, export_ensemble
    from .solver import grid_key

    cfg = _load(args)
    cfg.validate()
    grid = None
    if args.policy == "feedback":
        if args.grid is None:
            raise UsageError("--policy feedback needs --grid")
        if not args.grid.exists():
            raise UsageError(f"grid file not found: {args.grid}")
        grid = load_grid(args.grid)
        if grid.fingerprint != grid_key(cfg.model, cfg.solver, cfg.grid):
            logging.getLogger(__name__).warning("grid was solved under a different configuration")
    policy = PolicySource.parse(args.policy, grid)
    e = run_ensemble(cfg, policy, n_paths=args.n_paths)
    extra = {"params": cfg.model.to_dict()}
    if grid is not None:
        extra["fingerprint"] = f"{grid.fingerprint:016x}"
    paths = export_ensemble(e, cfg.output_dir, "ensemble", extra)
    print(json.dumps(e.metrics.to_dict(), indent=2))
    print("wrote " + ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .config import SweepConfig
    from .experiments import run_sweep
    from .model import validate_params

    cfg = _load(args)
    sweep = cfg.sweep
    if args.param is not None:
        sweep = dataclasses.replace(sweep, param=args.param)
    if args.values is not None:
        sweep = dataclasses.replace(sweep, values=tuple(float(v) for v in args.values.split(",")))
    if args.drift_modes is not None:
        sweep = dataclasses.replace(sweep, drift_modes=tuple(m.strip() for m in args.drift_modes.split(",")))
    cfg = dataclasses.replace(cfg, sweep=SweepConfig(**dataclasses.asdict(sweep)))
    cfg.validate()
    if sweep.param is None or not sweep.values:
        raise UsageError("sweep needs --param and --values (or a [sweep] section)")
    for mode in sweep.drift_modes:
        validate_params(cfg.model.replace(drift_mode=mode))
    tables = run_sweep(cfg)
    for mode, rows in tables.items():
        print(f"[{mode}]")
        for r in rows:
            m = r.metrics
            print(f"  {sweep.param}={r.value:g}: first={m.first_containment_day} onset={m.severe_onset_day} "
                  f"recovered={m.final_recovered:.3f} min_Rt={m.min_mean_Rt:.3f} RtSt<1={m.first_day_RtSt_below_1}")
    return EXIT_OK


def cmd_accept(args) -> int:
    from .acceptance import parse_tolerances, run_acceptance

    cfg = _load(args)
    cfg.validate()
    try:
        tol = parse_tolerances(args.tol)
        only = [int(c) for c in args.only.split(",")] if args.only else None
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if only and not set(only) <= set(range(1, 8)):
        raise UsageError("criteria are numbered 1 to 7")
    out = Path(cfg.output_dir)
    report = run_acceptance(cfg, args.cache or out / "grids", only, tol, progress=lambda r: print(r.line(), flush=True))
    out.mkdir(parents=True, exist_ok=True)
    (out / "acceptance.json").write_text(report.to_json())
    print(report.table().splitlines()[-1])
    return EXIT_OK if report.passed else EXIT_FAIL


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "sweep": cmd_sweep, "accept": cmd_accept}


def main(argv=None) -> int:
    from .model import ParameterError
    from .grid import GridFileError
    from .solver import set_threads_from_env

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    warnings.filterwarnings("ignore", module="numba")
    try:
        set_threads_from_env()
        return COMMANDS[args.command](args)
    except (UsageError, ParameterError, GridFileError) as exc:
        print(f"epictrl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
