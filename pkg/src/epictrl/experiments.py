"""Experiment drivers shared by the CLI, the scripts and the acceptance suite."""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

from .config import ScenarioConfig
from .grid import GridFileError, ValueGrid, load_grid, save_grid
from .model import ModelParams
from .simulate import EnsembleResult, PolicySource, ScalarMetrics, export_ensemble, simulate_closed_loop
from .solver import grid_key, solve

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("value", "first_containment_day", "severe_onset", "final_recovered", "min_mean_Rt",
                 "first_day_RtSt_below_1")


def cached_grid(cfg: ScenarioConfig, cache_dir, model: ModelParams | None = None) -> ValueGrid:
    """Load the grid for ``model`` from ``cache_dir`` or solve and store it.

    Files are named by content fingerprint, so a cached grid is reused only
    when parameters, solver settings and grid layout all match.
    """
    p = model or cfg.model
    key = grid_key(p, cfg.solver, cfg.grid)
    cache_dir = Path(cache_dir)
    path = cache_dir / f"grid-{key:016x}.bin"
    if path.exists():
        try:
            return load_grid(path, expected_fingerprint=key)
        except GridFileError as exc:
            log.warning("ignoring unreadable cached grid: %s", exc)
    cache_dir.mkdir(parents=True, exist_ok=True)
    g = solve(p, cfg.solver, cfg.grid)
    save_grid(g, path)
    return g


def run_ensemble(cfg: ScenarioConfig, policy: PolicySource, model: ModelParams | None = None,
                 n_paths: int | None = None, horizon: float | None = None) -> EnsembleResult:
    p = model or cfg.model
    scheme = cfg.sim.scheme if horizon is None else dataclasses.replace(cfg.sim.scheme, horizon=horizon)
    return simulate_closed_loop(p, policy, scheme, cfg.sim.state, n_paths or cfg.sim.n_paths,
                                xi_eps=cfg.sim.xi_eps)


@dataclass
class SweepRow:
    drift_mode: str
    value: float
    metrics: ScalarMetrics
    fingerprint: int
    converged: bool


def sweep_models(cfg: ScenarioConfig, drift_mode: str | None = None) -> list[tuple[float, ModelParams]]:
    if cfg.sweep.param is None or not cfg.sweep.values:
        raise ValueError("sweep needs a parameter and at least one value")
    base = cfg.model if drift_mode is None else cfg.model.replace(drift_mode=drift_mode)
    return [(float(v), base.replace(**{cfg.sweep.param: float(v)})) for v in cfg.sweep.values]


def run_sweep(cfg: ScenarioConfig, out_dir=None, cache_dir=None, export: bool = True) -> dict[str, list[SweepRow]]:
    """Solve and simulate every sweep cell; write per-cell artifacts and ``table.csv`` per drift mode."""
    out_dir = Path(out_dir or cfg.output_dir)
    cache_dir = Path(cache_dir or out_dir / "grids")
    modes = cfg.sweep.drift_modes or (cfg.model.drift_mode,)
    tables: dict[str, list[SweepRow]] = {}
    for mode in modes:
        rows = []
        for value, p in sweep_models(cfg, mode):
            g = cached_grid(cfg, cache_dir, p)
            e = run_ensemble(cfg, PolicySource.feedback(g), p)
            rows.append(SweepRow(mode, value, e.metrics, g.fingerprint, g.converged))
            log.info("%s %s=%g: %s", mode, cfg.sweep.param, value, e.metrics)
            if export:
                extra = {"params": p.to_dict(), "fingerprint": f"{g.fingerprint:016x}", "converged": g.converged}
                export_ensemble(e, out_dir / mode, f"{cfg.sweep.param}={value:g}", extra)
        tables[mode] = rows
        if export:
            write_table(rows, out_dir / mode / "table.csv")
    return tables


def _cell(v) -> str:
    return "" if v is None else f"{v:g}"


def write_table(rows: list[SweepRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        for r in rows:
            m = r.metrics
            w.writerow([f"{r.value:g}", _cell(m.first_containment_day), _cell(m.severe_onset_day),
                        _cell(m.final_recovered), _cell(m.min_mean_Rt), _cell(m.first_day_RtSt_below_1)])
    return path
