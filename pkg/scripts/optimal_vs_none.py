"""Optimal feedback against no intervention at L = 1, with four-panel figures."""

import argparse
import json
from pathlib import Path

from epictrl.config import load_config
from epictrl.experiments import cached_grid, run_ensemble
from epictrl.simulate import PolicySource, export_ensemble


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path)
    ap.add_argument("--preset", choices=("desk", "paper"), default="desk")
    ap.add_argument("--out", type=Path, default=Path("out/optimal"))
    args = ap.parse_args()

    cfg = load_config(args.config, args.preset)
    grid = cached_grid(cfg, args.out / "grids")
    summary = {}
    for name, policy in [("optimal", PolicySource.feedback(grid)), ("none", PolicySource())]:
        e = run_ensemble(cfg, policy)
        export_ensemble(e, args.out, name, {"fingerprint": f"{grid.fingerprint:016x}"})
        summary[name] = {**e.metrics.to_dict(), "discounted_cost": e.cost_summary()}
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
