"""Residual histories of the policy and explicit sweep schemes on the desk grid.

The explicit linear recursion does not settle at the reference parameters;
this script records how its residual evolves next to policy iteration.
"""

import argparse
import dataclasses
import json
from pathlib import Path

from epictrl.config import load_config
from epictrl.solver import solve


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", choices=("desk", "paper"), default="desk")
    ap.add_argument("--iterations", type=int, default=12)
    ap.add_argument("--out", type=Path, default=Path("out/schemes.json"))
    args = ap.parse_args()

    cfg = load_config(None, args.preset)
    histories = {}
    for scheme, integrand in [("policy", "consistent"), ("explicit", "consistent"), ("explicit", "literal")]:
        solver = dataclasses.replace(cfg.solver, scheme=scheme, integrand=integrand, max_iterations=args.iterations)
        g = solve(cfg.model, solver, cfg.grid)
        key = scheme if scheme == "policy" else f"{scheme}/{integrand}"
        histories[key] = {"residuals": g.residual_history, "converged": g.converged, "sup_v": g.sup_norm()}
        print(key, [round(r, 2) for r in g.residual_history])
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(histories, indent=2))


if __name__ == "__main__":
    main()
