"""Lockdown cap sweep L in {0.2, 0.4, 0.6, 0.8} under both drift readings."""

import argparse
import dataclasses
from pathlib import Path

from epictrl.config import SweepConfig, load_config
from epictrl.experiments import run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path)
    ap.add_argument("--preset", choices=("desk", "paper"), default="desk")
    ap.add_argument("--out", type=Path, default=Path("out/cap"))
    ap.add_argument("--values", default="0.2,0.4,0.6,0.8")
    args = ap.parse_args()

    cfg = load_config(args.config, args.preset)
    values = tuple(float(v) for v in args.values.split(","))
    cfg = dataclasses.replace(cfg, sweep=SweepConfig("cap_L", values, ("paper", "normalized")))
    for mode, rows in run_sweep(cfg, args.out).items():
        print(f"{mode:>10}  " + "  ".join(f"L={r.value:g}: {r.metrics.final_recovered:.3f} "
                                           f"(day {r.metrics.first_containment_day})" for r in rows))


if __name__ == "__main__":
    main()
