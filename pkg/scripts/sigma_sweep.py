"""Transmission volatility sweep sigma in {1, 5, 10} at L = 1."""

import argparse
import dataclasses
from pathlib import Path

from epictrl.config import SweepConfig, load_config
from epictrl.experiments import run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path)
    ap.add_argument("--preset", choices=("desk", "paper"), default="desk")
    ap.add_argument("--out", type=Path, default=Path("out/sigma"))
    args = ap.parse_args()

    cfg = load_config(args.config, args.preset)
    cfg = dataclasses.replace(cfg, sweep=SweepConfig("sigma_vol", (1.0, 5.0, 10.0)))
    for mode, rows in run_sweep(cfg, args.out).items():
        for r in rows:
            m = r.metrics
            print(f"{mode} sigma={r.value:g}: first containment {m.first_containment_day}, "
                  f"recovered {m.final_recovered:.3f}, min R_t {m.min_mean_Rt:.2f}")


if __name__ == "__main__":
    main()
