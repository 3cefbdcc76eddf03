"""Closed-loop layout ablation: full granularity layout vs temporal-2Hz only.

Trains one small planner per (layout, seed) and drives it through held-out
scenarios, then prints a per-layout table averaged over seeds.
"""
import argparse
import json
import logging
from dataclasses import asdict
from pathlib import Path

from mgplan.experiments import AblationConfig, format_table, run_ablation


def main():
    d = AblationConfig()
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=list(d.seeds))
    ap.add_argument("--rows", type=int, nargs="+", default=list(d.rows))
    ap.add_argument("--epochs", type=int, default=d.epochs)
    ap.add_argument("--n-train", type=int, default=d.n_train)
    ap.add_argument("--n-test", type=int, default=d.n_test)
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    logging.getLogger("mgplan.training.loop").setLevel(logging.WARNING)

    cfg = AblationConfig(rows=tuple(args.rows), seeds=tuple(args.seeds), epochs=args.epochs,
                         n_train=args.n_train, n_test=args.n_test)
    cells, means = run_ablation(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(
        {"config": asdict(cfg), "cells": cells, "means": {str(k): v for k, v in means.items()}}, indent=2))
    print(format_table(means))


if __name__ == "__main__":
    main()
