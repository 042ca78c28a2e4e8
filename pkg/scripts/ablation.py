"""Train the policy variants side by side and write their learning curves.

Variants: the full structured policy (TVR + NN + SF), no safety filter,
no TVR guidance, and the frozen TVR planner on its own.

    python3 scripts/ablation.py --config configs/learning_trend.yaml --out runs/ablation
"""
from __future__ import annotations

import argparse
import csv
import json
import time
from pathlib import Path

import numpy as np

from caplearn import config as C
from caplearn.ppo import train

VARIANTS = {
    "tvr_nn_sf": {},
    "tvr_nn": {"actions": {"use_sf": False}},
    "nn_sf": {"actions": {"use_tvr": False}},
    "tvr_only": {"actions": {"use_nn": False, "use_sf": False}, "train": {"update_policy": False}},
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=Path(__file__).resolve().parents[1] / "configs" / "learning_trend.yaml")
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--episodes", type=int, help="override the training length of every variant")
    ap.add_argument("--variants", nargs="+", choices=sorted(VARIANTS), default=list(VARIANTS))
    ap.add_argument("--window", type=int, default=20, help="episodes averaged for first/last summaries")
    args = ap.parse_args()

    base = C.load(args.config)
    if args.episodes is not None:
        base = base.replace(train={"episodes": args.episodes})
    args.out.mkdir(parents=True, exist_ok=True)
    summary = {}
    with open(args.out / "ablation_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "episode", "average_return", "terminations", "mean_asf", "mean_eps"])
        for name in args.variants:
            cfg = base.replace(**VARIANTS[name])
            start = time.perf_counter()
            _, history = train(C.env_factory(cfg), C.policy_bundle(cfg), C.train_config(cfg), cfg.seed,
                               C.gp_hyper(cfg))
            for h in history:
                w.writerow([name, h["episode"], h["average_return"], h["terminations"], h["mean_asf"], h["mean_eps"]])
            fh.flush()
            ret = np.array([h["average_return"] for h in history])
            term = np.array([h["terminations"] for h in history])
            k = min(args.window, len(history))
            summary[name] = {
                "episodes": len(history),
                "first_return": float(ret[:k].mean()) if k else None,
                "last_return": float(ret[-k:].mean()) if k else None,
                "early_terminations": int(term[:k].sum()),
                "total_terminations": int(term.sum()),
                "seconds": time.perf_counter() - start,
            }
            print(name, json.dumps(summary[name]), flush=True)
    (args.out / "ablation_summary.json").write_text(json.dumps(summary, indent=2) + "\n")


if __name__ == "__main__":
    main()
