"""Train one configuration and print windowed learning-curve statistics.

    python3 scripts/learning_curve.py --config configs/learning_trend.yaml --out runs/trend

The run directory has the same layout as ``caplearn train`` and can be fed
to ``caplearn export``.
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from caplearn.cli import main as cli_main


def windows(values: np.ndarray, width: int) -> list[float]:
    return [float(values[i : i + width].mean()) for i in range(0, len(values), width)]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=Path(__file__).resolve().parents[1] / "configs" / "learning_trend.yaml")
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--episodes", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--window", type=int, default=20)
    args = ap.parse_args()

    argv = ["train", "--config", str(args.config), "--out", str(args.out)]
    if args.episodes is not None:
        argv += ["--episodes", str(args.episodes)]
    if args.seed is not None:
        argv += ["--seed", str(args.seed)]
    code = cli_main(argv)
    if code:
        raise SystemExit(code)
    rows = [json.loads(line) for line in (args.out / "metrics.jsonl").read_text().splitlines() if line.strip()]
    ret = np.array([r["average_return"] for r in rows])
    term = np.array([r["terminations"] for r in rows], dtype=float)
    report = {
        "window": args.window,
        "return_windows": windows(ret, args.window),
        "termination_windows": windows(term, args.window),
        "first_to_last_ratio": float(ret[-args.window:].mean() / ret[: args.window].mean()) if len(ret) else None,
    }
    (args.out / "learning_summary.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
