"""Aggregate finished runs into summary.csv and SVG charts.

Per replicate (one seed of one run directory) the training and evaluation
series are smoothed with a trailing moving average, then the mean and
standard error are taken across replicates at each step. Run directories
must share the same configuration apart from seeds and output paths.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from mtreplay.harness.svg import Series, line_chart

MOVING_AVERAGE_WINDOW = 20
_IGNORED_CONFIG_KEYS = {"seeds", "out_dir", "build"}


def moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Trailing moving average: out[i] = mean(values[max(0, i-w+1) .. i])."""
    out = np.empty(len(values), dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _check_compatible(dirs: list[Path]) -> None:
    reference = None
    for d in dirs:
        cfg = json.loads((d / "config.json").read_text())
        trimmed = {k: v for k, v in cfg.items() if k not in _IGNORED_CONFIG_KEYS}
        if reference is None:
            reference = trimmed
        elif trimmed != reference:
            raise ValueError(f"config in {d} does not match the first run dir")


def _across_replicates(per_rep: list[tuple[np.ndarray, np.ndarray]],
                       window: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Smooth each replicate then average across them point by point."""
    steps = per_rep[0][0]
    for s, _ in per_rep[1:]:
        if len(s) != len(steps) or not np.array_equal(s, steps):
            raise ValueError("replicates disagree on logging steps; "
                             "runs are not comparable")
    smoothed = np.stack([moving_average(y, window) for _, y in per_rep])
    mean = smoothed.mean(axis=0)
    n = smoothed.shape[0]
    se = (smoothed.std(axis=0, ddof=1) / math.sqrt(n) if n > 1
          else np.zeros_like(mean))
    return steps, mean, se, n


def aggregate(run_dirs: list[str | Path], out_dir: str | Path,
              window: int = MOVING_AVERAGE_WINDOW) -> Path:
    dirs = [Path(d) for d in run_dirs]
    if not dirs:
        raise ValueError("need at least one run directory")
    _check_compatible(dirs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    # replicate key = (dir index, seed)
    train: dict[tuple, list[tuple[int, float]]] = defaultdict(list)
    evals: dict[tuple, dict[int, dict[float, list[float]]]] = defaultdict(
        lambda: defaultdict(lambda: defaultdict(list)))
    gravities: list[float] = []
    for di, d in enumerate(dirs):
        for row in _read_csv(d / "train_log.csv"):
            train[(di, int(row["seed"]))].append(
                (int(row["global_step"]), float(row["episode_return"])))
        for row in _read_csv(d / "eval_log.csv"):
            g = float(row["gravity"])
            if g not in gravities:
                gravities.append(g)
            evals[(di, int(row["seed"]))][int(row["global_step"])][g].append(
                float(row["episode_return"]))

    summary_rows: list[list] = []
    charts: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def add_series(name: str, per_rep: list[tuple[np.ndarray, np.ndarray]]) -> None:
        steps, mean, se, n = _across_replicates(per_rep, window)
        charts[name] = (steps, mean, se)
        for s, m, e in zip(steps, mean, se):
            summary_rows.append([name, int(s), float(m), float(e), n])

    if train:
        per_rep = [
            (np.array([s for s, _ in rows]), np.array([r for _, r in rows]))
            for rows in (sorted(v) for v in train.values())
        ]
        add_series("train", per_rep)

    if evals:
        rep_keys = sorted(evals.keys())
        per_rep_mean = []
        per_gravity: dict[float, list[tuple[np.ndarray, np.ndarray]]] = {
            g: [] for g in gravities}
        for key in rep_keys:
            events = sorted(evals[key].items())
            steps = np.array([s for s, _ in events])
            mean_eval = np.array([
                np.mean([np.mean(per_g) for per_g in by_g.values()])
                for _, by_g in events])
            per_rep_mean.append((steps, mean_eval))
            for g in gravities:
                ys = np.array([np.mean(by_g[g]) for _, by_g in events])
                per_gravity[g].append((steps, ys))
        add_series("eval_mean", per_rep_mean)
        for g in gravities:
            add_series(f"eval_{g:g}", per_gravity[g])

    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series", "global_step", "mean_return", "se", "n_seeds"])
        writer.writerows(summary_rows)

    if "train" in charts:
        s, m, e = charts["train"]
        line_chart(out / "train.svg", "Training episode return",
                   "environment step", "return",
                   [Series("train", s, m, e)])
    if "eval_mean" in charts:
        s, m, e = charts["eval_mean"]
        line_chart(out / "eval_mean.svg", "Mean evaluation return",
                   "environment step", "return",
                   [Series("eval mean", s, m, e)])
    gravity_series = [Series(name.replace("eval_", "g="), *charts[name])
                      for name in charts if name.startswith("eval_")
                      and name != "eval_mean"]
    if gravity_series:
        line_chart(out / "eval_per_gravity.svg",
                   "Per-gravity evaluation return", "environment step",
                   "return", gravity_series)
    return out
