"""Evaluation metrics: normalized improvement, normalized regret, CIs and rank curves."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

NI_EPS = 1e-8
CSV_SCHEMA_VERSION = 1


def normalized_improvement(context_values, best_so_far, eps: float = NI_EPS) -> np.ndarray:
    """Improvement over the context minimum, in units of the context's value range.

    The normalizer is frozen to the initial context so that values at
    different steps stay comparable.  Negative values are clamped to 0.
    """
    ctx = np.asarray(context_values, dtype=np.float64)
    if ctx.size == 0:
        raise ValueError("normalized improvement needs a non-empty context")
    lo, hi = ctx.min(), ctx.max()
    ni = (lo - np.asarray(best_so_far, dtype=np.float64)) / (hi - lo + eps)
    return np.maximum(ni, 0.0)


def normalized_regret(best_so_far, y_min: float, y_max: float) -> np.ndarray:
    if not y_max > y_min:
        raise ValueError(f"degenerate regret normalizer: y_min={y_min}, y_max={y_max}")
    r = (np.asarray(best_so_far, dtype=np.float64) - y_min) / (y_max - y_min)
    return np.clip(r, 0.0, 1.0)


@dataclass
class Aggregate:
    mean: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n: int

    @property
    def has_ci(self) -> bool:
        return self.n >= 2


def aggregate(series, confidence: float = 0.95) -> Aggregate:
    """Mean and Student-t interval per step over tasks (rows).  NaNs propagate."""
    arr = np.atleast_2d(np.asarray(series, dtype=np.float64))
    n = arr.shape[0]
    mean = arr.mean(axis=0)
    if n < 2:
        nan = np.full_like(mean, np.nan)
        return Aggregate(mean, nan, nan, n)
    sem = arr.std(axis=0, ddof=1) / np.sqrt(n)
    half = stats.t.ppf(0.5 + confidence / 2.0, n - 1) * sem
    return Aggregate(mean, mean - half, mean + half, n)


def rank_curves(best_so_far: dict[str, np.ndarray]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Average rank per step (1 = best) and its standard error, per method.

    ``best_so_far[method]`` has shape ``(tasks, steps)``; ties share the mean rank.
    """
    methods = list(best_so_far)
    arrs = [np.asarray(best_so_far[m], dtype=np.float64) for m in methods]
    shape = arrs[0].shape
    for m, a in zip(methods, arrs):
        if a.shape != shape:
            raise ValueError(f"method {m!r} has shape {a.shape}, expected {shape}; task sets must match")
    stacked = np.stack(arrs)  # (M, tasks, steps)
    ranks = stats.rankdata(stacked, axis=0, method="average")
    out = {}
    n_tasks = shape[0]
    for i, m in enumerate(methods):
        r = ranks[i]
        se = r.std(axis=0, ddof=1) / np.sqrt(n_tasks) if n_tasks > 1 else np.full(shape[1], np.nan)
        out[m] = (r.mean(axis=0), se)
    return out


def write_curves_csv(path: str | Path, curves: dict[str, Aggregate]) -> Path:
    """``method,step,mean,ci_low,ci_high`` rows; undefined values are written as ``nan``."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version={CSV_SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(["method", "step", "mean", "ci_low", "ci_high"])
        for method, agg in curves.items():
            for step, (m, lo, hi) in enumerate(zip(agg.mean, agg.ci_low, agg.ci_high)):
                w.writerow([method, step, _fmt(m), _fmt(lo), _fmt(hi)])
    return path


def write_rank_csv(path: str | Path, ranks: dict[str, tuple[np.ndarray, np.ndarray]]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version={CSV_SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(["method", "step", "mean", "ci_low", "ci_high"])
        for method, (mean, se) in ranks.items():
            for step, (m, s) in enumerate(zip(mean, se)):
                w.writerow([method, step, _fmt(m), _fmt(m - s), _fmt(m + s)])
    return path


def _fmt(v: float) -> str:
    return "nan" if not np.isfinite(v) else repr(float(v))
