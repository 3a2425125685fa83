"""Matched-budget evaluation of POP and the baselines on prior tasks and benchmarks."""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baselines
from .env import run_episodes
from .metrics import CSV_SCHEMA_VERSION, aggregate, normalized_improvement, normalized_regret, rank_curves
from .policy import Policy
from .prior import HIGH_DIM_FEATURES, PriorConfig, sample_functions

DEFAULT_METHODS = ("pop", "gd", "adam", "lbfgs", "random", "ga", "de")


@dataclass(frozen=True)
class EvalPriorConfig:
    checkpoint: str = ""
    n_tasks: int = 1024
    dims: tuple[int, ...] = (2,)
    horizon: int = 50
    c: int = 10
    features: int = 1000  # at D=2; higher D uses HIGH_DIM_FEATURES
    methods: tuple[str, ...] = DEFAULT_METHODS
    gd_lr: float = baselines.TUNED_LR["gd"]
    adam_lr: float = baselines.TUNED_LR["adam"]
    lbfgs_lr: float = baselines.TUNED_LR["lbfgs"]
    lbfgs_accounting: str = "iteration"
    deterministic: bool = True
    write_rows: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.horizon <= self.c:
            raise ValueError(f"horizon ({self.horizon}) must exceed the context size ({self.c})")
        if self.n_tasks < 1 or self.c < 1:
            raise ValueError("n_tasks and c must be >= 1")
        for m in self.methods:
            if m not in DEFAULT_METHODS and m != "pop_untrained":
                raise ValueError(f"unknown method {m!r}")
        if self.lbfgs_accounting not in ("iteration", "evaluation"):
            raise ValueError("lbfgs_accounting must be 'iteration' or 'evaluation'")

    @property
    def T(self) -> int:
        return self.horizon - self.c

    def features_for(self, dim: int) -> int:
        return self.features if dim == 2 else HIGH_DIM_FEATURES.get(dim, 1000 * dim)


@dataclass(frozen=True)
class EvalBenchConfig:
    checkpoint: str = ""
    functions: tuple[str, ...] = ()  # empty means the whole catalog
    horizon: int = 50
    c: int = 10
    repeats: int = 8
    methods: tuple[str, ...] = DEFAULT_METHODS
    lbfgs_accounting: str = "iteration"
    deterministic: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.horizon <= self.c:
            raise ValueError(f"horizon ({self.horizon}) must exceed the context size ({self.c})")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


@dataclass(frozen=True)
class SweepConfig:
    method: str = "gd"
    grid: tuple[float, ...] = baselines.LR_GRID
    n_tasks: int = 128
    horizon: int = 50
    c: int = 10
    dim: int = 2
    features: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("gd", "adam", "lbfgs"):
            raise ValueError(f"sweep method must be gd, adam or lbfgs, got {self.method!r}")
        if not self.grid:
            raise ValueError("empty learning-rate grid")


def prior_tasks(dim: int, features: int, n: int, c: int, seed: int, stream: int = 7):
    """Seeded task set with shared contexts; identical for every method."""
    funcs = sample_functions(PriorConfig(dim=dim, features=features), n, seed=[seed, stream, dim])
    rng = np.random.default_rng([seed, stream + 1, dim])
    contexts = [rng.uniform(f.lower, f.upper, size=(c, dim)) for f in funcs]
    return funcs, contexts


def pop_trajectories(policy: Policy, functions, contexts, T: int, c: int, seed: int, deterministic: bool = True,
                     chunk: int = 64):
    out = []
    for s in range(0, len(functions), chunk):
        fs, cs = functions[s : s + chunk], contexts[s : s + chunk]
        rngs = [np.random.default_rng([seed, 13, s + i]) for i in range(len(fs))]
        res = run_episodes(fs, policy, T, c, rngs, deterministic=deterministic, contexts=cs)
        out.extend(e.trajectory for e in res.episodes)
    return out


def _baseline_job(args):
    method, f, ctx, T, seed_key, lr, accounting = args
    rng = np.random.default_rng(seed_key)
    kw = {"accounting": accounting} if method == "lbfgs" else {}
    return baselines.run_baseline(method, f, ctx, T, rng, lr=lr, **kw)


def parallel_map(fn, items, workers: int = 1):
    """Ordered map; results do not depend on the worker count."""
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _pad(ys: np.ndarray, n: int) -> np.ndarray:
    """Best-so-far series of length ``n``; missing tail (early failure) is NaN."""
    ys = np.asarray(ys, dtype=np.float64)
    bsf = np.full(n, np.nan)
    if len(ys):
        finite = np.where(np.isfinite(ys), ys, np.nan)
        run = np.fmin.accumulate(finite[:n])
        run[np.cumsum(~np.isfinite(ys[:n])) > 0] = np.nan  # undefined once a non-finite value appears
        bsf[: len(run)] = run
    return bsf


def run_methods(methods, functions, contexts, T: int, c: int, seed: int, policy: Policy | None = None,
                untrained: Policy | None = None, lrs: dict | None = None, accounting: str = "iteration",
                deterministic: bool = True, workers: int = 1, task_keys=None) -> dict[str, np.ndarray]:
    """Raw value matrices ``(tasks, c + T)`` per method on shared contexts (NaN-padded)."""
    lrs = lrs or {}
    n = c + T
    task_keys = task_keys if task_keys is not None else list(range(len(functions)))
    out = {}
    for mi, m in enumerate(methods):
        if m in ("pop", "pop_untrained"):
            pol = policy if m == "pop" else untrained
            if pol is None:
                raise ValueError(f"method {m} needs a policy")
            trajs = pop_trajectories(pol, functions, contexts, T, c, seed, deterministic)
        else:
            jobs = [(m, f, ctx, T, [seed, 17, mi, *np.atleast_1d(k).tolist()], lrs.get(m), accounting)
                    for f, ctx, k in zip(functions, contexts, task_keys)]
            trajs = parallel_map(_baseline_job, jobs, workers)
        rows = np.full((len(trajs), n), np.nan)
        for i, t in enumerate(trajs):
            ys = t.ys[:n]
            rows[i, : len(ys)] = ys
        out[m] = rows
    return out


def best_so_far(ys: np.ndarray) -> np.ndarray:
    return np.stack([_pad(row, row.shape[0]) for row in np.atleast_2d(ys)])


def ni_matrix(ys: np.ndarray, c: int) -> np.ndarray:
    """NI per task and step from raw values; the first ``c`` columns are the context."""
    return np.stack([normalized_improvement(row[:c], b) for row, b in zip(ys, best_so_far(ys))])


def _write_rows(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version={CSV_SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def fmt(v) -> str:
    v = float(v)
    return "nan" if not np.isfinite(v) else repr(v)


def write_curves(path: Path, curves: dict[str, np.ndarray]) -> Path:
    rows = []
    for m, mat in curves.items():
        agg = aggregate(mat)
        for step in range(mat.shape[1]):
            rows.append([m, step + 1, fmt(agg.mean[step]), fmt(agg.ci_low[step]), fmt(agg.ci_high[step])])
    return _write_rows(path, ["method", "step", "mean", "ci_low", "ci_high"], rows)


def write_task_rows(path: Path, bsf: dict[str, np.ndarray], values: dict[str, np.ndarray], value_name: str,
                    task_names=None) -> Path:
    rows = []
    for m, mat in values.items():
        for i, row in enumerate(mat):
            name = task_names[i] if task_names is not None else i
            for step, (b, v) in enumerate(zip(bsf[m][i], row)):
                rows.append([m, name, step + 1, fmt(b), fmt(v)])
    return _write_rows(path, ["method", "task", "step", "best_so_far", value_name], rows)


def eval_prior(cfg: EvalPriorConfig, out: Path, policy: Policy | None, untrained: Policy | None = None,
               workers: int = 1) -> list[str]:
    outputs = []
    lrs = {"gd": cfg.gd_lr, "adam": cfg.adam_lr, "lbfgs": cfg.lbfgs_lr}
    for d in cfg.dims:
        funcs, ctxs = prior_tasks(d, cfg.features_for(d), cfg.n_tasks, cfg.c, cfg.seed)
        ys = run_methods(cfg.methods, funcs, ctxs, cfg.T, cfg.c, cfg.seed, policy, untrained, lrs,
                         cfg.lbfgs_accounting, cfg.deterministic, workers)
        ni = {m: ni_matrix(v, cfg.c) for m, v in ys.items()}
        bsf = {m: best_so_far(v) for m, v in ys.items()}
        outputs.append(write_curves(out / f"ni_curves_D{d}.csv", ni).name)
        if cfg.write_rows:
            outputs.append(write_task_rows(out / f"ni_rows_D{d}.csv", bsf, ni, "ni").name)
    return outputs


def eval_bench(cfg: EvalBenchConfig, out: Path, policy: Policy | None, untrained: Policy | None = None,
               workers: int = 1) -> list[str]:
    from . import benchmarks

    funcs = [benchmarks.get(n) for n in cfg.functions] if cfg.functions else list(benchmarks.catalog())
    funcs = [f for f in funcs if f.regret_valid]
    T = cfg.horizon - cfg.c
    regret: dict[str, list] = {m: [] for m in cfg.methods}
    best: dict[str, list] = {m: [] for m in cfg.methods}
    names = []
    for fi, f in enumerate(funcs):
        rng = np.random.default_rng([cfg.seed, 11, fi])
        ctxs = [rng.uniform(f.lower, f.upper, size=(cfg.c, f.dim)) for _ in range(cfg.repeats)]
        keys = [[fi, r] for r in range(cfg.repeats)]
        ys = run_methods(cfg.methods, [f] * cfg.repeats, ctxs, T, cfg.c, cfg.seed, policy, untrained, None,
                         cfg.lbfgs_accounting, cfg.deterministic, workers, task_keys=keys)
        bsf = {m: best_so_far(v) for m, v in ys.items()}
        for m in cfg.methods:
            best[m].append(bsf[m])
            regret[m].append(normalized_regret(bsf[m], f.y_min, f.y_max))
        names.extend(f"{f.name}#{r}" for r in range(cfg.repeats))
    best = {m: np.concatenate(v) for m, v in best.items()}
    regret = {m: np.concatenate(v) for m, v in regret.items()}
    outputs = [write_curves(out / "regret_curves.csv", regret).name]
    ranks = rank_curves(regret)
    rows = [[m, step + 1, fmt(mean[step]), fmt(se[step])] for m, (mean, se) in ranks.items()
            for step in range(len(mean))]
    outputs.append(_write_rows(out / "rank_curves.csv", ["method", "step", "mean_rank", "se"], rows).name)
    outputs.append(write_task_rows(out / "regret_rows.csv", best, regret, "regret", names).name)
    benchmarks.export_catalog(out / "catalog.json", funcs)
    outputs.append("catalog.json")
    return outputs


def sweep_lr(cfg: SweepConfig, out: Path, workers: int = 1) -> list[str]:
    funcs, ctxs = prior_tasks(cfg.dim, cfg.features, cfg.n_tasks, cfg.c, cfg.seed, stream=21)
    T = cfg.horizon - cfg.c
    rows = []
    for lr in cfg.grid:
        ys = run_methods([cfg.method], funcs, ctxs, T, cfg.c, cfg.seed, lrs={cfg.method: lr}, workers=workers)
        final = ni_matrix(ys[cfg.method], cfg.c)[:, -1]
        finite = np.isfinite(final)
        if finite.all():
            agg = aggregate(final[:, None])
            mean, lo, hi = agg.mean[0], agg.ci_low[0], agg.ci_high[0]
        else:
            # any failed task leaves the grid point undefined
            mean = lo = hi = float("nan")
        rows.append([repr(float(lr)), fmt(mean), fmt(lo), fmt(hi), int(finite.sum()), len(final)])
    path = _write_rows(out / f"sweep_{cfg.method}.csv", ["lr", "mean_ni", "ci_low", "ci_high", "n_finite", "n_tasks"],
                       rows)
    return [path.name]
