"""Classical optimizers producing trajectories in the same format as POP.

Every objective call goes through :class:`CountingObjective`, so budgets can
be asserted exactly.  First-order methods start from the best context point;
all iterates are clipped to the domain box when one is given.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .env import Trajectory, TrajectoryRecord

LR_GRID = (0.01, 0.02, 0.03, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 20.0, 30.0, 50.0, 100.0)
TUNED_LR = {"gd": 50.0, "adam": 10.0, "lbfgs": 2.0}


class BudgetExhausted(Exception):
    pass


class CountingObjective:
    """Wraps ``f`` and counts evaluations; raises once ``budget`` is exceeded."""

    def __init__(self, f, budget: int | None = None):
        self.f = f
        self.budget = budget
        self.calls = 0

    @property
    def remaining(self) -> float:
        return np.inf if self.budget is None else self.budget - self.calls

    def value_and_grad(self, x):
        self._tick()
        y, g = self.f.value_and_grad(np.asarray(x, dtype=np.float64))
        return float(y), np.asarray(g, dtype=np.float64)

    def value(self, x) -> float:
        self._tick()
        if hasattr(self.f, "evaluate"):
            return float(self.f.evaluate(np.asarray(x, dtype=np.float64)))
        return float(self.f.value_and_grad(np.asarray(x, dtype=np.float64))[0])

    def __getattr__(self, name):
        # box and dimension of the wrapped function
        if name == "f":
            raise AttributeError(name)
        return getattr(self.f, name)

    def _tick(self):
        if self.budget is not None and self.calls >= self.budget:
            raise BudgetExhausted
        self.calls += 1


def _bounds(f):
    lo = getattr(f, "lower", None)
    hi = getattr(f, "upper", None)
    if lo is None or hi is None:
        return None
    return np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)


def _clip(x, bounds):
    return x if bounds is None else np.clip(x, bounds[0], bounds[1])


def _start(traj_context: np.ndarray, obj: CountingObjective, T: int) -> tuple[Trajectory, np.ndarray, float, np.ndarray]:
    traj = Trajectory(context_size=len(traj_context), budget=T)
    best = None
    for x in np.atleast_2d(traj_context):
        y, g = obj.value_and_grad(x)
        traj.append(TrajectoryRecord(np.array(x, dtype=np.float64), y, g, 0.0))
        if best is None or y < best[1]:
            best = (np.array(x, dtype=np.float64), y, g)
    return traj, best[0], best[1], best[2]


def gd_run(f, context, lr: float, T: int, clip: bool = True) -> Trajectory:
    """Plain gradient descent from the best context point."""
    if lr < 0:
        raise ValueError("learning rate must be >= 0")
    obj = CountingObjective(f)
    bounds = _bounds(f) if clip else None
    traj, x, _, g = _start(context, obj, T)
    for t in range(1, T + 1):
        x = _clip(x - lr * g, bounds)
        y, g = obj.value_and_grad(x)
        traj.append(TrajectoryRecord(x, y, g, t / T))
    return traj


def adam_run(f, context, lr: float, T: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
             clip: bool = True) -> Trajectory:
    if lr < 0:
        raise ValueError("learning rate must be >= 0")
    obj = CountingObjective(f)
    bounds = _bounds(f) if clip else None
    traj, x, _, g = _start(context, obj, T)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for t in range(1, T + 1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        x = _clip(x - lr * mhat / (np.sqrt(vhat) + eps), bounds)
        y, g = obj.value_and_grad(x)
        traj.append(TrajectoryRecord(x, y, g, t / T))
    return traj


def _two_loop(g: np.ndarray, s_hist: list, y_hist: list) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        alphas.append((rho, a))
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def lbfgs_run(f, context, lr: float, T: int, memory: int = 10, c1: float = 1e-4, backtrack: float = 0.5,
              max_probes: int = 20, accounting: Literal["iteration", "evaluation"] = "iteration",
              clip: bool = True) -> Trajectory:
    """L-BFGS with two-loop recursion and Armijo backtracking.

    ``lr`` is the initial trial step along the quasi-Newton direction (scaled
    by ``min(1, 1/|g|_1)`` on the first iteration, when no curvature is known).
    With ``accounting="iteration"`` the run makes ``T`` iterations and records
    the accepted iterate of each; with ``"evaluation"`` every line-search probe
    is recorded and the run stops after ``T`` evaluations.
    """
    if lr <= 0 or memory < 1:
        raise ValueError("lbfgs needs lr > 0 and memory >= 1")
    obj = CountingObjective(f)
    bounds = _bounds(f) if clip else None
    traj, x, y, g = _start(context, obj, T)
    per_eval = accounting == "evaluation"
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    evals = 0
    it = 0
    while (evals if per_eval else it) < T:
        it += 1
        d = _two_loop(g, s_hist, y_hist)
        slope = float(g @ d)
        if not slope < 0:
            d = -g
            slope = -float(g @ g)
            s_hist.clear()
            y_hist.clear()
        if slope == 0.0:
            alpha = 0.0
        elif s_hist:
            alpha = lr
        else:
            alpha = lr * min(1.0, 1.0 / max(np.abs(g).sum(), 1e-300))
        x_new, y_new, g_new = x, y, g
        for _ in range(max_probes):
            if per_eval and evals >= T:
                break
            cand = _clip(x + alpha * d, bounds)
            yc, gc = obj.value_and_grad(cand)
            evals += 1
            if per_eval:
                traj.append(TrajectoryRecord(cand, yc, gc, evals / T))
            if np.isfinite(yc) and yc <= y + c1 * float(g @ (cand - x)):
                x_new, y_new, g_new = cand, yc, gc
                break
            if not np.isfinite(yc) and not per_eval:
                # diverged: record the failure and stop
                traj.append(TrajectoryRecord(cand, yc, gc, it / T))
                return traj
            alpha *= backtrack
        s = x_new - x
        yv = g_new - g
        if float(s @ yv) > 1e-12 * float(np.sqrt((s @ s) * (yv @ yv))) and float(s @ yv) > 0:
            s_hist.append(s)
            y_hist.append(yv)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
        x, y, g = x_new, y_new, g_new
        if not per_eval:
            traj.append(TrajectoryRecord(x, y, g, it / T))
    return traj


def random_search_run(f, rng: np.random.Generator, T: int, context=None) -> Trajectory:
    """``T`` uniform draws over the box, optionally after a shared context."""
    if T < 1:
        raise ValueError("T must be >= 1")
    obj = CountingObjective(f)
    lo, hi = _bounds(f)
    traj = Trajectory(context_size=0 if context is None else len(context), budget=T)
    if context is not None:
        for x in context:
            y, g = obj.value_and_grad(x)
            traj.append(TrajectoryRecord(np.array(x, dtype=np.float64), y, g, 0.0))
    for t in range(1, T + 1):
        x = rng.uniform(lo, hi)
        y, g = obj.value_and_grad(x)
        traj.append(TrajectoryRecord(x, y, g, t / T))
    return traj


@dataclass(frozen=True)
class PopulationConfig:
    pop_size: int = 20
    tournament: int = 3
    mutation_scale: float = 0.1  # fraction of box width
    mutation_prob: float | None = None  # per gene; None means 1/D
    F: float = 0.8
    CR: float = 0.9

    def __post_init__(self):
        if self.pop_size < 4:
            raise ValueError("population methods need pop_size >= 4")


class _Recorder:
    """Evaluates points, appends records and enforces the evaluation budget."""

    def __init__(self, f, budget: int, context_size: int):
        self.obj = CountingObjective(f, budget)
        self.traj = Trajectory(context_size=context_size, budget=budget - context_size)
        self.budget = budget
        self.context_size = context_size

    def __call__(self, x) -> float:
        y, g = self.obj.value_and_grad(x)
        n = self.obj.calls - self.context_size
        self.traj.append(TrajectoryRecord(np.array(x, dtype=np.float64), y, g,
                                          max(n, 0) / max(self.traj.budget, 1)))
        return y


def _initial_population(f, rng, cfg: PopulationConfig, rec: _Recorder, context):
    lo, hi = _bounds(f)
    pts = [] if context is None else [np.array(x, dtype=np.float64) for x in context]
    while len(pts) < cfg.pop_size:
        pts.append(rng.uniform(lo, hi))
    pts = np.array(pts[: max(cfg.pop_size, len(pts))])
    fit = np.array([rec(x) for x in pts])
    return pts, fit


def ga_run(f, rng: np.random.Generator, budget: int, config: PopulationConfig = PopulationConfig(),
           context=None) -> Trajectory:
    """Generational GA: tournament selection, uniform crossover, Gaussian mutation, one elite."""
    lo, hi = _bounds(f)
    D = lo.shape[0]
    pm = config.mutation_prob if config.mutation_prob is not None else 1.0 / D
    rec = _Recorder(f, budget, 0 if context is None else len(context))
    try:
        pop, fit = _initial_population(f, rng, config, rec, context)
        n = len(pop)
        while True:
            elite = int(np.argmin(fit))
            children = [pop[elite].copy()]
            child_fit = [fit[elite]]
            while len(children) < n:
                parents = []
                for _ in range(2):
                    cand = rng.choice(n, size=config.tournament, replace=False)
                    parents.append(pop[cand[np.argmin(fit[cand])]])
                mask = rng.random(D) < 0.5
                child = np.where(mask, parents[0], parents[1])
                mut = rng.random(D) < pm
                child = child + mut * rng.normal(0.0, config.mutation_scale * (hi - lo))
                child = np.clip(child, lo, hi)
                child_fit.append(rec(child))
                children.append(child)
            pop, fit = np.array(children), np.array(child_fit)
    except BudgetExhausted:
        pass
    return rec.traj


def de_run(f, rng: np.random.Generator, budget: int, config: PopulationConfig = PopulationConfig(),
           context=None) -> Trajectory:
    """DE/rand/1/bin with greedy one-to-one replacement.

    ``CR = 0`` disables crossover entirely (trials equal their targets and are
    still evaluated, so the budget runs down); for ``CR > 0`` one random
    coordinate is always taken from the mutant.
    """
    lo, hi = _bounds(f)
    D = lo.shape[0]
    rec = _Recorder(f, budget, 0 if context is None else len(context))
    try:
        pop, fit = _initial_population(f, rng, config, rec, context)
        n = len(pop)
        while True:
            for i in range(n):
                r1, r2, r3 = rng.choice([j for j in range(n) if j != i], size=3, replace=False)
                mutant = pop[r1] + config.F * (pop[r2] - pop[r3])
                mask = rng.random(D) < config.CR
                if config.CR > 0:
                    mask[rng.integers(D)] = True
                trial = np.clip(np.where(mask, mutant, pop[i]), lo, hi)
                ft = rec(trial)
                if ft <= fit[i]:
                    pop[i], fit[i] = trial, ft
    except BudgetExhausted:
        pass
    return rec.traj


def run_baseline(method: str, f, context, T: int, rng: np.random.Generator, lr: float | None = None,
                 **kw) -> Trajectory:
    """Dispatch by name with a shared budget of ``len(context) + T`` evaluations."""
    lr = TUNED_LR.get(method) if lr is None else lr
    if method == "gd":
        return gd_run(f, context, lr, T)
    if method == "adam":
        return adam_run(f, context, lr, T)
    if method == "lbfgs":
        return lbfgs_run(f, context, lr, T, **kw)
    if method == "random":
        return random_search_run(f, rng, T, context=context)
    if method == "ga":
        return ga_run(f, rng, len(context) + T, context=context)
    if method == "de":
        return de_run(f, rng, len(context) + T, context=context)
    raise ValueError(f"unknown baseline {method!r}")


BASELINES = ("gd", "adam", "lbfgs", "random", "ga", "de")
