"""Analytic global-optimization test functions with a regret-ready catalog.

Each function is written once as a symbolic expression; values and (where
enabled) analytic gradients are compiled to vectorised numpy code.  Catalog
minima are the published optima, polished by a local solve from the published
argmin; maxima are estimated by quasi-random sampling plus local ascent.
"""
from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import sympy as sp
from scipy import optimize
from scipy.stats import qmc

CATEGORIES = ("many-local-minima", "bowl", "plate", "valley", "ridge-drop", "other")
CATALOG_VERSION = 1
YMAX_SAMPLES = 2**17
YMAX_SEED = 0


@dataclass(frozen=True)
class Spec:
    name: str
    category: str
    lower: tuple
    upper: tuple
    build: Callable  # list of sympy symbols -> expression
    argmin: tuple
    published_ymin: float
    gradient_mode: str = "analytic"
    refine: bool = True  # polish the published argmin numerically
    smooth_at_argmin: bool = True


def _compile(spec: Spec):
    d = len(spec.lower)
    xs = sp.symbols(f"x1:{d + 1}", real=True)
    expr = spec.build(list(xs))
    value = sp.lambdify(xs, expr, modules="numpy", cse=True)
    grad = None
    if spec.gradient_mode == "analytic":
        grad = sp.lambdify(xs, [sp.diff(expr, v) for v in xs], modules="numpy", cse=True)
    return value, grad


@dataclass(frozen=True, eq=False)
class BenchmarkFunction:
    """A closed-form objective over a box.  Calls are pure; batches are ``(..., dim)``."""

    name: str
    category: str
    lower: np.ndarray
    upper: np.ndarray
    argmin: np.ndarray
    y_min: float
    published_ymin: float
    gradient_mode: str
    boundary_optimum: bool
    smooth_at_argmin: bool
    _value: Callable = field(repr=False)
    _grad: Callable | None = field(repr=False)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def stationarity_exempt(self) -> bool:
        return self.boundary_optimum or not self.smooth_at_argmin

    def evaluate(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = self._value(*np.moveaxis(x, -1, 0))
        return np.broadcast_to(np.asarray(out, dtype=np.float64), x.shape[:-1]).copy() if x.ndim > 1 else float(out)

    __call__ = evaluate

    def gradient(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self._grad is None:
            return self.fd_gradient(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            comps = self._grad(*np.moveaxis(x, -1, 0))
        g = np.stack([np.broadcast_to(np.asarray(c, dtype=np.float64), x.shape[:-1]) for c in comps], axis=-1)
        bad = ~np.all(np.isfinite(g), axis=-1)
        if not np.any(bad):
            return g
        # removable singularities of the symbolic form (e.g. 0/0 at a cone tip)
        if x.ndim == 1:
            return self.fd_gradient(x)
        g = np.array(g)
        g[bad] = self.fd_gradient(x[bad])
        return g

    def fd_gradient(self, x):
        """Central differences with per-dimension step ``1e-6 * width``."""
        x = np.asarray(x, dtype=np.float64)
        h = 1e-6 * self.width
        g = np.empty(x.shape, dtype=np.float64)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h[i]
            g[..., i] = (np.asarray(self.evaluate(x + e)) - np.asarray(self.evaluate(x - e))) / (2 * h[i])
        return g

    def value_and_grad(self, x):
        return self.evaluate(x), self.gradient(x)

    @functools.cached_property
    def y_max(self) -> float:
        return estimate_ymax(self)

    @property
    def regret_valid(self) -> bool:
        return self.y_max > self.y_min

    def to_dict(self) -> dict:
        return {
            "name": self.name, "category": self.category, "dim": self.dim,
            "lower": self.lower.tolist(), "upper": self.upper.tolist(),
            "argmin": self.argmin.tolist(), "y_min": self.y_min, "y_max": self.y_max,
            "y_max_seed": YMAX_SEED, "y_max_samples": YMAX_SAMPLES, "gradient_mode": self.gradient_mode,
        }


def make_function(name, category, lower, upper, build, argmin, published_ymin, *, gradient_mode="analytic",
                  refine=True, smooth_at_argmin=True) -> BenchmarkFunction:
    """Build a catalog entry.  Also the extension point for user-defined functions."""
    spec = Spec(name, category, tuple(lower), tuple(upper), build, tuple(argmin), float(published_ymin),
                gradient_mode, refine, smooth_at_argmin)
    return _materialize(spec)


def _materialize(spec: Spec) -> BenchmarkFunction:
    if spec.category not in CATEGORIES:
        raise ValueError(f"unknown category {spec.category!r}")
    if spec.gradient_mode not in ("analytic", "fd"):
        raise ValueError(f"unknown gradient mode {spec.gradient_mode!r}")
    value, grad = _compile(spec)
    lower = np.asarray(spec.lower, dtype=np.float64)
    upper = np.asarray(spec.upper, dtype=np.float64)
    x0 = np.asarray(spec.argmin, dtype=np.float64)
    f = BenchmarkFunction(spec.name, spec.category, lower, upper, x0, float("nan"), spec.published_ymin,
                          spec.gradient_mode, False, spec.smooth_at_argmin, value, grad)
    x = _polish(f, x0) if spec.refine else x0
    on_boundary = bool(np.any(np.isclose(x, lower, rtol=0, atol=1e-9) | np.isclose(x, upper, rtol=0, atol=1e-9)))
    return BenchmarkFunction(spec.name, spec.category, lower, upper, x, float(f.evaluate(x)), spec.published_ymin,
                             spec.gradient_mode, on_boundary, spec.smooth_at_argmin, value, grad)


def _polish(f: BenchmarkFunction, x0: np.ndarray) -> np.ndarray:
    """Bounded quasi-Newton from the published argmin, then Newton steps on interior optima."""
    bounds = list(zip(f.lower, f.upper))
    res = optimize.minimize(f.evaluate, x0, jac=f.gradient, method="L-BFGS-B", bounds=bounds,
                            options={"ftol": 1e-15, "gtol": 1e-13, "maxiter": 500})
    x = res.x if res.fun <= f.evaluate(x0) else x0
    if np.any(np.isclose(x, f.lower, atol=1e-9) | np.isclose(x, f.upper, atol=1e-9)):
        return x
    for _ in range(8):
        g = f.gradient(x)
        if np.linalg.norm(g) < 1e-13:
            break
        h = 1e-5 * np.maximum(np.abs(x), 1.0)
        H = np.empty((f.dim, f.dim))
        for i in range(f.dim):
            e = np.zeros(f.dim)
            e[i] = h[i]
            H[:, i] = (f.gradient(x + e) - f.gradient(x - e)) / (2 * h[i])
        H = 0.5 * (H + H.T)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        cand = x - step
        if not (np.all(cand >= f.lower) and np.all(cand <= f.upper)):
            break
        if np.linalg.norm(f.gradient(cand)) >= np.linalg.norm(g) or f.evaluate(cand) > f.evaluate(x) + 1e-12:
            break
        x = cand
    return x


def estimate_ymax(f: BenchmarkFunction, seed: int = YMAX_SEED, n: int = YMAX_SAMPLES, top: int = 10) -> float:
    """Largest value found by scrambled Sobol sampling plus bounded ascent from the best samples."""
    sampler = qmc.Sobol(d=f.dim, scramble=True, seed=seed)
    pts = qmc.scale(sampler.random(n), f.lower, f.upper)
    vals = np.concatenate([np.asarray(f.evaluate(c)).reshape(-1) for c in np.array_split(pts, max(1, n // 16384))])
    finite = np.where(np.isfinite(vals), vals, -np.inf)
    best = float(finite.max())
    bounds = list(zip(f.lower, f.upper))
    for i in np.argsort(finite)[::-1][:top]:
        res = optimize.minimize(lambda x: -f.evaluate(x), pts[i], jac=lambda x: -f.gradient(x), method="L-BFGS-B",
                                bounds=bounds, options={"maxiter": 200})
        if np.isfinite(res.fun):
            best = max(best, float(-res.fun), float(f.evaluate(np.clip(res.x, f.lower, f.upper))))
    return best


# --------------------------------------------------------------------------------------------------
# definitions

pi = sp.pi


def _ackley(x):
    d = len(x)
    r = sp.sqrt(sum(v**2 for v in x) / d)
    return -20 * sp.exp(-sp.Rational(1, 5) * r) - sp.exp(sum(sp.cos(2 * pi * v) for v in x) / d) + 20 + sp.E


def _levy(x):
    w = [1 + (v - 1) / 4 for v in x]
    body = sum((wi - 1) ** 2 * (1 + 10 * sp.sin(pi * wi + 1) ** 2) for wi in w[:-1])
    return sp.sin(pi * w[0]) ** 2 + body + (w[-1] - 1) ** 2 * (1 + sp.sin(2 * pi * w[-1]) ** 2)


def _griewank(x):
    return sum(v**2 for v in x) / 4000 - sp.Mul(*[sp.cos(v / sp.sqrt(i + 1)) for i, v in enumerate(x)]) + 1


def _schwefel(x):
    return 418.9829 * len(x) - sum(v * sp.sin(sp.sqrt(sp.Abs(v))) for v in x)


def _drop_wave(x):
    r2 = x[0] ** 2 + x[1] ** 2
    return -(1 + sp.cos(12 * sp.sqrt(r2))) / (r2 / 2 + 2)


def _eggholder(x):
    a, b = x
    return -(b + 47) * sp.sin(sp.sqrt(sp.Abs(b + a / 2 + 47))) - a * sp.sin(sp.sqrt(sp.Abs(a - (b + 47))))


def _holder_table(x):
    a, b = x
    return -sp.Abs(sp.sin(a) * sp.cos(b) * sp.exp(sp.Abs(1 - sp.sqrt(a**2 + b**2) / pi)))


def _cross_in_tray(x):
    a, b = x
    inner = sp.Abs(sp.sin(a) * sp.sin(b) * sp.exp(sp.Abs(100 - sp.sqrt(a**2 + b**2) / pi))) + 1
    return -sp.Rational(1, 10000) * inner ** sp.Rational(1, 10)


def _shubert(x):
    return sp.Mul(*[sum(j * sp.cos((j + 1) * v + j) for j in range(1, 6)) for v in x])


def _levy13(x):
    a, b = x
    return (sp.sin(3 * pi * a) ** 2 + (a - 1) ** 2 * (1 + sp.sin(3 * pi * b) ** 2)
            + (b - 1) ** 2 * (1 + sp.sin(2 * pi * b) ** 2))


def _schaffer2(x):
    a, b = x
    return sp.Rational(1, 2) + (sp.sin(a**2 - b**2) ** 2 - sp.Rational(1, 2)) / (1 + (a**2 + b**2) / 1000) ** 2


def _zakharov(x):
    s = sum(sp.Rational(i + 1, 2) * v for i, v in enumerate(x))
    return sum(v**2 for v in x) + s**2 + s**4


def _michalewicz(x):
    return -sum(sp.sin(v) * sp.sin((i + 1) * v**2 / pi) ** 20 for i, v in enumerate(x))


_DJ5_A = [-32, -16, 0, 16, 32]


def _de_jong5(x):
    a, b = x
    terms = []
    for i in range(25):
        a1, a2 = _DJ5_A[i % 5], _DJ5_A[i // 5]
        terms.append(1 / (i + 1 + (a - a1) ** 6 + (b - a2) ** 6))
    return 1 / (sp.Rational(1, 500) + sum(terms))


def _branin(x):
    a, b = x
    return ((b - sp.Rational(51, 10) / (4 * pi**2) * a**2 + 5 / pi * a - 6) ** 2
            + 10 * (1 - 1 / (8 * pi)) * sp.cos(a) + 10)


def _goldstein_price(x):
    a, b = x
    t1 = 1 + (a + b + 1) ** 2 * (19 - 14 * a + 3 * a**2 - 14 * b + 6 * a * b + 3 * b**2)
    t2 = 30 + (2 * a - 3 * b) ** 2 * (18 - 32 * a + 12 * a**2 + 48 * b - 36 * a * b + 27 * b**2)
    return t1 * t2


_H3_A = [[3.0, 10, 30], [0.1, 10, 35], [3.0, 10, 30], [0.1, 10, 35]]
_H3_P = [[3689, 1170, 2673], [4699, 4387, 7470], [1091, 8732, 5547], [381, 5743, 8828]]
_H6_A = [[10, 3, 17, 3.5, 1.7, 8], [0.05, 10, 17, 0.1, 8, 14], [3, 3.5, 1.7, 10, 17, 8], [17, 8, 0.05, 10, 0.1, 14]]
_H6_P = [[1312, 1696, 5569, 124, 8283, 5886], [2329, 4135, 8307, 3736, 1004, 9991],
         [2348, 1451, 3522, 2883, 3047, 6650], [4047, 8828, 8732, 5743, 1091, 381]]
_H_ALPHA = [1.0, 1.2, 3.0, 3.2]


def _hartmann(A, P):
    def build(x):
        return -sum(
            _H_ALPHA[i] * sp.exp(-sum(A[i][j] * (x[j] - P[i][j] * sp.Rational(1, 10000)) ** 2 for j in range(len(x))))
            for i in range(4)
        )
    return build


_SHEKEL_C = [0.1, 0.2, 0.2, 0.4, 0.4, 0.6, 0.3, 0.7, 0.5, 0.5]
_SHEKEL_A = [[4, 1, 8, 6, 3, 2, 5, 8, 6, 7], [4, 1, 8, 6, 7, 9, 3, 1, 2, 3.6],
             [4, 1, 8, 6, 3, 2, 5, 8, 6, 7], [4, 1, 8, 6, 7, 9, 3, 1, 2, 3.6]]


def _shekel(x):
    return -sum(1 / (sum((x[j] - _SHEKEL_A[j][i]) ** 2 for j in range(4)) + _SHEKEL_C[i]) for i in range(10))


def _colville(x):
    a, b, c, d = x
    return (100 * (a**2 - b) ** 2 + (a - 1) ** 2 + (c - 1) ** 2 + 90 * (c**2 - d) ** 2
            + 10.1 * ((b - 1) ** 2 + (d - 1) ** 2) + 19.8 * (b - 1) * (d - 1))


def _powell(x):
    a, b, c, d = x
    return (a + 10 * b) ** 2 + 5 * (c - d) ** 2 + (b - 2 * c) ** 4 + 10 * (a - d) ** 4


def _sq(n, lo, hi):
    return (lo,) * n, (hi,) * n


_SPECS = [
    # many local minima
    Spec("ackley", "many-local-minima", *_sq(2, -32.768, 32.768), _ackley, (0, 0), 0.0, refine=False,
         smooth_at_argmin=False),
    Spec("rastrigin", "many-local-minima", *_sq(2, -5.12, 5.12),
         lambda x: 10 * len(x) + sum(v**2 - 10 * sp.cos(2 * pi * v) for v in x), (0, 0), 0.0, refine=False),
    Spec("griewank", "many-local-minima", *_sq(2, -600, 600), _griewank, (0, 0), 0.0, refine=False),
    Spec("levy", "many-local-minima", *_sq(2, -10, 10), _levy, (1, 1), 0.0, refine=False),
    Spec("levy13", "many-local-minima", *_sq(2, -10, 10), _levy13, (1, 1), 0.0, refine=False),
    Spec("schwefel", "many-local-minima", *_sq(2, -500, 500), _schwefel, (420.9687, 420.9687), 0.0),
    Spec("drop_wave", "many-local-minima", *_sq(2, -5.12, 5.12), _drop_wave, (0, 0), -1.0, gradient_mode="fd",
         refine=False),
    Spec("eggholder", "many-local-minima", *_sq(2, -512, 512), _eggholder, (512, 404.2319), -959.6407),
    Spec("holder_table", "many-local-minima", *_sq(2, -10, 10), _holder_table, (8.05502, 9.66459), -19.2085),
    Spec("cross_in_tray", "many-local-minima", *_sq(2, -10, 10), _cross_in_tray, (1.3491, 1.3491), -2.06261),
    Spec("shubert", "many-local-minima", *_sq(2, -10, 10), _shubert, (-7.0835, 4.858), -186.7309),
    Spec("schaffer2", "many-local-minima", *_sq(2, -100, 100), _schaffer2, (0, 0), 0.0, refine=False),
    # bowl-shaped
    Spec("sphere", "bowl", *_sq(2, -5.12, 5.12), lambda x: sum(v**2 for v in x), (0, 0), 0.0, refine=False),
    Spec("sum_squares", "bowl", *_sq(2, -10, 10), lambda x: sum((i + 1) * v**2 for i, v in enumerate(x)), (0, 0),
         0.0, refine=False),
    Spec("bohachevsky1", "bowl", *_sq(2, -100, 100),
         lambda x: x[0] ** 2 + 2 * x[1] ** 2 - 0.3 * sp.cos(3 * pi * x[0]) - 0.4 * sp.cos(4 * pi * x[1]) + 0.7,
         (0, 0), 0.0, refine=False),
    Spec("rotated_hyper_ellipsoid", "bowl", *_sq(3, -65.536, 65.536),
         lambda x: sum(sum(x[j] ** 2 for j in range(i + 1)) for i in range(len(x))), (0, 0, 0), 0.0, refine=False),
    Spec("sum_of_different_powers", "bowl", *_sq(2, -1, 1),
         lambda x: sum(sp.Abs(v) ** (i + 2) for i, v in enumerate(x)), (0, 0), 0.0, refine=False),
    Spec("trid", "bowl", *_sq(2, -4, 4),
         lambda x: sum((v - 1) ** 2 for v in x) - sum(x[i] * x[i - 1] for i in range(1, len(x))), (2, 2), -2.0,
         refine=False),
    Spec("styblinski_tang", "other", *_sq(2, -5, 5), lambda x: sum(v**4 - 16 * v**2 + 5 * v for v in x) / 2,
         (-2.903534, -2.903534), -78.33198),
    # plate-shaped
    Spec("booth", "plate", *_sq(2, -10, 10), lambda x: (x[0] + 2 * x[1] - 7) ** 2 + (2 * x[0] + x[1] - 5) ** 2,
         (1, 3), 0.0, refine=False),
    Spec("matyas", "plate", *_sq(2, -10, 10),
         lambda x: sp.Rational(26, 100) * (x[0] ** 2 + x[1] ** 2) - sp.Rational(48, 100) * x[0] * x[1], (0, 0), 0.0,
         refine=False),
    Spec("mccormick", "plate", (-1.5, -3.0), (4.0, 4.0),
         lambda x: sp.sin(x[0] + x[1]) + (x[0] - x[1]) ** 2 - 1.5 * x[0] + 2.5 * x[1] + 1, (-0.54719, -1.54719),
         -1.9133),
    Spec("zakharov", "plate", *_sq(2, -5, 10), _zakharov, (0, 0), 0.0, refine=False),
    # valley-shaped
    Spec("rosenbrock", "valley", *_sq(2, -5, 10),
         lambda x: sum(100 * (x[i + 1] - x[i] ** 2) ** 2 + (x[i] - 1) ** 2 for i in range(len(x) - 1)), (1, 1), 0.0,
         refine=False),
    Spec("six_hump_camel", "valley", (-3.0, -2.0), (3.0, 2.0),
         lambda x: ((4 - 2.1 * x[0] ** 2 + x[0] ** 4 / 3) * x[0] ** 2 + x[0] * x[1]
                    + (-4 + 4 * x[1] ** 2) * x[1] ** 2), (0.0898, -0.7126), -1.0316),
    Spec("three_hump_camel", "valley", *_sq(2, -5, 5),
         lambda x: 2 * x[0] ** 2 - 1.05 * x[0] ** 4 + x[0] ** 6 / 6 + x[0] * x[1] + x[1] ** 2, (0, 0), 0.0,
         refine=False),
    Spec("dixon_price", "valley", *_sq(2, -10, 10),
         lambda x: (x[0] - 1) ** 2 + sum((i + 1) * (2 * x[i] ** 2 - x[i - 1]) ** 2 for i in range(1, len(x))),
         (1.0, 2 ** -0.5), 0.0),
    # steep ridges / drops
    Spec("easom", "ridge-drop", *_sq(2, -100, 100),
         lambda x: -sp.cos(x[0]) * sp.cos(x[1]) * sp.exp(-((x[0] - pi) ** 2 + (x[1] - pi) ** 2)),
         (np.pi, np.pi), -1.0),
    Spec("michalewicz", "ridge-drop", *_sq(2, 0.0, np.pi), _michalewicz, (2.20, 1.57), -1.8013),
    Spec("de_jong5", "ridge-drop", *_sq(2, -65.536, 65.536), _de_jong5, (-32, -32), 0.998004, gradient_mode="fd"),
    # other
    Spec("forrester", "other", (0.0,), (1.0,), lambda x: (6 * x[0] - 2) ** 2 * sp.sin(12 * x[0] - 4), (0.75725,),
         -6.02074),
    Spec("gramacy_lee", "other", (0.5,), (2.5,), lambda x: sp.sin(10 * pi * x[0]) / (2 * x[0]) + (x[0] - 1) ** 4,
         (0.548563,), -0.869011),
    Spec("branin", "other", (-5.0, 0.0), (10.0, 15.0), _branin, (-np.pi, 12.275), 0.397887),
    Spec("beale", "other", *_sq(2, -4.5, 4.5),
         lambda x: ((1.5 - x[0] + x[0] * x[1]) ** 2 + (2.25 - x[0] + x[0] * x[1] ** 2) ** 2
                    + (2.625 - x[0] + x[0] * x[1] ** 3) ** 2), (3, 0.5), 0.0, refine=False),
    Spec("goldstein_price", "other", *_sq(2, -2, 2), _goldstein_price, (0, -1), 3.0, refine=False),
    Spec("hartmann3", "other", *_sq(3, 0, 1), _hartmann(_H3_A, _H3_P), (0.114614, 0.555649, 0.852547), -3.86278),
    Spec("hartmann6", "other", *_sq(6, 0, 1), _hartmann(_H6_A, _H6_P),
         (0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573), -3.32237),
    Spec("colville", "other", *_sq(4, -10, 10), _colville, (1, 1, 1, 1), 0.0, refine=False),
    Spec("powell", "other", *_sq(4, -4, 5), _powell, (0, 0, 0, 0), 0.0, refine=False),
    Spec("shekel", "other", *_sq(4, 0, 10), _shekel, (4, 4, 4, 4), -10.5364),
]


@functools.lru_cache(maxsize=None)
def catalog() -> tuple[BenchmarkFunction, ...]:
    return tuple(_materialize(s) for s in _SPECS)


def get(name: str) -> BenchmarkFunction:
    for f in catalog():
        if f.name == name:
            return f
    raise KeyError(f"unknown benchmark {name!r}; known: {[f.name for f in catalog()]}")


def export_catalog(path: str | Path, functions=None) -> Path:
    functions = catalog() if functions is None else functions
    payload = {"version": CATALOG_VERSION, "functions": [f.to_dict() for f in functions]}
    path = Path(path)
    path.write_text(json.dumps(payload, indent=1))
    return path
