"""Prior over objective functions: separable quadratic mixed with an RFF GP sample.

    f(x) = alpha * sum_d b1_d (x_d - b2_d)^2
           + (1 - alpha) * sqrt(2) * sum_m w1_m cos(w2_m . x + w3_m)

with w1 ~ N(0, sigma^2 / M), rows of w2 ~ N(0, I / lengthscale^2), w3 ~ U(0, 2 pi).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

FUNCTION_FORMAT_VERSION = 1
SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class PriorConfig:
    dim: int = 2
    features: int = 1000
    curvature: tuple[float, float] = (1e-8, 1e-2)
    center: tuple[float, float] = (-50.0, 50.0)
    alpha: tuple[float, float] = (0.05, 0.4)
    lengthscale: tuple[float, float] = (4.0, 8.0)
    output_scale: tuple[float, float] = (0.5, 3.0)
    p_convex: float = 0.15
    domain: tuple[float, float] = (-50.0, 50.0)

    def __post_init__(self):
        if self.dim < 1 or self.features < 1:
            raise ValueError(f"dim and features must be >= 1, got {self.dim}, {self.features}")
        for name in ("curvature", "center", "alpha", "lengthscale", "output_scale"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is inverted: ({lo}, {hi})")
        if self.curvature[0] <= 0:
            raise ValueError("curvature lower bound must be > 0 to keep the quadratic convex")
        if not 0.0 <= self.p_convex <= 1.0:
            raise ValueError(f"p_convex must lie in [0, 1], got {self.p_convex}")
        if not self.domain[0] < self.domain[1]:
            raise ValueError(f"empty domain {self.domain}")

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.full(self.dim, float(self.domain[0])), np.full(self.dim, float(self.domain[1]))

    def with_dim(self, dim: int, features: int | None = None) -> "PriorConfig":
        kw = asdict(self)
        kw.update(dim=dim, features=features if features is not None else self.features)
        return PriorConfig(**kw)


# M per dimension used when evaluating beyond the 2-D training prior
HIGH_DIM_FEATURES = {8: 8000, 16: 16000, 32: 32000}


@dataclass(frozen=True, eq=False)
class SampledFunction:
    alpha: float
    curvature: np.ndarray  # (D,)
    center: np.ndarray  # (D,)
    rff_weights: np.ndarray  # (M,)
    rff_freqs: np.ndarray  # (M, D)
    rff_phases: np.ndarray  # (M,)
    lower: np.ndarray
    upper: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.curvature.shape[0]

    # parts are exposed so the mixture can be checked term by term
    def convex_part(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return ((x - self.center) ** 2 * self.curvature).sum(axis=-1)

    def rff_part(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return SQRT2 * (np.cos(x @ self.rff_freqs.T + self.rff_phases) @ self.rff_weights)

    def convex_grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return 2.0 * self.curvature * (x - self.center)

    def rff_grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        s = np.sin(x @ self.rff_freqs.T + self.rff_phases) * self.rff_weights
        return -SQRT2 * (s @ self.rff_freqs)

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(x)

    def evaluate(self, x) -> np.ndarray:
        """Value at ``x`` of shape ``(D,)`` or ``(..., D)``."""
        a = self.alpha
        val = a * self.convex_part(x)
        if a < 1.0:
            val = val + (1.0 - a) * self.rff_part(x)
        if not np.all(np.isfinite(val)):
            raise FloatingPointError("non-finite function value; parameters are corrupted")
        return val

    def gradient(self, x) -> np.ndarray:
        a = self.alpha
        g = a * self.convex_grad(x)
        if a < 1.0:
            g = g + (1.0 - a) * self.rff_grad(x)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient; parameters are corrupted")
        return g

    def value_and_grad(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        a = self.alpha
        val = a * self.convex_part(x)
        g = a * self.convex_grad(x)
        if a < 1.0:
            proj = x @ self.rff_freqs.T + self.rff_phases
            val = val + (1.0 - a) * SQRT2 * (np.cos(proj) @ self.rff_weights)
            g = g - (1.0 - a) * SQRT2 * ((np.sin(proj) * self.rff_weights) @ self.rff_freqs)
        return val, g

    # -- serialization ----------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "version": FUNCTION_FORMAT_VERSION,
            "alpha": self.alpha,
            "curvature": self.curvature.tolist(),
            "center": self.center.tolist(),
            "rff_weights": self.rff_weights.tolist(),
            "rff_freqs": self.rff_freqs.tolist(),
            "rff_phases": self.rff_phases.tolist(),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SampledFunction":
        if d.get("version") != FUNCTION_FORMAT_VERSION:
            raise ValueError(f"unsupported function record version {d.get('version')!r}")
        D = len(d["curvature"])
        return cls(
            alpha=float(d["alpha"]),
            curvature=np.asarray(d["curvature"], dtype=np.float64),
            center=np.asarray(d["center"], dtype=np.float64),
            rff_weights=np.asarray(d["rff_weights"], dtype=np.float64),
            rff_freqs=np.asarray(d["rff_freqs"], dtype=np.float64).reshape(-1, D),
            rff_phases=np.asarray(d["rff_phases"], dtype=np.float64),
            lower=np.asarray(d["lower"], dtype=np.float64),
            upper=np.asarray(d["upper"], dtype=np.float64),
            meta=d.get("meta", {}),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "SampledFunction":
        return cls.from_dict(json.loads(Path(path).read_text()))


def sample_function(config: PriorConfig, rng: np.random.Generator, seed: int | None = None) -> SampledFunction:
    """Draw one objective from the prior using ``rng`` exclusively."""
    D, M = config.dim, config.features
    convex = rng.random() < config.p_convex
    alpha = 1.0 if convex else float(rng.uniform(*config.alpha))
    lengthscale = float(rng.uniform(*config.lengthscale))
    sigma = float(rng.uniform(*config.output_scale))
    curvature = rng.uniform(*config.curvature, size=D)
    center = rng.uniform(*config.center, size=D)
    weights = rng.normal(0.0, sigma / np.sqrt(M), size=M)
    freqs = rng.normal(0.0, 1.0 / lengthscale, size=(M, D))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=M)
    lower, upper = config.bounds
    meta = {"lengthscale": lengthscale, "output_scale": sigma, "config": asdict(config)}
    if seed is not None:
        meta["seed"] = seed
    return SampledFunction(alpha, curvature, center, weights, freqs, phases, lower, upper, meta)


def sample_functions(config: PriorConfig, n: int, seed: int) -> list[SampledFunction]:
    """``n`` functions, each from its own child stream of ``seed``."""
    streams = np.random.SeedSequence(seed).spawn(n)
    return [sample_function(config, np.random.default_rng(s)) for s in streams]
