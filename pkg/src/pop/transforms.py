"""State-space transforms: boundary scaling, online z-scoring and gradient rescaling.

Coordinates are mapped to ``[-V_x, V_x]`` with the known domain box, values to
``[-V_y, V_y]`` with the running extrema, and both are then standardized with
running (Welford) statistics of the boundary-scaled data.  Gradients are
multiplied by the Jacobian of the composed maps so that a gradient step taken
in transformed space is consistent with the transformed objective.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIGMA_FLOOR = 1e-8
DEFAULT_SCALE = 3.0


@dataclass
class RunningStats:
    """Welford accumulator; ``mean``/``m2`` are scalars or per-dimension vectors."""

    count: int = 0
    mean: np.ndarray | float = 0.0
    m2: np.ndarray | float = 0.0
    sigma_floor: float = SIGMA_FLOOR

    def push(self, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise ValueError(f"non-finite observation {value}")
        self.count += 1
        delta = value - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (value - self.mean)

    def extend(self, values) -> None:
        for v in values:
            self.push(v)

    @property
    def variance(self):
        if self.count == 0:
            raise ValueError("variance of an empty stream")
        return np.maximum(self.m2 / self.count, 0.0)

    @property
    def std(self):
        return np.maximum(np.sqrt(self.variance), self.sigma_floor)

    def copy(self) -> "RunningStats":
        return RunningStats(self.count, np.copy(self.mean), np.copy(self.m2), self.sigma_floor)


def z_transform(value, stats: RunningStats):
    if stats.count < 1:
        raise ValueError("z_transform needs at least one observation")
    return (np.asarray(value, dtype=np.float64) - stats.mean) / stats.std


@dataclass
class TransformState:
    lower: np.ndarray
    upper: np.ndarray
    vx: float = DEFAULT_SCALE
    vy: float = DEFAULT_SCALE
    sigma_floor: float = SIGMA_FLOOR
    y_min: float = np.inf
    y_max: float = -np.inf
    x_stats: RunningStats = None
    # raw-value statistics; boundary-scaled ones are derived on demand (see y_stats)
    y_raw_stats: RunningStats = None

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        if np.any(self.upper <= self.lower):
            raise ValueError(f"degenerate domain bounds: lower={self.lower}, upper={self.upper}")
        if self.vx <= 0 or self.vy <= 0:
            raise ValueError("target scales must be positive")
        if self.x_stats is None:
            self.x_stats = RunningStats(0, np.zeros_like(self.lower), np.zeros_like(self.lower), self.sigma_floor)
        if self.y_raw_stats is None:
            self.y_raw_stats = RunningStats(sigma_floor=self.sigma_floor)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def y_range(self) -> float:
        return self.y_max - self.y_min

    # -- boundary scaling -------------------------------------------------------------
    def boundary_scale_x(self, x):
        return self.vx * (2.0 * (np.asarray(x, dtype=np.float64) - self.lower) / (self.upper - self.lower) - 1.0)

    def boundary_scale_y(self, y):
        y = np.asarray(y, dtype=np.float64)
        if not self.y_range > 0:
            return np.zeros_like(y)
        return self.vy * (2.0 * (y - self.y_min) / self.y_range - 1.0)

    @property
    def y_stats(self) -> RunningStats:
        """Statistics of the boundary-scaled values under the *current* extrema.

        Boundary scaling of y is affine, so these equal a Welford pass over the
        whole re-scaled history without having to replay it.
        """
        raw = self.y_raw_stats
        out = RunningStats(raw.count, 0.0, 0.0, self.sigma_floor)
        if raw.count and self.y_range > 0:
            a = 2.0 * self.vy / self.y_range
            out.mean = float(self.boundary_scale_y(raw.mean))
            out.m2 = float(a * a * raw.m2)
        return out

    # -- updates -----------------------------------------------------------------------------
    def observe(self, x, y: float) -> "TransformState":
        x = np.asarray(x, dtype=np.float64)
        if not (np.all(np.isfinite(x)) and np.isfinite(y)):
            raise ValueError("observe() requires finite x and y")
        self.y_min = min(self.y_min, float(y))
        self.y_max = max(self.y_max, float(y))
        self.x_stats.push(self.boundary_scale_x(x))
        self.y_raw_stats.push(float(y))
        return self

    def copy(self) -> "TransformState":
        return TransformState(
            self.lower.copy(), self.upper.copy(), self.vx, self.vy, self.sigma_floor,
            self.y_min, self.y_max, self.x_stats.copy(), self.y_raw_stats.copy(),
        )

    # -- composed maps -------------------------------------------------------------------------
    def forward_x(self, x):
        return z_transform(self.boundary_scale_x(x), self.x_stats)

    def forward_y(self, y):
        return z_transform(self.boundary_scale_y(y), self.y_stats)

    def inverse_x(self, x_tilde):
        bnd = np.asarray(x_tilde, dtype=np.float64) * self.x_stats.std + self.x_stats.mean
        return self.lower + (self.upper - self.lower) * (bnd / self.vx + 1.0) / 2.0

    def gradient_factor(self) -> np.ndarray:
        # sigma_y and the value range are clamped jointly; a flat history gives
        # a large but finite factor instead of 0/0
        denom = self.y_stats.std * self.y_range if self.y_range > 0 else 0.0
        denom = max(denom, self.sigma_floor)
        return self.x_stats.std * (self.vy / self.vx) * (self.upper - self.lower) / denom

    def scale_gradient(self, g):
        return self.gradient_factor() * np.asarray(g, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "lower": self.lower.tolist(), "upper": self.upper.tolist(), "vx": self.vx, "vy": self.vy,
            "sigma_floor": self.sigma_floor, "y_min": self.y_min, "y_max": self.y_max,
            "x_stats": {"count": self.x_stats.count, "mean": np.asarray(self.x_stats.mean).tolist(),
                        "m2": np.asarray(self.x_stats.m2).tolist()},
            "y_raw_stats": {"count": self.y_raw_stats.count, "mean": float(self.y_raw_stats.mean),
                            "m2": float(self.y_raw_stats.m2)},
        }


# free-function spellings of the state methods
def boundary_scale_x(x, state: TransformState):
    return state.boundary_scale_x(x)


def boundary_scale_y(y, state: TransformState):
    return state.boundary_scale_y(y)


def observe(state: TransformState, x, y) -> TransformState:
    return state.observe(x, y)


def scale_gradient(g, state: TransformState):
    return state.scale_gradient(g)


def inverse_transform_x(x_tilde, state: TransformState):
    return state.inverse_x(x_tilde)


@dataclass
class TransformedTrajectory:
    x: np.ndarray  # (n, D)
    y: np.ndarray  # (n,)
    grad: np.ndarray  # (n, D)
    time: np.ndarray  # (n,)


def retransform_trajectory(xs, ys, grads, times, state: TransformState) -> TransformedTrajectory:
    """Transform every raw record under the current statistics (raw arrays untouched)."""
    xs = np.asarray(xs, dtype=np.float64)
    return TransformedTrajectory(
        x=state.forward_x(xs),
        y=state.forward_y(np.asarray(ys, dtype=np.float64)),
        grad=state.scale_gradient(np.asarray(grads, dtype=np.float64)),
        time=np.asarray(times, dtype=np.float64).copy(),
    )
