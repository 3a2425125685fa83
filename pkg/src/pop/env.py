"""Optimization episodes driven by a coordinate-wise step-size policy.

An episode starts from ``c`` uniformly drawn context points, moves to the best
of them, and then takes ``T`` gradient steps in transformed space with
per-coordinate step sizes chosen by the policy.  After every evaluation the
transform statistics absorb the new point and the whole history is
re-transformed before the next decision.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .policy import Policy, PolicyOutput, sample_action
from .transforms import TransformState, TransformedTrajectory, retransform_trajectory


class RewardKind(enum.Enum):
    CURRENT = "current"
    GLOBAL_IMP = "global_imp"
    GLOBAL_IMP_CLIPPED = "global_imp_clipped"
    SMAPE = "smape"
    MIX = "mix"


@dataclass(frozen=True)
class Reward:
    kind: RewardKind = RewardKind.GLOBAL_IMP_CLIPPED
    mix_alpha: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.mix_alpha <= 1.0:
            raise ValueError(f"mix_alpha must lie in [0, 1], got {self.mix_alpha}")

    @classmethod
    def parse(cls, text: str) -> "Reward":
        """``global_imp_clipped``, ``smape``, ``mix:0.2`` ..."""
        name, _, arg = text.partition(":")
        kind = RewardKind(name.strip().lower())
        return cls(kind, float(arg) if arg else 0.2)

    def __str__(self) -> str:
        return f"mix:{self.mix_alpha}" if self.kind is RewardKind.MIX else self.kind.value


def compute_reward(reward: Reward | RewardKind, y_t: float, y_prev: float, y_best_prev: float) -> float:
    """Reward for reaching transformed value ``y_t`` from ``y_prev`` with incumbent ``y_best_prev``."""
    if isinstance(reward, RewardKind):
        reward = Reward(reward)
    imp = y_best_prev - y_t
    kind = reward.kind
    if kind is RewardKind.CURRENT:
        return float(y_t)
    if kind is RewardKind.GLOBAL_IMP:
        return float(imp)
    if kind is RewardKind.GLOBAL_IMP_CLIPPED:
        return float(max(0.0, imp))
    if kind is RewardKind.SMAPE:
        denom = abs(y_best_prev) + abs(y_t)
        if denom == 0.0:
            return 0.0
        return float(max(0.0, 2.0 * max(0.0, imp) / denom))
    a = reward.mix_alpha
    return float(a * max(0.0, imp) + (1.0 - a) * (y_prev - y_t))


@dataclass
class TrajectoryRecord:
    x: np.ndarray
    y: float
    grad: np.ndarray
    time_frac: float


@dataclass
class Trajectory:
    records: list[TrajectoryRecord] = field(default_factory=list)
    context_size: int = 0
    budget: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def append(self, rec: TrajectoryRecord) -> None:
        self.records.append(rec)

    @property
    def xs(self) -> np.ndarray:
        return np.array([r.x for r in self.records])

    @property
    def ys(self) -> np.ndarray:
        return np.array([r.y for r in self.records], dtype=np.float64)

    @property
    def grads(self) -> np.ndarray:
        return np.array([r.grad for r in self.records])

    @property
    def times(self) -> np.ndarray:
        return np.array([r.time_frac for r in self.records], dtype=np.float64)

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(self.ys)

    def dump_jsonl(self, path: str | Path, state: TransformState | None = None) -> None:
        """One JSON object per record, with transformed fields when ``state`` is given."""
        tr = retransform_trajectory(self.xs, self.ys, self.grads, self.times, state) if state else None
        with open(path, "w") as fh:
            for i, r in enumerate(self.records):
                row = {"i": i, "x": r.x.tolist(), "y": r.y, "grad": r.grad.tolist(), "time_frac": r.time_frac}
                if tr is not None:
                    row.update(x_t=tr.x[i].tolist(), y_t=float(tr.y[i]), grad_t=tr.grad[i].tolist())
                fh.write(json.dumps(row) + "\n")


class EpisodeStatus(enum.Enum):
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


class Episode:
    """One function, one trajectory, one transform state.

    ``freeze_stats`` keeps the context statistics fixed for the whole episode
    (used to check reward telescoping; training never sets it).
    """

    def __init__(self, f, trajectory: Trajectory, state: TransformState, freeze_stats: bool = False):
        self.f = f
        self.trajectory = trajectory
        self.state = state
        self.freeze_stats = freeze_stats
        self.status = EpisodeStatus.RUNNING
        self.step_count = 0
        ys = trajectory.ys
        i_best = int(np.argmin(ys))
        self.best_y = float(ys[i_best])
        self.x = trajectory.records[i_best].x.copy()
        self.y = float(ys[i_best])
        self.g = trajectory.records[i_best].grad.copy()
        self._xs = trajectory.xs
        self._ys = ys
        self._gs = trajectory.grads
        self._ts = trajectory.times
        self._retransform()

    @property
    def dim(self) -> int:
        return self.state.dim

    @property
    def budget(self) -> int:
        return self.trajectory.budget

    @property
    def done(self) -> bool:
        return self.status is not EpisodeStatus.RUNNING

    def _retransform(self) -> None:
        self.transformed = retransform_trajectory(self._xs, self._ys, self._gs, self._ts, self.state)

    def tokens(self) -> np.ndarray:
        """``(D, n, 4)`` per-coordinate token streams of the current history."""
        tr = self.transformed
        n, D = tr.x.shape
        out = np.empty((D, n, 4))
        out[:, :, 0] = tr.x.T
        out[:, :, 1] = tr.y[None, :]
        out[:, :, 2] = tr.grad.T
        out[:, :, 3] = tr.time[None, :]
        return out

    def step(self, eta, reward: Reward | RewardKind = RewardKind.GLOBAL_IMP_CLIPPED) -> float:
        if self.done:
            raise RuntimeError(f"step() on a finished episode ({self.status.value})")
        eta = np.broadcast_to(np.asarray(eta, dtype=np.float64), (self.dim,))
        if not np.all(np.isfinite(eta)) or np.any(eta < 0):
            raise ValueError(f"step sizes must be finite and non-negative, got {eta}")
        st = self.state
        x_tilde = st.forward_x(self.x) - eta * st.scale_gradient(self.g)
        x_new = np.clip(st.inverse_x(x_tilde), st.lower, st.upper)
        # zero step sizes leave those coordinates bit-identical (no round-trip error)
        x_new = np.where(eta == 0.0, self.x, x_new)
        self.step_count += 1
        try:
            y_new, g_new = self.f.value_and_grad(x_new)
            y_new = float(y_new)
            ok = np.isfinite(y_new) and np.all(np.isfinite(g_new))
        except FloatingPointError:
            ok = False
        if not ok:
            self.status = EpisodeStatus.FAILED
            return 0.0
        # reward in the scale the action was taken under
        r = compute_reward(reward, float(st.forward_y(y_new)), float(st.forward_y(self.y)),
                           float(st.forward_y(self.best_y)))
        t = self.step_count / self.budget
        self.trajectory.append(TrajectoryRecord(x_new, y_new, np.asarray(g_new, dtype=np.float64), t))
        self._xs = np.vstack([self._xs, x_new])
        self._ys = np.append(self._ys, y_new)
        self._gs = np.vstack([self._gs, g_new])
        self._ts = np.append(self._ts, t)
        if not self.freeze_stats:
            st.observe(x_new, y_new)
        self._retransform()
        self.x, self.y, self.g = x_new, y_new, np.asarray(g_new, dtype=np.float64)
        self.best_y = min(self.best_y, y_new)
        if self.step_count >= self.budget:
            self.status = EpisodeStatus.DONE
        return r


def init_context(f, c: int, rng: np.random.Generator, budget: int, *, points: np.ndarray | None = None,
                 vx: float = 3.0, vy: float = 3.0, freeze_stats: bool = False) -> Episode:
    """Draw ``c`` uniform points in the box (or use ``points``) and build an episode."""
    if c < 1:
        raise ValueError("context size must be >= 1")
    lower, upper = np.asarray(f.lower, dtype=np.float64), np.asarray(f.upper, dtype=np.float64)
    if points is None:
        points = rng.uniform(lower, upper, size=(c, lower.shape[0]))
    points = np.asarray(points, dtype=np.float64)
    ys, gs = f.value_and_grad(points)
    traj = Trajectory(context_size=len(points), budget=budget)
    state = TransformState(lower, upper, vx=vx, vy=vy)
    for x, y, g in zip(points, ys, gs):
        traj.append(TrajectoryRecord(x.copy(), float(y), g.copy(), 0.0))
        state.observe(x, float(y))
    return Episode(f, traj, state, freeze_stats=freeze_stats)


def coordinate_view(tr: TransformedTrajectory, d: int) -> np.ndarray:
    """``(n, 4)`` tokens ``(x_d, y, grad_d, t/T)`` for coordinate ``d``."""
    if not 0 <= d < tr.x.shape[1]:
        raise IndexError(f"coordinate {d} out of range for D={tr.x.shape[1]}")
    return np.stack([tr.x[:, d], tr.y, tr.grad[:, d], tr.time], axis=1)


@dataclass
class EpisodeBatchResult:
    """Per-decision arrays are indexed ``[step, episode, coordinate]``."""

    episodes: list[Episode]
    tokens: list[np.ndarray]  # per step: (B, D, L, 4)
    actions: np.ndarray  # (T, B, D)
    log_probs: np.ndarray  # (T, B, D)
    values: np.ndarray  # (T, B, D)
    rewards: np.ndarray  # (T, B)
    alive: np.ndarray  # (T, B) bool: the decision was actually taken

    @property
    def episode_returns(self) -> np.ndarray:
        return self.rewards.sum(axis=0)


def run_episodes(functions, policy: Policy | Callable | None, T: int, c: int, rngs, *,
                 reward: Reward | RewardKind = RewardKind.GLOBAL_IMP_CLIPPED, deterministic: bool = False,
                 contexts=None, keep_tokens: bool = False, freeze_stats: bool = False) -> EpisodeBatchResult:
    """Roll out a batch of episodes in lockstep, batching policy calls over all streams.

    ``policy`` may be a :class:`Policy` or a callable mapping a ``(D, L, 4)``
    token array to per-coordinate step sizes (fixed schedules, tests).
    ``rngs`` supplies one generator per episode, used first for the context
    and then for action noise.
    """
    if T < 1:
        raise ValueError("budget T must be >= 1")
    B = len(functions)
    eps = [
        init_context(f, c, rngs[i], T, points=None if contexts is None else contexts[i], freeze_stats=freeze_stats)
        for i, f in enumerate(functions)
    ]
    D = eps[0].dim
    actions = np.zeros((T, B, D))
    logps = np.zeros((T, B, D))
    values = np.zeros((T, B, D))
    rewards = np.zeros((T, B))
    alive = np.zeros((T, B), dtype=bool)
    tokens: list[np.ndarray] = []
    for t in range(T):
        live = [i for i, e in enumerate(eps) if not e.done]
        if not live:
            break
        toks = np.stack([eps[i].tokens() for i in live])  # (b, D, L, 4)
        if keep_tokens:
            full = np.zeros((B,) + toks.shape[1:])
            full[live] = toks
            tokens.append(full)
        if isinstance(policy, Policy):
            out = policy.forward(toks.reshape(-1, *toks.shape[2:]))
            mu = out.mu.reshape(len(live), D)
            values[t, live] = out.value.reshape(len(live), D)
            for j, i in enumerate(live):
                u, step, lp = sample_action(PolicyOutput(mu[j], out.log_std, values[t, i]), rngs[i], deterministic)
                actions[t, i], logps[t, i] = u, lp
                rewards[t, i] = eps[i].step(step, reward)
                alive[t, i] = True
        else:
            for j, i in enumerate(live):
                step = np.asarray(policy(toks[j]), dtype=np.float64)
                actions[t, i] = np.log(np.maximum(step, 1e-300))
                rewards[t, i] = eps[i].step(step, reward)
                alive[t, i] = True
    return EpisodeBatchResult(eps, tokens, actions, logps, values, rewards, alive)


def run_episode(f, policy, T: int, c: int, rng: np.random.Generator, **kw):
    """Single-function convenience wrapper around :func:`run_episodes`.

    Returns ``(trajectory, rewards, log_probs, values)`` with per-step arrays of
    shape ``(T,)``, ``(T, D)`` and ``(T, D)``.
    """
    res = run_episodes([f], policy, T, c, [rng], **kw)
    ep = res.episodes[0]
    n = ep.step_count
    return ep.trajectory, res.rewards[:n, 0], res.log_probs[:n, 0], res.values[:n, 0]
