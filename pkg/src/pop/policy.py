"""Transformer actor-critic acting on per-coordinate optimization histories.

Each stream is a sequence of 4-feature tokens ``(x_d, y, grad_d, t/T)``.  Tokens
are linearly embedded, passed through pre-norm transformer blocks with
bidirectional attention, and the final token's state is pooled into a shared
32-d representation feeding the actor (mean of the log-step-size) and critic
heads.  There is no positional table; order enters only through the time
feature, so any history length works.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, layer_norm, softmax

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PolicyConfig:
    embed_dim: int = 64
    blocks: int = 4
    heads: int = 4
    ffn_mult: int = 3
    dropout: float = 0.05
    dropout_enabled: bool = False
    shared_dim: int = 32
    head_hidden: int = 16
    logstd_bounds: tuple[float, float] = (-3.0, 2.0)
    token_features: int = 4

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if not self.logstd_bounds[0] < self.logstd_bounds[1]:
            raise ValueError(f"logstd_bounds must be increasing, got {self.logstd_bounds}")


@dataclass
class PolicyOutput:
    mu: np.ndarray
    log_std: float
    value: np.ndarray


def squash_log_std(raw, low: float, high: float):
    return low + (high - low) * (np.tanh(raw) + 1.0) / 2.0


class Policy:
    def __init__(self, config: PolicyConfig | None = None, seed: int = 0, dtype=np.float64):
        self.config = config or PolicyConfig()
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        c = self.config
        E, F = c.embed_dim, c.ffn_mult * c.embed_dim

        def dense(name, fan_in, fan_out, scale=1.0):
            w = rng.normal(0.0, scale / math.sqrt(fan_in), size=(fan_in, fan_out))
            self._add(f"{name}.w", w)
            self._add(f"{name}.b", np.zeros(fan_out))

        def norm(name, dim):
            self._add(f"{name}.g", np.ones(dim))
            self._add(f"{name}.b", np.zeros(dim))

        dense("embed", c.token_features, E)
        for i in range(c.blocks):
            norm(f"block{i}.ln1", E)
            dense(f"block{i}.qkv", E, 3 * E)
            dense(f"block{i}.out", E, E, scale=1.0 / math.sqrt(2 * c.blocks))
            norm(f"block{i}.ln2", E)
            dense(f"block{i}.ff1", E, F)
            dense(f"block{i}.ff2", F, E, scale=1.0 / math.sqrt(2 * c.blocks))
        norm("final_ln", E)
        dense("shared", E, c.shared_dim)
        dense("actor.h", c.shared_dim, c.head_hidden)
        dense("actor.out", c.head_hidden, 1, scale=0.01)
        dense("critic.h", c.shared_dim, c.head_hidden)
        dense("critic.out", c.head_hidden, 1)
        # raw 0 puts log_std at the centre of its bounds
        self._add("log_std_raw", np.zeros(()))

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)

    # -- parameter groups ---------------------------------------------------------------
    def actor_parameters(self) -> list[Tensor]:
        return [p for n, p in self.params.items() if not n.startswith("critic.")]

    def critic_parameters(self) -> list[Tensor]:
        return [p for n, p in self.params.items() if n.startswith("critic.")]

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    # -- forward ----------------------------------------------------------------------------
    def _dense(self, name: str, x: Tensor) -> Tensor:
        return x @ self.params[f"{name}.w"] + self.params[f"{name}.b"]

    def _ln(self, name: str, x: Tensor) -> Tensor:
        return layer_norm(x, self.params[f"{name}.g"], self.params[f"{name}.b"])

    def _dropout(self, x: Tensor, rng: np.random.Generator | None) -> Tensor:
        p = self.config.dropout
        if rng is None or not self.config.dropout_enabled or p <= 0:
            return x
        mask = (rng.random(x.shape) >= p).astype(self.dtype) / (1.0 - p)
        return x * Tensor(mask)

    def _block(self, i: int, x: Tensor, last_only: bool, rng) -> Tensor:
        c = self.config
        N, L, E = x.shape
        H, dh = c.heads, E // c.heads
        h = self._ln(f"block{i}.ln1", x)
        qkv = self._dense(f"block{i}.qkv", h).reshape(N, L, 3, H, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        if last_only:
            # only the pooled token is read downstream of the final block
            q = q[:, :, L - 1 : L, :]
            x = x[:, L - 1 : L, :]
        att = softmax((q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh)))
        att = self._dropout(att, rng)
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape(N, x.shape[1], E)
        x = x + self._dropout(self._dense(f"block{i}.out", ctx), rng)
        h = self._ln(f"block{i}.ln2", x)
        h = self._dense(f"block{i}.ff2", self._dense(f"block{i}.ff1", h).relu())
        return x + self._dropout(h, rng)

    def forward_tensors(self, tokens: np.ndarray, rng: np.random.Generator | None = None):
        """Differentiable forward pass on an ``(N, L, 4)`` batch of equal-length streams.

        Returns ``(mu, value, log_std)`` tensors of shapes ``(N,)``, ``(N,)`` and ``()``.
        """
        tokens = np.asarray(tokens)
        if tokens.ndim != 3 or tokens.shape[1] < 1:
            raise ValueError(f"expected a non-empty (N, L, {self.config.token_features}) batch, got {tokens.shape}")
        if tokens.shape[2] != self.config.token_features:
            raise ValueError(f"expected {self.config.token_features} features per token, got {tokens.shape[2]}")
        x = self._dense("embed", Tensor(tokens.astype(self.dtype, copy=False)))
        n_blocks = self.config.blocks
        for i in range(n_blocks):
            x = self._block(i, x, last_only=(i == n_blocks - 1), rng=rng)
        pooled = self._ln("final_ln", x[:, 0, :])
        shared = self._dense("shared", pooled).relu()
        mu = self._dense("actor.out", self._dense("actor.h", shared).relu()).reshape(-1)
        value = self._dense("critic.out", self._dense("critic.h", shared).relu()).reshape(-1)
        low, high = self.config.logstd_bounds
        log_std = (self.params["log_std_raw"].tanh() + 1.0) * ((high - low) / 2.0) + low
        return mu, value, log_std

    def forward(self, tokens: np.ndarray) -> PolicyOutput:
        """Inference on one ``(L, 4)`` stream or an ``(N, L, 4)`` batch."""
        tokens = np.asarray(tokens)
        single = tokens.ndim == 2
        with ad.no_grad():
            mu, value, log_std = self.forward_tensors(tokens[None] if single else tokens)
        mu_, v_ = mu.data.astype(np.float64), value.data.astype(np.float64)
        if single:
            mu_, v_ = mu_[:1], v_[:1]
        return PolicyOutput(mu=mu_, log_std=float(log_std.data), value=v_)

    def batched_forward(self, streams: list[np.ndarray]) -> list[PolicyOutput]:
        """Run many streams, grouping equal lengths into one batch each."""
        by_len: dict[int, list[int]] = {}
        for i, s in enumerate(streams):
            by_len.setdefault(len(s), []).append(i)
        results: list[PolicyOutput | None] = [None] * len(streams)
        for idx in by_len.values():
            out = self.forward(np.stack([streams[i] for i in idx]))
            for j, i in enumerate(idx):
                results[i] = PolicyOutput(mu=out.mu[j : j + 1], log_std=out.log_std, value=out.value[j : j + 1])
        return results

    # -- persistence ------------------------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.astype(np.float64) for n, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise ValueError(f"state dict keys mismatch: {sorted(missing)}")
        for n, p in self.params.items():
            if tuple(state[n].shape) != p.shape:
                raise ValueError(f"shape mismatch for {n}: {state[n].shape} vs {p.shape}")
            p.data = np.array(state[n], dtype=self.dtype)

    def save(self, path: str | Path, extra: dict | None = None) -> Path:
        meta = {"policy_config": asdict(self.config), "seed": self.seed}
        meta.update(extra or {})
        manifest, _ = ad.save_weights(path, self.state_dict(), meta)
        return manifest

    @classmethod
    def load(cls, path: str | Path, dtype=np.float64) -> "Policy":
        arrays, meta = ad.load_weights(path)
        cfg = dict(meta["policy_config"])
        cfg["logstd_bounds"] = tuple(cfg["logstd_bounds"])
        policy = cls(PolicyConfig(**cfg), seed=meta.get("seed", 0), dtype=dtype)
        policy.load_state_dict(arrays)
        return policy


def sample_action(out: PolicyOutput, rng: np.random.Generator | None, deterministic: bool = False):
    """Draw ``u ~ N(mu, exp(log_std)^2)`` per stream; the step size is ``exp(u)``.

    Log-probabilities are densities of ``u`` (not of the step size).
    """
    mu = np.asarray(out.mu, dtype=np.float64)
    std = math.exp(out.log_std)
    if deterministic:
        u = mu.copy()
    else:
        u = mu + std * rng.standard_normal(mu.shape)
    return u, np.exp(u), gaussian_log_prob(u, mu, out.log_std)


def gaussian_log_prob(u, mu, log_std):
    z = (np.asarray(u) - np.asarray(mu)) / math.exp(log_std)
    return -0.5 * z * z - log_std - 0.5 * LOG_2PI
