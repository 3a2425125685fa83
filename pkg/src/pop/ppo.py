"""PPO meta-training of the step-size policy on functions drawn from the prior."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import AdamW, Tensor, clip_grad_norm, minimum
from .env import Reward, run_episodes
from .metrics import normalized_improvement
from .policy import LOG_2PI, Policy, PolicyConfig
from .prior import PriorConfig, sample_functions
from .transforms import RunningStats

log = logging.getLogger(__name__)

TRAIN_LOG_COLUMNS = ["iteration", "mean_episode_reward", "moving_avg", "kl", "clip_frac",
                     "epochs", "kl_coef", "validation_ni"]


@dataclass
class TrainConfig:
    batch_functions: int = 64
    iterations: int = 2000
    resample_every: int = 8
    T: int = 40
    c: int = 10
    dim: int = 2
    features: int = 256
    reward: str = "global_imp_clipped"
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    actor_weight_decay: float = 1e-4
    critic_weight_decay: float = 1e-4
    actor_warmup: int = 300
    critic_warmup: int = 10
    clip_ratio: float = 0.1
    gae_gamma: float = 1.0
    gae_lambda: float = 1.0
    update_epochs: int = 4
    minibatch_size: int = 4096
    grad_clip_norm: float = 0.5
    kl_stop: float = 0.01
    kl_coef_init: float = 0.1
    kl_target: float = 0.01
    value_coef: float = 0.5
    normalize_advantages: bool = True
    normalize_returns: bool = True
    dropout: bool = False
    dtype: str = "float32"
    seed: int = 0
    checkpoint_every: int = 250
    validation_every: int = 0
    validation_tasks: int = 64
    moving_avg_window: int = 50

    def __post_init__(self):
        positive = ["batch_functions", "resample_every", "T", "c", "dim", "features", "update_epochs",
                    "minibatch_size", "validation_tasks", "moving_avg_window"]
        for name in positive:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0.0 < self.clip_ratio < 1.0:
            raise ValueError(f"clip_ratio must lie in (0, 1), got {self.clip_ratio}")
        for name in ("actor_lr", "critic_lr", "grad_clip_norm", "kl_stop", "kl_target"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        Reward.parse(self.reward)
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def transitions_per_iteration(self) -> int:
        return self.batch_functions * self.dim * self.T

    def prior(self) -> PriorConfig:
        return PriorConfig(dim=self.dim, features=self.features)


@dataclass
class TransitionBatch:
    """Flattened transitions; tokens are grouped by decision step (equal lengths).

    ``tokens[t]`` is ``(S, c + t, 4)`` for ``S`` coordinate streams; the flat
    arrays are indexed by ``t * S + s``.
    """

    tokens: list[np.ndarray]
    actions: np.ndarray
    old_log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    valid: np.ndarray
    returns: np.ndarray | None = None
    advantages: np.ndarray | None = None
    episode_rewards: np.ndarray | None = None
    failed_episodes: int = 0

    @property
    def n_streams(self) -> int:
        return self.tokens[0].shape[0]

    def __len__(self) -> int:
        return int(self.valid.sum())


def compute_returns_and_advantages(rewards, values, gamma: float = 1.0, lam: float = 1.0, valid=None):
    """GAE over ``(T, S)`` arrays; bootstrap value after the last step is 0.

    With ``gamma = lam = 1`` the advantage is the reward-to-go minus the value.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.ndim == 1:
        r, v = rewards[:, None], values[:, None]
        ret, adv = compute_returns_and_advantages(r, v, gamma, lam, None if valid is None else np.asarray(valid)[:, None])
        return ret[:, 0], adv[:, 0]
    T = rewards.shape[0]
    valid = np.ones_like(rewards, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1:])
    next_value = np.zeros(rewards.shape[1:])
    for t in reversed(range(T)):
        nonterminal = valid[t + 1] if t + 1 < T else np.zeros(rewards.shape[1:], dtype=bool)
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = np.where(valid[t], last, 0.0)
        next_value = values[t]
    returns = adv + values
    return np.where(valid, returns, 0.0), adv


def clipped_surrogate(ratio: Tensor, adv: np.ndarray, clip: float) -> Tensor:
    """Per-sample ``min(r A, clip(r, 1-eps, 1+eps) A)``."""
    a = Tensor(np.asarray(adv, dtype=ratio.dtype))
    return minimum(ratio * a, ratio.clip(1.0 - clip, 1.0 + clip) * a)


def gaussian_log_prob_t(u: np.ndarray, mu: Tensor, log_std: Tensor) -> Tensor:
    z = (Tensor(np.asarray(u, dtype=mu.dtype)) - mu) / log_std.exp()
    return z * z * (-0.5) - log_std - 0.5 * LOG_2PI


def adapt_kl_coef(coef: float, kl: float, target: float) -> float:
    if kl > 1.5 * target:
        return coef * 2.0
    if kl < target / 1.5:
        return coef / 2.0
    return coef


class PPOTrainer:
    def __init__(self, config: TrainConfig, policy: Policy | None = None):
        self.config = config
        dtype = np.float32 if config.dtype == "float32" else np.float64
        pcfg = PolicyConfig(dropout_enabled=config.dropout)
        self.policy = policy or Policy(pcfg, seed=config.seed, dtype=dtype)
        self.actor_opt = AdamW(self.policy.actor_parameters(), config.actor_lr, config.actor_weight_decay,
                               config.actor_warmup)
        self.critic_opt = AdamW(self.policy.critic_parameters(), config.critic_lr, config.critic_weight_decay,
                                config.critic_warmup)
        self.kl_coef = config.kl_coef_init
        self.return_stats = RunningStats()
        self.reward = Reward.parse(config.reward)
        self.prior = config.prior()
        self._functions = None
        self._function_batch = -1
        self.dropout_rng = np.random.default_rng([config.seed, 7])

    # -- data ------------------------------------------------------------------------------
    def functions_for(self, iteration: int):
        k = iteration // self.config.resample_every
        if k != self._function_batch:
            self._functions = sample_functions(self.prior, self.config.batch_functions, seed=_mix(self.config.seed, 1, k))
            self._function_batch = k
        return self._functions

    def collect(self, iteration: int) -> TransitionBatch:
        cfg = self.config
        funcs = self.functions_for(iteration)
        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(_mix(cfg.seed, 2, iteration)).spawn(len(funcs))]
        res = run_episodes(funcs, self.policy, cfg.T, cfg.c, rngs, reward=self.reward, keep_tokens=True)
        T, B, D = res.actions.shape
        S = B * D
        tokens = [tk.reshape(S, *tk.shape[2:]) for tk in res.tokens]
        valid = np.repeat(res.alive[:, :, None], D, axis=2).reshape(T, S)
        rewards = np.repeat(res.rewards[:, :, None], D, axis=2).reshape(T, S)
        batch = TransitionBatch(
            tokens=tokens,
            actions=res.actions.reshape(T, S),
            old_log_probs=res.log_probs.reshape(T, S),
            rewards=rewards,
            values=res.values.reshape(T, S),
            valid=valid,
            episode_rewards=res.episode_returns,
            failed_episodes=int(sum(e.status.value == "failed" for e in res.episodes)),
        )
        return batch

    def prepare(self, batch: TransitionBatch) -> TransitionBatch:
        """Normalize rewards by the running return scale, then compute GAE targets."""
        cfg = self.config
        rewards = batch.rewards
        if cfg.normalize_returns:
            raw_ret, _ = compute_returns_and_advantages(rewards, np.zeros_like(rewards), cfg.gae_gamma, 1.0, batch.valid)
            # one return per episode-step (coordinate streams share rewards)
            per_ep = raw_ret[:, :: self.config.dim][batch.valid[:, :: self.config.dim]]
            for v in per_ep:
                self.return_stats.push(v)
            scale = float(self.return_stats.std) if self.return_stats.count > 1 else 1.0
            rewards = rewards / max(scale, 1e-8)
        batch.returns, batch.advantages = compute_returns_and_advantages(
            rewards, batch.values, cfg.gae_gamma, cfg.gae_lambda, batch.valid)
        if not np.all(np.isfinite(batch.advantages)):
            raise FloatingPointError("non-finite advantages")
        return batch

    # -- update ------------------------------------------------------------------------------
    def update(self, batch: TransitionBatch, rng: np.random.Generator) -> dict:
        cfg = self.config
        T = len(batch.tokens)
        S = batch.n_streams
        flat_valid = np.flatnonzero(batch.valid.reshape(-1))
        actions = batch.actions.reshape(-1)
        old_lp = batch.old_log_probs.reshape(-1)
        returns = batch.returns.reshape(-1)
        advs = batch.advantages.reshape(-1)
        params = list(self.policy.params.values())
        kl_hist, clip_hist, epochs_run = [], [], 0
        actor_losses, critic_losses = [], []
        for epoch in range(cfg.update_epochs):
            perm = rng.permutation(flat_valid)
            epoch_kl, epoch_clip, epoch_n = 0.0, 0.0, 0
            for start in range(0, len(perm), cfg.minibatch_size):
                mb = perm[start : start + cfg.minibatch_size]
                a_mb = advs[mb]
                if cfg.normalize_advantages and len(mb) > 1:
                    a_mb = (a_mb - a_mb.mean()) / (a_mb.std() + 1e-8)
                adv_of = dict(zip(mb.tolist(), a_mb))
                self.actor_opt.zero_grad()
                self.critic_opt.zero_grad()
                order = np.sort(mb)
                steps = order // S
                for t in np.unique(steps):
                    idx = order[steps == t]
                    stream = idx - t * S
                    w = len(idx) / len(mb)
                    mu, value, log_std = self.policy.forward_tensors(
                        batch.tokens[t][stream], rng=self.dropout_rng if cfg.dropout else None)
                    new_lp = gaussian_log_prob_t(actions[idx], mu, log_std)
                    log_ratio = new_lp - Tensor(old_lp[idx].astype(mu.dtype))
                    ratio = log_ratio.exp()
                    adv = np.array([adv_of[i] for i in idx.tolist()])
                    surr = clipped_surrogate(ratio, adv, cfg.clip_ratio)
                    kl = (ratio - 1.0) - log_ratio  # non-negative estimator of KL(old || new)
                    actor_loss = -surr.mean() + kl.mean() * self.kl_coef
                    diff = value - Tensor(returns[idx].astype(value.dtype))
                    critic_loss = (diff * diff).mean()
                    loss = (actor_loss + critic_loss * cfg.value_coef) * w
                    lv = float(loss.data)
                    if not math.isfinite(lv):
                        raise FloatingPointError(
                            f"non-finite loss (epoch {epoch}, step group {t}): actor={float(actor_loss.data)}, "
                            f"critic={float(critic_loss.data)}")
                    loss.backward()
                    r = ratio.data
                    epoch_kl += float(kl.data.sum())
                    epoch_clip += float((np.abs(r - 1.0) > cfg.clip_ratio).sum())
                    epoch_n += len(idx)
                    actor_losses.append(float(actor_loss.data))
                    critic_losses.append(float(critic_loss.data))
                clip_grad_norm(params, cfg.grad_clip_norm)
                self.actor_opt.step()
                self.critic_opt.step()
            epochs_run += 1
            mean_kl = epoch_kl / max(epoch_n, 1)
            kl_hist.append(mean_kl)
            clip_hist.append(epoch_clip / max(epoch_n, 1))
            if mean_kl > cfg.kl_stop:
                break
        self.kl_coef = adapt_kl_coef(self.kl_coef, kl_hist[-1], cfg.kl_target)
        return {
            "kl": kl_hist[-1],
            "clip_frac": clip_hist[-1],
            "epochs": epochs_run,
            "kl_coef": self.kl_coef,
            "actor_loss": float(np.mean(actor_losses)) if actor_losses else float("nan"),
            "critic_loss": float(np.mean(critic_losses)) if critic_losses else float("nan"),
        }

    def iteration(self, it: int) -> dict:
        batch = self.prepare(self.collect(it))
        diag = self.update(batch, np.random.default_rng(_mix(self.config.seed, 3, it)))
        diag["mean_episode_reward"] = float(np.mean(batch.episode_rewards))
        diag["failed_episodes"] = batch.failed_episodes
        return diag


def _mix(*keys: int) -> list[int]:
    return [int(k) for k in keys]


def validation_tasks(config: TrainConfig, n: int | None = None, seed_offset: int = 10_000):
    """Held-out prior tasks, disjoint from training seeds by construction."""
    n = n or config.validation_tasks
    funcs = sample_functions(config.prior(), n, seed=_mix(config.seed + seed_offset, 4))
    ctx_rng = np.random.default_rng(_mix(config.seed + seed_offset, 5))
    contexts = [ctx_rng.uniform(f.lower, f.upper, size=(config.c, f.dim)) for f in funcs]
    return funcs, contexts


def evaluate_policy_ni(policy: Policy, functions, contexts, T: int, c: int, seed: int = 0,
                       deterministic: bool = True, chunk: int = 64) -> np.ndarray:
    """Final normalized improvement per task with the policy acting greedily."""
    out = []
    for s in range(0, len(functions), chunk):
        fs, cs = functions[s : s + chunk], contexts[s : s + chunk]
        rngs = [np.random.default_rng([seed, s + i]) for i in range(len(fs))]
        res = run_episodes(fs, policy, T, c, rngs, deterministic=deterministic, contexts=cs)
        for e in res.episodes:
            ys = e.trajectory.ys
            out.append(float(normalized_improvement(ys[:c], ys.min())))
    return np.asarray(out)


def train(config: TrainConfig, out_dir: str | Path, progress: bool = False) -> dict:
    """Run PPO for ``config.iterations`` iterations, writing checkpoints and a CSV log.

    Returns a summary dict with the file list.  Deterministic for a fixed seed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trainer = PPOTrainer(config)
    outputs = []
    meta = {"train_config": asdict(config)}

    def checkpoint(it: int):
        p = trainer.policy.save(out / f"ckpt_{it:06d}", extra=dict(meta, iteration=it))
        outputs.extend([p.name, p.with_suffix(".bin").name])

    checkpoint(0)
    val = validation_tasks(config) if config.validation_every else None
    log_path = out / "train_log.csv"
    rewards = []
    t0 = time.time()
    with open(log_path, "w", newline="") as fh:
        fh.write("# schema_version=1\n")
        w = csv.writer(fh)
        w.writerow(TRAIN_LOG_COLUMNS)
        for it in range(1, config.iterations + 1):
            diag = trainer.iteration(it - 1)
            rewards.append(diag["mean_episode_reward"])
            window = rewards[-config.moving_avg_window :]
            vni = ""
            if val is not None and it % config.validation_every == 0:
                vni = repr(float(evaluate_policy_ni(trainer.policy, *val, config.T, config.c).mean()))
            w.writerow([it, repr(diag["mean_episode_reward"]), repr(float(np.mean(window))), repr(diag["kl"]),
                        repr(diag["clip_frac"]), diag["epochs"], repr(diag["kl_coef"]), vni])
            fh.flush()
            if progress:
                log.info("it %d reward %.4f avg %.4f kl %.4g epochs %d (%.1fs)", it, diag["mean_episode_reward"],
                         np.mean(window), diag["kl"], diag["epochs"], time.time() - t0)
            if config.checkpoint_every and it % config.checkpoint_every == 0 and it != config.iterations:
                checkpoint(it)
    if config.iterations > 0:
        checkpoint(config.iterations)
    outputs.append(log_path.name)
    final = out / f"ckpt_{config.iterations:06d}.json"
    return {"outputs": outputs, "final_checkpoint": str(final), "train_log": str(log_path),
            "episode_rewards": rewards}
