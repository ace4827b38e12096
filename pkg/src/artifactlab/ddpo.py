"""Importance-sampled policy-gradient fine-tuning of the toy denoiser.

For a batch sampled from a frozen copy ``old`` of the policy, the ascent
direction is::

    mean over trajectories of  sum_t clip(p_theta / p_old) * grad log p_theta(x_{t-1} | x_t, c) * A

where ``A`` is the trajectory reward, optionally standardized within the
batch. The reward is computed once on x_0 and shared by all its steps.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .diffusion import (
    Adam, Denoiser, NoiseSchedule, Trajectory, batch_logprob, batch_logprob_grad, sample_batch, save_checkpoint,
)
from .errors import ArtifactLabError, DomainError, NumericalError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DDPOConfig:
    batch_size: int = 24
    lr: float = 3e-4
    inner_epochs: int = 1
    clip_range: float | None = 0.2
    normalize_advantages: bool = True
    batches: int = 300
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise DomainError("batch_size must be at least 1")
        if self.lr < 0:
            raise DomainError("learning rate must be non-negative")
        if self.clip_range is not None and not 0 < self.clip_range < 1:
            raise DomainError("clip_range must lie in (0, 1)")
        if self.inner_epochs < 1:
            raise DomainError("inner_epochs must be at least 1")


class CollectionError(ArtifactLabError):
    def __init__(self, index: int, cause: Exception):
        self.index = index
        super().__init__(f"trajectory {index}: {cause}")


def collect(denoiser_old: Denoiser, n: int, c_sampler: Callable, reward_fn: Callable, rng: np.random.Generator,
            schedule: NoiseSchedule | None = None) -> list[Trajectory]:
    """Sample ``n`` trajectories and attach ``reward_fn(x0)`` to each.

    Every trajectory gets its own child stream spawned from ``rng``, so the
    batch is reproducible under a fixed seed.
    """
    if n < 1:
        raise DomainError("n must be at least 1")
    schedule = schedule or NoiseSchedule()
    conditions = np.array([c_sampler(rng) for _ in range(n)], dtype=int)
    streams = rng.spawn(n)
    trajs = sample_batch(denoiser_old, conditions, streams, schedule)
    for i, tr in enumerate(trajs):
        try:
            r = float(reward_fn(tr.x0))
        except ArtifactLabError as exc:
            raise CollectionError(i, exc) from exc
        if not math.isfinite(r):
            raise CollectionError(i, NumericalError(f"non-finite reward {r}"))
        tr.reward = r
    return trajs


def advantages(rewards: np.ndarray, normalize: bool) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=float)
    if not normalize:
        return rewards.copy()
    centered = rewards - rewards.mean()
    std = rewards.std()
    if std < 1e-12:
        return np.zeros_like(rewards)
    return centered / std


def _stack(batch: list[Trajectory]):
    T = len(batch[0].logps)
    xt = np.concatenate([tr.states[1:] for tr in batch])  # x_t for t = 1..T
    x_prev = np.concatenate([tr.states[:-1] for tr in batch])
    ts = np.tile(np.arange(1, T + 1), len(batch))
    cs = np.repeat([tr.condition for tr in batch], T)
    old_logp = np.concatenate([tr.logps for tr in batch])
    return xt, x_prev, ts, cs, old_logp, T


def policy_gradient(batch: list[Trajectory], denoiser: Denoiser, denoiser_old: Denoiser | None, cfg: DDPOConfig,
                    schedule: NoiseSchedule | None = None, return_ratios: bool = False):
    """Ascent direction for the batch (flat, same layout as ``Denoiser.flat``)."""
    if not batch:
        raise DomainError("empty batch")
    schedule = schedule or NoiseSchedule()
    if denoiser_old is not None and not denoiser.same_topology(denoiser_old):
        raise DomainError("policy and old policy differ in topology")
    xt, x_prev, ts, cs, old_logp, T = _stack(batch)
    adv = advantages([tr.reward for tr in batch], cfg.normalize_advantages)
    # First pass only for the current log-probs; the ratio enters as a constant weight.
    logp = batch_logprob(denoiser, xt, x_prev, ts, cs, schedule)
    ratio = np.exp(logp - old_logp)
    bad = np.flatnonzero(~np.isfinite(ratio))
    if bad.size:
        i = int(bad[0])
        raise NumericalError(f"non-finite importance ratio at trajectory {i // T}, t={ts[i]}")
    if cfg.clip_range is not None:
        ratio = np.clip(ratio, 1.0 - cfg.clip_range, 1.0 + cfg.clip_range)
    weights = ratio * np.repeat(adv, T) / len(batch)
    _, grad = batch_logprob_grad(denoiser, xt, x_prev, ts, cs, weights, schedule)
    if return_ratios:
        return grad, np.exp(logp - old_logp)
    return grad


def reinforce_gradient(batch: list[Trajectory], denoiser: Denoiser, cfg: DDPOConfig,
                       schedule: NoiseSchedule | None = None) -> np.ndarray:
    """Plain score-function estimator: mean over trajectories of sum_t grad log p * A."""
    schedule = schedule or NoiseSchedule()
    adv = advantages([tr.reward for tr in batch], cfg.normalize_advantages)
    total = np.zeros(denoiser.n_params)
    for tr, a in zip(batch, adv):
        for t in range(1, len(tr.logps) + 1):
            _, g = batch_logprob_grad(denoiser, tr.states[t], tr.states[t - 1], [t], [tr.condition], [a], schedule)
            total += g
    return total / len(batch)


def surrogate(batch: list[Trajectory], denoiser: Denoiser, cfg: DDPOConfig, schedule: NoiseSchedule | None = None) -> float:
    """mean over trajectories of sum_t log p_theta * A; its gradient at theta_old is the estimator."""
    schedule = schedule or NoiseSchedule()
    xt, x_prev, ts, cs, _, T = _stack(batch)
    adv = advantages([tr.reward for tr in batch], cfg.normalize_advantages)
    logp = batch_logprob(denoiser, xt, x_prev, ts, cs, schedule)
    return float(np.sum(logp * np.repeat(adv, T)) / len(batch))


@dataclass
class TrainingHistory:
    mean_reward: list = field(default_factory=list)
    std_reward: list = field(default_factory=list)
    artifact_rate: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)

    def __len__(self):
        return len(self.mean_reward)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["batch", "mean_reward", "std_reward", "artifact_rate", "grad_norm"])
        for i, row in enumerate(zip(self.mean_reward, self.std_reward, self.artifact_rate, self.grad_norm)):
            w.writerow([i, *(repr(float(v)) for v in row)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainingHistory":
        h = cls()
        for row in csv.DictReader(io.StringIO(text)):
            h.mean_reward.append(float(row["mean_reward"]))
            h.std_reward.append(float(row["std_reward"]))
            h.artifact_rate.append(float(row["artifact_rate"]))
            h.grad_norm.append(float(row["grad_norm"]))
        return h

    def decile_means(self) -> tuple[float, float]:
        k = max(1, len(self) // 10)
        r = np.asarray(self.mean_reward)
        return float(r[:k].mean()), float(r[-k:].mean())


class TrainingAborted(NumericalError):
    def __init__(self, message: str, last_good: Denoiser, history: TrainingHistory):
        self.last_good = last_good
        self.history = history
        super().__init__(message)


def train_loop(denoiser: Denoiser, reward_fn: Callable, cfg: DDPOConfig, rng: np.random.Generator,
               schedule: NoiseSchedule | None = None, c_sampler: Callable | None = None,
               is_artifact: Callable | None = None, checkpoint_dir=None,
               callback: Callable | None = None) -> tuple[Denoiser, TrainingHistory]:
    """Alternate collection from a frozen snapshot with Adam ascent steps.

    ``is_artifact(x0)`` feeds the artifact-rate column of the history (NaN
    when omitted). With ``checkpoint_dir`` the policy is saved every
    ``cfg.checkpoint_every`` batches and the last good policy on abort.
    """
    schedule = schedule or NoiseSchedule()
    n_classes = denoiser.n_classes
    c_sampler = c_sampler or (lambda r: int(r.integers(n_classes)))
    policy = denoiser.copy()
    opt = Adam(cfg.lr, maximize=True)
    history = TrainingHistory()
    ckpt = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt:
        ckpt.mkdir(parents=True, exist_ok=True)
    for b in range(cfg.batches):
        old = policy.copy()
        batch = collect(old, cfg.batch_size, c_sampler, reward_fn, rng, schedule)
        rewards = np.array([tr.reward for tr in batch])
        norm = 0.0
        for _ in range(cfg.inner_epochs):
            grad = policy_gradient(batch, policy, old, cfg, schedule)
            norm = float(np.linalg.norm(grad))
            w = opt.step(policy.flat(), grad)
            if not np.all(np.isfinite(w)):
                if ckpt:
                    save_checkpoint(old, schedule, ckpt / "last_good.ckpt")
                raise TrainingAborted(f"non-finite weights after batch {b}", old, history)
            policy.set_flat(w)
        history.mean_reward.append(float(rewards.mean()))
        history.std_reward.append(float(rewards.std()))
        history.artifact_rate.append(
            float(np.mean([bool(is_artifact(tr.x0)) for tr in batch])) if is_artifact else float("nan"))
        history.grad_norm.append(norm)
        if ckpt and cfg.checkpoint_every and (b + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(policy, schedule, ckpt / f"batch_{b + 1:05d}.ckpt")
        if callback:
            callback(b, history)
    return policy, history
