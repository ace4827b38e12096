"""Toy conditional DDPM over standardized scene vectors.

The denoiser is a two-hidden-layer SiLU MLP with hand-written backward
passes; every gradient here is checked against finite differences in the
test suite.

Checkpoint layout (all little-endian)::

    magic        8 bytes  b"ALDENOIS"
    version      uint32   CHECKPOINT_VERSION
    dim          uint32   state dimension
    hidden       uint32   hidden width
    time_dim     uint32   sinusoidal embedding width
    n_classes    uint32   condition classes
    steps        uint32   schedule length T
    beta_start   float64
    beta_end     float64
    n_weights    uint64
    weights      n_weights x float64, in PARAM_ORDER, row-major
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DomainError, NumericalError, ParseError, VersionMismatchError

PARAM_ORDER = ("W1", "b1", "E", "W2", "b2", "W3", "b3")
CHECKPOINT_MAGIC = b"ALDENOIS"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sIIIIIIddQ")


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear variance schedule; sampling uses sigma_t^2 = beta_t.

    ``betas[t-1]`` holds beta_t for t = 1..T.
    """

    steps: int = 50
    beta_start: float = 2e-3
    beta_end: float = 0.4

    def __post_init__(self):
        if self.steps < 1:
            raise DomainError("schedule needs at least one step")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise DomainError("need 0 < beta_start <= beta_end < 1")

    @classmethod
    def linear(cls, steps: int = 50, beta_start: float = 1e-4, beta_end: float = 0.02, rescale: bool = True):
        """The classic 1e-4..0.02 endpoints, stretched by 1000/T when ``rescale``.

        Without rescaling a short chain never reaches pure noise.
        """
        k = 1000.0 / steps if rescale else 1.0
        return cls(steps, beta_start * k, min(beta_end * k, 0.999))

    @property
    def betas(self) -> np.ndarray:
        if self.steps == 1:
            return np.array([self.beta_start])
        return np.linspace(self.beta_start, self.beta_end, self.steps)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    @property
    def sigmas(self) -> np.ndarray:
        return np.sqrt(self.betas)


def forward_noise(x0, t: int, eps, schedule: NoiseSchedule) -> np.ndarray:
    if not 1 <= t <= schedule.steps:
        raise DomainError(f"t={t} outside 1..{schedule.steps}")
    ab = schedule.alpha_bars[t - 1]
    return math.sqrt(ab) * np.asarray(x0, dtype=float) + math.sqrt(1.0 - ab) * np.asarray(eps, dtype=float)


def time_embedding(t, dim: int) -> np.ndarray:
    t = np.asarray(t, dtype=float).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-math.log(1000.0) * np.arange(half) / max(half, 1))
    args = t * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _silu(a):
    # tanh form of the logistic never overflows
    s = 0.5 * (1.0 + np.tanh(0.5 * a))
    return a * s, s


@dataclass
class Denoiser:
    dim: int
    hidden: int = 128
    time_dim: int = 16
    n_classes: int = 2
    params: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, hidden: int = 128, time_dim: int = 16, n_classes: int = 2,
             out_scale: float = 0.1) -> "Denoiser":
        d_in = dim + time_dim
        p = {
            "W1": rng.standard_normal((d_in, hidden)) / math.sqrt(d_in),
            "b1": np.zeros(hidden),
            "E": 0.1 * rng.standard_normal((n_classes, hidden)),
            "W2": rng.standard_normal((hidden, hidden)) / math.sqrt(hidden),
            "b2": np.zeros(hidden),
            "W3": out_scale * rng.standard_normal((hidden, dim)) / math.sqrt(hidden),
            "b3": np.zeros(dim),
        }
        return cls(dim, hidden, time_dim, n_classes, p)

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_ORDER])

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_params,):
            raise DomainError(f"expected {self.n_params} weights, got {vec.shape}")
        i = 0
        for k in PARAM_ORDER:
            shape = self.params[k].shape
            n = self.params[k].size
            self.params[k] = vec[i : i + n].reshape(shape).copy()
            i += n

    def copy(self) -> "Denoiser":
        return Denoiser(self.dim, self.hidden, self.time_dim, self.n_classes,
                        {k: v.copy() for k, v in self.params.items()}, self.version)

    def same_topology(self, other: "Denoiser") -> bool:
        return (self.dim, self.hidden, self.time_dim, self.n_classes) == (
            other.dim, other.hidden, other.time_dim, other.n_classes)

    def forward(self, x, t, c, keep: bool = False):
        """Noise estimate for a batch; with ``keep`` also returns the cache for :meth:`backward`."""
        p = self.params
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t), (len(x),))
        c = np.broadcast_to(np.asarray(c, dtype=int), (len(x),))
        inp = np.concatenate([x, time_embedding(t, self.time_dim)], axis=1)
        a1 = inp @ p["W1"] + p["b1"] + p["E"][c]
        h1, s1 = _silu(a1)
        a2 = h1 @ p["W2"] + p["b2"]
        h2, s2 = _silu(a2)
        out = h2 @ p["W3"] + p["b3"]
        if keep:
            return out, (inp, c, a1, s1, h1, a2, s2, h2)
        return out

    def backward(self, cache, g_out) -> dict:
        """Gradients of ``sum(g_out * out)`` with respect to every parameter."""
        inp, c, a1, s1, h1, a2, s2, h2 = cache
        p = self.params
        g = {"W3": h2.T @ g_out, "b3": g_out.sum(axis=0)}
        gh2 = g_out @ p["W3"].T
        ga2 = gh2 * (s2 * (1.0 + a2 * (1.0 - s2)))
        g["W2"] = h1.T @ ga2
        g["b2"] = ga2.sum(axis=0)
        gh1 = ga2 @ p["W2"].T
        ga1 = gh1 * (s1 * (1.0 + a1 * (1.0 - s1)))
        g["W1"] = inp.T @ ga1
        g["b1"] = ga1.sum(axis=0)
        gE = np.zeros_like(p["E"])
        np.add.at(gE, c, ga1)
        g["E"] = gE
        return g

    def flat_grad(self, grads: dict) -> np.ndarray:
        return np.concatenate([grads[k].ravel() for k in PARAM_ORDER])


class Adam:
    """Adam on a flat parameter vector. ``step`` ascends when ``maximize``."""

    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8, maximize: bool = False):
        self.lr, self.b1, self.b2, self.eps, self.maximize = lr, betas[0], betas[1], eps, maximize
        self.m = self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        if self.maximize:
            grad = -grad
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1 ** self.t)
        v_hat = self.v / (1 - self.b2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def denoising_loss_and_grad(denoiser: Denoiser, x0, c, t, eps, schedule: NoiseSchedule):
    """Mean squared noise-prediction error and its flat gradient."""
    x0 = np.atleast_2d(x0)
    t = np.asarray(t)
    ab = schedule.alpha_bars[t - 1][:, None]
    xt = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    pred, cache = denoiser.forward(xt, t, c, keep=True)
    diff = pred - eps
    loss = float(np.mean(diff * diff))
    g_out = 2.0 * diff / diff.size
    return loss, denoiser.flat_grad(denoiser.backward(cache, g_out))


@dataclass
class TrainResult:
    denoiser: Denoiser
    losses: list


def train_denoiser(data: Callable, steps: int, lr: float, rng: np.random.Generator, schedule: NoiseSchedule | None = None,
                   denoiser: Denoiser | None = None, batch_size: int = 128, hidden: int = 128,
                   n_classes: int = 2, lr_decay: bool = True) -> TrainResult:
    """Fit the noise-prediction objective with Adam.

    ``data(rng, n)`` returns ``(x0, c)`` arrays of shape ``(n, dim)`` and
    ``(n,)``. With ``lr_decay`` the rate follows a cosine to 10% of ``lr``.
    """
    if lr < 0:
        raise DomainError("learning rate must be non-negative")
    schedule = schedule or NoiseSchedule()
    if denoiser is None:
        x_probe, _ = data(np.random.default_rng(0), 1)
        denoiser = Denoiser.init(np.atleast_2d(x_probe).shape[1], rng, hidden=hidden, n_classes=n_classes)
    else:
        denoiser = denoiser.copy()
    opt = Adam(lr)
    w = denoiser.flat()
    losses = []
    for step in range(steps):
        x0, c = data(rng, batch_size)
        t = rng.integers(1, schedule.steps + 1, size=batch_size)
        eps = rng.standard_normal(np.shape(x0))
        loss, grad = denoising_loss_and_grad(denoiser, x0, c, t, eps, schedule)
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NumericalError(f"training diverged at step {step}")
        losses.append(loss)
        if lr_decay and steps > 1:
            opt.lr = lr * (0.1 + 0.9 * 0.5 * (1 + math.cos(math.pi * step / (steps - 1))))
        w = opt.step(w, grad)
        denoiser.set_flat(w)
    return TrainResult(denoiser, losses)


@dataclass
class Trajectory:
    """One reverse chain. ``states[t]`` is x_t for t = 0..T; ``means[t-1]``,
    ``sigmas[t-1]`` and ``logps[t-1]`` describe the step x_t -> x_{t-1}."""

    condition: int
    states: np.ndarray
    means: np.ndarray
    sigmas: np.ndarray
    logps: np.ndarray
    reward: float | None = None

    @property
    def x0(self) -> np.ndarray:
        return self.states[0]


def gaussian_logpdf(x, mean, sigma) -> np.ndarray:
    x, mean = np.atleast_2d(x), np.atleast_2d(mean)
    sigma = np.asarray(sigma, dtype=float).reshape(-1, 1)
    d = x.shape[1]
    z = (x - mean) / sigma
    return -0.5 * np.sum(z * z, axis=1) - 0.5 * d * np.log(2.0 * math.pi * sigma[:, 0] ** 2)


def _step_mean(denoiser, xt, t, c, schedule, keep=False):
    alpha = schedule.alphas[t - 1]
    coef = schedule.betas[t - 1] / np.sqrt(1.0 - schedule.alpha_bars[t - 1])
    res = denoiser.forward(xt, t, c, keep=keep)
    eps_hat, cache = res if keep else (res, None)
    coef = np.asarray(coef).reshape(-1, 1) if np.ndim(coef) else coef
    alpha = np.asarray(alpha).reshape(-1, 1) if np.ndim(alpha) else alpha
    mean = (xt - coef * eps_hat) / np.sqrt(alpha)
    return mean, cache, coef / np.sqrt(alpha)


def sample_batch(denoiser: Denoiser, conditions, rngs, schedule: NoiseSchedule | None = None) -> list[Trajectory]:
    """Run reverse chains side by side; trajectory i draws all its noise from ``rngs[i]``."""
    schedule = schedule or NoiseSchedule()
    conditions = np.asarray(conditions, dtype=int)
    n, T, d = len(conditions), schedule.steps, denoiser.dim
    if np.any(conditions < 0) or np.any(conditions >= denoiser.n_classes):
        raise DomainError(f"condition outside 0..{denoiser.n_classes - 1}")
    states = np.empty((n, T + 1, d))
    means = np.empty((n, T, d))
    logps = np.empty((n, T))
    sigmas = schedule.sigmas
    states[:, T] = np.stack([r.standard_normal(d) for r in rngs])
    for t in range(T, 0, -1):
        mean, _, _ = _step_mean(denoiser, states[:, t], t, conditions, schedule)
        noise = np.stack([r.standard_normal(d) for r in rngs])
        nxt = mean + sigmas[t - 1] * noise
        if not np.all(np.isfinite(nxt)):
            raise NumericalError(f"non-finite state at t={t}")
        means[:, t - 1] = mean
        states[:, t - 1] = nxt
        logps[:, t - 1] = gaussian_logpdf(nxt, mean, np.full(n, sigmas[t - 1]))
    return [Trajectory(int(conditions[i]), states[i], means[i], sigmas.copy(), logps[i]) for i in range(n)]


def sample(denoiser: Denoiser, c: int, rng: np.random.Generator, schedule: NoiseSchedule | None = None) -> Trajectory:
    return sample_batch(denoiser, [c], [rng], schedule)[0]


def batch_logprob(denoiser: Denoiser, xt, x_prev, t, c, schedule: NoiseSchedule) -> np.ndarray:
    t = np.broadcast_to(np.asarray(t, dtype=int), (len(np.atleast_2d(xt)),))
    mean, _, _ = _step_mean(denoiser, np.atleast_2d(xt), t, c, schedule)
    return gaussian_logpdf(x_prev, mean, schedule.sigmas[t - 1])


def batch_logprob_grad(denoiser: Denoiser, xt, x_prev, t, c, weights, schedule: NoiseSchedule):
    """Per-row log p(x_prev | xt, c) and the flat gradient of sum_i weights[i] * log p_i."""
    xt, x_prev = np.atleast_2d(xt), np.atleast_2d(x_prev)
    t = np.broadcast_to(np.asarray(t, dtype=int), (len(xt),))
    sigma = schedule.sigmas[t - 1]
    if np.any(sigma <= 0):
        raise DomainError("sigma_t must be positive")
    mean, cache, k = _step_mean(denoiser, xt, t, c, schedule, keep=True)
    logp = gaussian_logpdf(x_prev, mean, sigma)
    # d logp / d mean = (x_prev - mean) / sigma^2 and d mean / d eps_hat = -k
    score = (x_prev - mean) / (sigma[:, None] ** 2)
    g_out = -k * score * np.asarray(weights, dtype=float).reshape(-1, 1)
    return logp, denoiser.flat_grad(denoiser.backward(cache, g_out))


def step_logprob_grad(denoiser: Denoiser, xt, x_prev, t: int, c: int, schedule: NoiseSchedule | None = None):
    """log p_theta(x_{t-1} | x_t, c) for one step and its gradient over all weights."""
    schedule = schedule or NoiseSchedule()
    if not 1 <= t <= schedule.steps:
        raise DomainError(f"t={t} outside 1..{schedule.steps}")
    logp, grad = batch_logprob_grad(denoiser, xt, x_prev, [t], [c], [1.0], schedule)
    return float(logp[0]), grad


def save_checkpoint(denoiser: Denoiser, schedule: NoiseSchedule, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(denoiser, schedule))


def checkpoint_bytes(denoiser: Denoiser, schedule: NoiseSchedule) -> bytes:
    w = denoiser.flat()
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, denoiser.dim, denoiser.hidden, denoiser.time_dim,
                          denoiser.n_classes, schedule.steps, schedule.beta_start, schedule.beta_end, w.size)
    return header + w.astype("<f8").tobytes()


def load_checkpoint(path) -> tuple[Denoiser, NoiseSchedule]:
    return checkpoint_from_bytes(Path(path).read_bytes())


def checkpoint_from_bytes(data: bytes) -> tuple[Denoiser, NoiseSchedule]:
    if len(data) < _HEADER.size:
        raise ParseError("checkpoint truncated")
    magic, version, dim, hidden, time_dim, n_classes, steps, b0, b1, n = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise ParseError("not a denoiser checkpoint")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    body = data[_HEADER.size :]
    if len(body) != 8 * n:
        raise ParseError(f"checkpoint holds {len(body) // 8} weights, header says {n}")
    den = Denoiser.init(dim, np.random.default_rng(0), hidden=hidden, time_dim=time_dim, n_classes=n_classes)
    den.set_flat(np.frombuffer(body, dtype="<f8").astype(float))
    return den, NoiseSchedule(steps, b0, b1)
