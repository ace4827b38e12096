"""End-to-end recipes: scene mixtures, pretraining, artifact-rate evaluation, RLAIF."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import scenes
from .ddpo import DDPOConfig, TrainingHistory, train_loop
from .diffusion import Denoiser, NoiseSchedule, TrainResult, sample_batch, train_denoiser
from .errors import ValidationError
from .reward import ClassifierReward, OracleClassifier, RewardFunction

log = logging.getLogger(__name__)

DEFAULT_MIX = {"clean": 0.6, "omission": 0.1, "duplication": 0.1, "distortion": 0.1, "out_of_frame": 0.1}


def parse_mix(text: str) -> dict[str, float]:
    """``"clean=0.6,omission=0.1,..."`` -> dict. Weights must sum to 1."""
    mix = {}
    for part in text.split(","):
        if not part.strip():
            continue
        name, sep, value = part.partition("=")
        name = name.strip()
        if not sep or name not in scenes.SPECS:
            raise ValidationError(f"bad mix entry {part!r}; expected <spec>=<weight> with spec in {scenes.SPECS}")
        try:
            mix[name] = float(value)
        except ValueError:
            raise ValidationError(f"bad weight in {part!r}") from None
    check_mix(mix)
    return mix


def check_mix(mix: dict[str, float]) -> None:
    if not mix or any(w < 0 for w in mix.values()):
        raise ValidationError("mix weights must be non-negative and non-empty")
    total = sum(mix.values())
    if abs(total - 1.0) > 1e-9:
        raise ValidationError(f"mix weights sum to {total}, expected 1")
    unknown = set(mix) - set(scenes.SPECS)
    if unknown:
        raise ValidationError(f"unknown specs {sorted(unknown)}")


def sample_mixture(rng: np.random.Generator, n: int, mix: dict[str, float], cfg: scenes.SceneConfig | None = None):
    """n scenes in scene units with their spec names and conditions."""
    cfg = cfg or scenes.SceneConfig()
    check_mix(mix)
    names = list(mix)
    probs = np.array([mix[k] for k in names])
    picks = rng.choice(len(names), size=n, p=probs)
    conds = rng.integers(cfg.n_conditions, size=n)
    xs = np.stack([scenes.sample_scene(rng, names[s], cfg, int(c)) for s, c in zip(picks, conds)]) if n else np.zeros((0, scenes.DIM))
    return xs, [names[s] for s in picks], conds


class ScenePool:
    """Pre-drawn standardized scenes; ``__call__(rng, n)`` resamples a batch for training."""

    def __init__(self, rng: np.random.Generator, size: int, mix: dict[str, float], cfg: scenes.SceneConfig | None = None):
        xs, self.specs, self.conditions = sample_mixture(rng, size, mix, cfg)
        self.x = scenes.to_model(xs)

    def __call__(self, rng: np.random.Generator, n: int):
        idx = rng.integers(len(self.x), size=n)
        return self.x[idx], self.conditions[idx]


@dataclass
class PretrainConfig:
    steps: int = 3000
    lr: float = 2e-3
    batch_size: int = 256
    hidden: int = 128
    pool_size: int = 20000


def pretrain(mix: dict[str, float], rng: np.random.Generator, pcfg: PretrainConfig | None = None,
             schedule: NoiseSchedule | None = None, cfg: scenes.SceneConfig | None = None) -> TrainResult:
    pcfg = pcfg or PretrainConfig()
    cfg = cfg or scenes.SceneConfig()
    pool = ScenePool(rng, pcfg.pool_size, mix, cfg)
    return train_denoiser(pool, pcfg.steps, pcfg.lr, rng, schedule or NoiseSchedule(), batch_size=pcfg.batch_size,
                          hidden=pcfg.hidden, n_classes=cfg.n_conditions)


def sample_scenes(denoiser: Denoiser, n: int, seed: int, schedule: NoiseSchedule | None = None,
                  chunk: int = 256) -> np.ndarray:
    """n final samples decoded to scene units; conditions alternate over classes."""
    root = np.random.SeedSequence(seed)
    streams = [np.random.default_rng(s) for s in root.spawn(n)]
    conds = np.arange(n) % denoiser.n_classes
    out = []
    for i in range(0, n, chunk):
        trajs = sample_batch(denoiser, conds[i : i + chunk], streams[i : i + chunk], schedule or NoiseSchedule())
        out.extend(scenes.from_model(tr.x0) for tr in trajs)
    return np.array(out).reshape(n, scenes.DIM)


def artifact_rate(denoiser: Denoiser, n: int = 512, seed: int = 12345, schedule: NoiseSchedule | None = None,
                  cfg: scenes.SceneConfig | None = None) -> float:
    xs = sample_scenes(denoiser, n, seed, schedule)
    return float(np.mean([not scenes.classify_scene(x, cfg).is_clean for x in xs]))


def oracle_reward(cfg: scenes.SceneConfig | None = None, reward_fn: RewardFunction | None = None) -> ClassifierReward:
    return ClassifierReward(OracleClassifier(cfg), reward_fn)


def run_rlaif(denoiser: Denoiser, rng: np.random.Generator, dcfg: DDPOConfig | None = None,
              schedule: NoiseSchedule | None = None, scorer: ClassifierReward | None = None,
              cfg: scenes.SceneConfig | None = None, checkpoint_dir=None, callback=None) -> tuple[Denoiser, TrainingHistory]:
    """DDPO against a classifier reward; the classifier sees decoded scene parameters."""
    cfg = cfg or scenes.SceneConfig()
    scorer = scorer or oracle_reward(cfg)

    def reward_fn(z):
        return scorer(scenes.from_model(z))[0]

    def is_artifact(z):
        return not scenes.classify_scene(scenes.from_model(z), cfg).is_clean

    return train_loop(denoiser, reward_fn, dcfg or DDPOConfig(), rng, schedule or NoiseSchedule(),
                      is_artifact=is_artifact, checkpoint_dir=checkpoint_dir, callback=callback)
