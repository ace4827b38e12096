"""Artifact-classification reward and the classifiers that feed it.

The reward of a classifier answer is::

    F(no_artifacts_phrase, answer) - alpha * sum_k F(s_k, answer) + beta

with F the BertScore-style F-score from :mod:`artifactlab.textsim`.

Remote classifier protocol: ``POST <endpoint>`` with a JSON body
``{"question": str, "image": str, "image_format": "png" | "pgm"}`` where
``image`` is base64. The reply must be JSON ``{"answer": str}``.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import DomainError, ProtocolError, TransportError, ValidationError
from .instructions import build_classification_prompt
from .scenes import SceneConfig, classify_scene, encode_pgm, render
from .taxonomy import NO_ARTIFACTS, NO_ARTIFACTS_TEXT, LabelSet, Taxonomy, canonical_answer, default_taxonomy
from .textsim import EmbeddingModel, bertscore

log = logging.getLogger(__name__)

ENDPOINT_ENV = "ARTIFACTLAB_CLASSIFIER_URL"
TIMEOUT_ENV = "ARTIFACTLAB_CLASSIFIER_TIMEOUT"


class Classifier(Protocol):
    def answer(self, question: str, observation) -> str: ...


@dataclass(frozen=True)
class RewardConfig:
    phrases: tuple[str, ...] = ()
    alpha: float = 0.1
    beta: float = 1.0
    no_artifacts_phrase: str = NO_ARTIFACTS_TEXT
    score: str = "f"
    validate: bool = field(default=True, compare=False)

    def __post_init__(self):
        if not self.phrases:
            object.__setattr__(self, "phrases", tuple(default_taxonomy().names))
        object.__setattr__(self, "phrases", tuple(self.phrases))
        if self.alpha < 0:
            raise ValidationError("alpha must be non-negative")
        if self.score not in ("precision", "recall", "f"):
            raise ValidationError(f"unknown score component {self.score!r}")


def _component(triple, which: str) -> float:
    return {"precision": triple.precision, "recall": triple.recall, "f": triple.f}[which]


def artifact_reward(answer: str, cfg: RewardConfig | None = None, model: EmbeddingModel | None = None) -> float:
    cfg = cfg or RewardConfig()
    model = model or EmbeddingModel()
    if not answer or not answer.strip():
        raise DomainError("answer must be non-empty")
    clean = _component(bertscore(cfg.no_artifacts_phrase, answer, model), cfg.score)
    penalty = sum(_component(bertscore(s, answer, model), cfg.score) for s in cfg.phrases)
    return clean - cfg.alpha * penalty + cfg.beta


def canonical_answers(taxonomy: Taxonomy) -> list[str]:
    """"No artifacts." plus every single-category answer."""
    return [canonical_answer(NO_ARTIFACTS, taxonomy)] + [
        canonical_answer(LabelSet.of(c.id), taxonomy) for c in taxonomy.categories
    ]


def validate_reward_config(cfg: RewardConfig, model: EmbeddingModel, taxonomy: Taxonomy) -> dict[str, float]:
    """Check positivity and the "No artifacts" argmax on the canonical answers.

    Covers the single-label answers and the all-categories answer.
    """
    answers = canonical_answers(taxonomy)
    answers.append(canonical_answer(LabelSet(frozenset(range(len(taxonomy)))), taxonomy))
    rewards = {a: artifact_reward(a, cfg, model) for a in answers}
    low = min(rewards, key=rewards.get)
    if rewards[low] <= 0:
        raise ValidationError(f"reward not positive for {low!r}: {rewards[low]:.4f}")
    best = max(rewards, key=rewards.get)
    if best != answers[0]:
        raise ValidationError(f"reward argmax is {best!r}, not {answers[0]!r}")
    return rewards


class RewardFunction:
    """Caches rewards per distinct answer string; rewards are pure in the answer."""

    def __init__(self, cfg: RewardConfig | None = None, model: EmbeddingModel | None = None,
                 taxonomy: Taxonomy | None = None):
        self.cfg = cfg or RewardConfig()
        self.model = model or EmbeddingModel()
        self.taxonomy = taxonomy or default_taxonomy()
        self._cache: dict[str, float] = {}
        self._lock = threading.Lock()
        if self.cfg.validate:
            self._cache.update(validate_reward_config(self.cfg, self.model, self.taxonomy))

    def __call__(self, answer: str) -> float:
        with self._lock:
            hit = self._cache.get(answer)
        if hit is None:
            hit = artifact_reward(answer, self.cfg, self.model)
            with self._lock:
                self._cache[answer] = hit
        return hit

    def minimum_canonical(self) -> float:
        return min(self(a) for a in canonical_answers(self.taxonomy))


def oracle_answer(params, cfg: SceneConfig | None = None, taxonomy: Taxonomy | None = None) -> str:
    taxonomy = taxonomy or default_taxonomy()
    return canonical_answer(classify_scene(params, cfg, taxonomy), taxonomy)


class OracleClassifier:
    """Deterministic stand-in for the vision-language classifier; ignores the question."""

    def __init__(self, cfg: SceneConfig | None = None, taxonomy: Taxonomy | None = None):
        self.cfg = cfg or SceneConfig()
        self.taxonomy = taxonomy or default_taxonomy()

    def answer(self, question: str, observation) -> str:
        return oracle_answer(observation, self.cfg, self.taxonomy)


def remote_answer(question: str, image: bytes, endpoint: str, timeout: float = 30.0, attempts: int = 3,
                  backoff: float = 0.5, image_format: str = "pgm") -> str:
    """POST one question and image; retry transport failures with exponential backoff."""
    body = json.dumps(
        {"question": question, "image": base64.b64encode(image).decode("ascii"), "image_format": image_format}
    ).encode("utf-8")
    last = None
    for attempt in range(attempts):
        if attempt:
            time.sleep(backoff * 2 ** (attempt - 1))
        req = urllib.request.Request(endpoint, data=body, headers={"Content-Type": "application/json"}, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                payload = resp.read()
            break
        except urllib.error.HTTPError as exc:
            last = f"HTTP {exc.code}"
            if 400 <= exc.code < 500 and exc.code != 429:
                raise TransportError(f"{endpoint}: {last}") from None
        except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
            last = str(getattr(exc, "reason", exc))
        log.warning("classifier request %d/%d failed: %s", attempt + 1, attempts, last)
    else:
        raise TransportError(f"{endpoint}: gave up after {attempts} attempts ({last})")
    try:
        doc = json.loads(payload)
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise ProtocolError("response is not valid JSON; expected field 'answer'") from None
    if not isinstance(doc, dict) or "answer" not in doc:
        raise ProtocolError("response lacks field 'answer'")
    if not isinstance(doc["answer"], str):
        raise ProtocolError("field 'answer' must be a string")
    return doc["answer"]


class RemoteClassifier:
    """Renders scene parameters to PGM and asks a remote endpoint.

    Observations may also be raw encoded image bytes. Requests are
    serialized through one lock.
    """

    def __init__(self, endpoint: str | None = None, timeout: float | None = None, resolution: int = 64,
                 attempts: int = 3, backoff: float = 0.5):
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        if not self.endpoint:
            raise DomainError(f"no classifier endpoint given (set {ENDPOINT_ENV})")
        self.timeout = timeout if timeout is not None else float(os.environ.get(TIMEOUT_ENV, "30"))
        self.resolution, self.attempts, self.backoff = resolution, attempts, backoff
        self._lock = threading.Lock()

    def answer(self, question: str, observation) -> str:
        image = observation if isinstance(observation, (bytes, bytearray)) else encode_pgm(render(observation, self.resolution))
        with self._lock:
            return remote_answer(question, bytes(image), self.endpoint, self.timeout, self.attempts, self.backoff)


class ClassifierReward:
    """scene parameters -> classifier answer -> reward."""

    def __init__(self, classifier: Classifier, reward_fn: RewardFunction | None = None, question: str | None = None):
        self.classifier = classifier
        self.reward_fn = reward_fn or RewardFunction()
        self.question = question if question is not None else build_classification_prompt(self.reward_fn.taxonomy)

    def __call__(self, params) -> tuple[float, str]:
        answer = self.classifier.answer(self.question, params)
        return self.reward_fn(answer), answer

    def batch(self, observations: Sequence) -> tuple[np.ndarray, list[str]]:
        out = [self(o) for o in observations]
        return np.array([r for r, _ in out], dtype=float), [a for _, a in out]
