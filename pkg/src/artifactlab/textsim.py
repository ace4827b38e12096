"""BertScore-style greedy token matching over deterministic embeddings.

Tokens get unit vectors from seeded hashes of their character 3-grams
(``hashed-ngram`` mode) or from an external table (``table-file`` mode).

Embedding table format: UTF-8 text, one token per line followed by its
vector components, whitespace separated::

    artifacts 0.12 -0.53 0.07 ...

Blank lines and lines starting with ``#`` are skipped. Every row must have
``dimension`` components. Tokens missing from the table fall back to the
hashed embedding so scores stay defined.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import DomainError, ParseError

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return [t.lower() for t in _TOKEN.findall(text)]


@lru_cache(maxsize=65536)
def _ngram_vector(ngram: str, seed: int, dimension: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{seed}\x00{ngram}".encode(), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    v = rng.standard_normal(dimension)
    v.flags.writeable = False
    return v


@lru_cache(maxsize=65536)
def _hashed_token_vector(token: str, seed: int, dimension: int) -> np.ndarray:
    padded = f"#{token}#"
    acc = np.zeros(dimension)
    for i in range(len(padded) - 2):
        acc += _ngram_vector(padded[i : i + 3], seed, dimension)
    acc /= np.linalg.norm(acc)
    acc.flags.writeable = False
    return acc


@dataclass(frozen=True)
class EmbeddingModel:
    dimension: int = 64
    mode: str = "hashed-ngram"
    seed: int = 0
    table: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.mode not in ("hashed-ngram", "table-file"):
            raise DomainError(f"unknown embedding mode {self.mode!r}")
        if self.dimension < 1:
            raise DomainError("dimension must be positive")
        if self.mode == "table-file" and self.table is None:
            raise DomainError("table-file mode needs a table")

    @classmethod
    def from_table_file(cls, path, dimension: int | None = None, seed: int = 0) -> "EmbeddingModel":
        table = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                vec = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise ParseError("non-numeric vector component", lineno) from None
            if dimension is None:
                dimension = len(vec)
            if len(vec) != dimension or dimension == 0:
                raise ParseError(f"expected {dimension} components, got {len(vec)}", lineno)
            norm = np.linalg.norm(vec)
            if not np.isfinite(norm) or norm == 0:
                raise ParseError(f"vector for {parts[0]!r} has zero or non-finite norm", lineno)
            vec = vec / norm
            vec.flags.writeable = False
            table[parts[0].lower()] = vec
        if not table:
            raise ParseError("embedding table is empty")
        return cls(dimension=dimension, mode="table-file", seed=seed, table=table)

    def token_vector(self, token: str) -> np.ndarray:
        if self.table is not None and token in self.table:
            return self.table[token]
        return _hashed_token_vector(token, self.seed, self.dimension)


def embed(text: str, model: EmbeddingModel | None = None) -> np.ndarray:
    """Unit vectors for each token, shape ``(n_tokens, dimension)``."""
    model = model or EmbeddingModel()
    tokens = tokenize(text)
    if not tokens:
        return np.zeros((0, model.dimension))
    return np.stack([model.token_vector(t) for t in tokens])


@dataclass(frozen=True)
class ScoreTriple:
    precision: float
    recall: float
    f: float


def _similarity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Elementwise product then a contiguous last-axis sum; transposing the
    # arguments yields bit-identical entries, unlike a BLAS matmul.
    return (a[:, None, :] * b[None, :, :]).sum(axis=-1)


def bertscore(candidate: str, reference: str, model: EmbeddingModel | None = None) -> ScoreTriple:
    model = model or EmbeddingModel()
    cand, ref = embed(candidate, model), embed(reference, model)
    if len(cand) == 0 or len(ref) == 0:
        raise DomainError("bertscore needs at least one token on each side")
    sim = _similarity(cand, ref)
    p = float(sim.max(axis=1).mean())
    r = float(sim.max(axis=0).mean())
    return ScoreTriple(p, r, harmonic_f(p, r))


def harmonic_f(p: float, r: float) -> float:
    # With opposite signs 2PR/(P+R) is unbounded, so only positive pairs score.
    if p > 0 and r > 0:
        return 2 * p * r / (p + r)
    return 0.0
