"""Artifact classification as a reward signal for toy diffusion fine-tuning."""

__version__ = "0.1.0"

from .taxonomy import NO_ARTIFACTS, LabelSet, Taxonomy, canonical_answer, default_taxonomy, load_taxonomy, parse_answer

__all__ = [
    "NO_ARTIFACTS",
    "LabelSet",
    "Taxonomy",
    "canonical_answer",
    "default_taxonomy",
    "load_taxonomy",
    "parse_answer",
]
