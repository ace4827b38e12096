"""Instruction prompts for the artifact classifier and 336x336 letterboxing."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DomainError
from .taxonomy import NO_ARTIFACTS_TEXT, Taxonomy

PROMPT_VERSION = "1"
CANVAS = 336


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float
    normalized: bool = False

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DomainError(f"degenerate box {self.as_list()}")
        if self.normalized and not all(0.0 <= v <= 1.0 for v in self.as_list()):
            raise DomainError(f"normalized box outside [0, 1]: {self.as_list()}")

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


def _options(taxonomy: Taxonomy) -> list[str]:
    return [f"{i + 1}. {c.name}: {c.explanation}" for i, c in enumerate(taxonomy.categories)]


def build_classification_prompt(taxonomy: Taxonomy) -> str:
    # Example answer uses the first two categories so it stays valid for any taxonomy.
    example = ", ".join(c.name for c in taxonomy.categories[:2]) + "."
    lines = [
        "You are an expert in evaluating synthetic images. Inspect the image and decide "
        "which kinds of artifacts it contains. An image may contain several kinds of artifacts.",
        "",
        "Options:",
        *_options(taxonomy),
        "",
        "Answer examples:",
        f"- An image without artifacts: {NO_ARTIFACTS_TEXT}.",
        f"- An image with artifacts: {example}",
        "",
        "Answer commands:",
        "- Answer only with option names from the list above, separated by commas.",
        f"- If the image has no artifacts, answer exactly \"{NO_ARTIFACTS_TEXT}.\"",
        f"- Never combine \"{NO_ARTIFACTS_TEXT}\" with any artifact option.",
        "- Do not add explanations.",
    ]
    return "\n".join(lines) + "\n"


DETECTION_SECTIONS = ("Artifact judgement", "Artifact classification", "Artifact location", "Other artifacts")


def build_detection_prompt(taxonomy: Taxonomy) -> str:
    judgement, classification, location, other = DETECTION_SECTIONS
    lines = [
        f"[{judgement}]",
        "Does this synthetic image contain any artifacts? Answer only \"Yes\" or \"No\".",
        "",
        f"[{classification}]",
        "Which kinds of artifacts does the image contain? Choose from the options below and "
        "separate multiple answers with commas.",
        *_options(taxonomy),
        "",
        f"[{location}]",
        "For every artifact selected above, give its location as normalized coordinates "
        "[x1,y1,x2,y2] of the 336x336 padded image, one line per artifact in the form "
        "\"<option name>: [x1,y1,x2,y2]\".",
        "",
        f"[{other}]",
        "Describe in one sentence any artifact that is not covered by the options, or answer \"None\".",
    ]
    return "\n".join(lines) + "\n"


def _letterbox(width: int, height: int) -> tuple[float, float, float]:
    if width <= 0 or height <= 0:
        raise DomainError(f"image size must be positive, got {width}x{height}")
    scale = CANVAS / max(width, height)
    # the long side fills the canvas exactly; no rounding residue as padding
    pad_x = 0.0 if width >= height else (CANVAS - width * scale) / 2.0
    pad_y = 0.0 if height >= width else (CANVAS - height * scale) / 2.0
    return scale, pad_x, pad_y


def normalize_box(box: BoundingBox, width: int, height: int) -> BoundingBox:
    """Map a pixel box into normalized coordinates of the letterboxed canvas.

    The image is scaled uniformly so its long side spans 336 pixels and
    centred on the short axis.
    """
    if box.normalized:
        raise DomainError("box is already normalized")
    if box.x1 < 0 or box.y1 < 0 or box.x2 > width or box.y2 > height:
        raise DomainError(f"box {box.as_list()} exceeds image bounds {width}x{height}")
    scale, pad_x, pad_y = _letterbox(width, height)

    def to_unit(v, pad):
        # inputs are within bounds, so clamping only removes rounding residue
        return min(max((v * scale + pad) / CANVAS, 0.0), 1.0)

    return BoundingBox(
        to_unit(box.x1, pad_x), to_unit(box.y1, pad_y), to_unit(box.x2, pad_x), to_unit(box.y2, pad_y), normalized=True
    )


def denormalize_box(box: BoundingBox, width: int, height: int) -> BoundingBox:
    """Inverse of :func:`normalize_box`; clips parts that fall in the padding."""
    if not box.normalized:
        raise DomainError("box is not normalized")
    scale, pad_x, pad_y = _letterbox(width, height)

    def back(v, pad, limit):
        return min(max((v * CANVAS - pad) / scale, 0.0), float(limit))

    x1, x2 = back(box.x1, pad_x, width), back(box.x2, pad_x, width)
    y1, y2 = back(box.y1, pad_y, height), back(box.y2, pad_y, height)
    if not (x1 < x2 and y1 < y2):
        raise DomainError(f"box {box.as_list()} lies entirely inside the padding")
    return BoundingBox(x1, y1, x2, y2)
