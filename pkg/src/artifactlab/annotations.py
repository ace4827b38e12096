"""Annotated-image dataset model: JSON I/O, splitting and label counts.

Dataset JSON (``schema_version`` 1)::

    {
      "schema_version": 1,
      "taxonomy_version": "default-13-v1",
      "metadata": {...},              # free-form, e.g. generator seed
      "items": [
        {
          "image_ref": "scenes/000001.pgm",
          "prompt": "...",
          "generator": "toy-scene",
          "labels": "no_artifacts" | [2, 3],
          "annotations": [
            {"category_id": 2, "box": [x1, y1, x2, y2] | null, "caption": "..." | null}
          ]
        }
      ]
    }

Boxes are stored normalized to the 336x336 letterboxed canvas. Floats are
written rounded to ``FLOAT_DIGITS`` decimals with sorted keys, so saving a
loaded file reproduces its bytes.
"""

from __future__ import annotations

import csv
import io
import json
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ArtifactLabError, ParseError, ValidationError, VersionMismatchError
from .instructions import BoundingBox
from .taxonomy import NO_ARTIFACTS, LabelSet, Taxonomy, default_taxonomy

SCHEMA_VERSION = 1
FLOAT_DIGITS = 6
NO_ARTIFACTS_KEY = "no_artifacts"


@dataclass(frozen=True)
class ArtifactAnnotation:
    category_id: int
    box: BoundingBox | None = None
    caption: str | None = None

    def __post_init__(self):
        if self.box is None and not self.caption:
            raise ValidationError(f"annotation for category {self.category_id} needs a box or a caption")
        if self.box is not None and not self.box.normalized:
            raise ValidationError("annotation boxes must be normalized")


@dataclass(frozen=True)
class AnnotatedImage:
    image_ref: str
    prompt: str = ""
    generator: str = ""
    labels: LabelSet = NO_ARTIFACTS
    annotations: tuple[ArtifactAnnotation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "annotations", tuple(self.annotations))
        if self.labels.is_clean and self.annotations:
            raise ValidationError(f"{self.image_ref}: labelled 'No artifacts' but has annotations")
        for ann in self.annotations:
            if ann.category_id not in self.labels:
                raise ValidationError(f"{self.image_ref}: annotation category {ann.category_id} missing from labels")


@dataclass(frozen=True)
class Dataset:
    items: tuple[AnnotatedImage, ...] = ()
    taxonomy_version: str = ""
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        seen = set()
        for item in self.items:
            if item.image_ref in seen:
                raise ValidationError(f"duplicate image_ref {item.image_ref!r}")
            seen.add(item.image_ref)

    def __len__(self):
        return len(self.items)

    def validate(self, taxonomy: Taxonomy) -> "Dataset":
        for item in self.items:
            try:
                item.labels.validate(taxonomy)
            except ArtifactLabError as exc:
                raise ValidationError(f"{item.image_ref}: {exc}") from None
        return self


def _round(v: float) -> float:
    r = round(float(v), FLOAT_DIGITS)
    return 0.0 if r == 0 else r


def _item_to_json(item: AnnotatedImage) -> dict:
    return {
        "image_ref": item.image_ref,
        "prompt": item.prompt,
        "generator": item.generator,
        "labels": NO_ARTIFACTS_KEY if item.labels.is_clean else item.labels.sorted_ids(),
        "annotations": [
            {
                "category_id": a.category_id,
                "box": None if a.box is None else [_round(v) for v in a.box.as_list()],
                "caption": a.caption,
            }
            for a in item.annotations
        ],
    }


def dataset_to_json(ds: Dataset) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "taxonomy_version": ds.taxonomy_version,
        "metadata": ds.metadata,
        "items": [_item_to_json(i) for i in ds.items],
    }
    return json.dumps(doc, sort_keys=True, indent=1, ensure_ascii=False) + "\n"


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_text(dataset_to_json(ds), encoding="utf-8")


def _item_from_json(raw, index: int) -> AnnotatedImage:
    where = f"item {index}"
    if not isinstance(raw, dict):
        raise ParseError(f"{where}: expected an object")
    ref = raw.get("image_ref")
    if not isinstance(ref, str) or not ref:
        raise ParseError(f"{where}: 'image_ref' must be a non-empty string")
    where = f"item {index} ({ref})"
    labels_raw = raw.get("labels")
    if labels_raw == NO_ARTIFACTS_KEY:
        labels = NO_ARTIFACTS
    elif isinstance(labels_raw, list) and labels_raw and all(isinstance(v, int) for v in labels_raw):
        labels = LabelSet(frozenset(labels_raw))
    else:
        raise ParseError(f"{where}: 'labels' must be {NO_ARTIFACTS_KEY!r} or a non-empty list of ids")
    anns = []
    for j, a in enumerate(raw.get("annotations", [])):
        if not isinstance(a, dict) or not isinstance(a.get("category_id"), int):
            raise ParseError(f"{where}: annotation {j} needs an integer 'category_id'")
        box = a.get("box")
        if box is not None:
            if not (isinstance(box, list) and len(box) == 4 and all(isinstance(v, (int, float)) for v in box)):
                raise ParseError(f"{where}: annotation {j} 'box' must be four numbers")
            try:
                box = BoundingBox(*map(float, box), normalized=True)
            except ArtifactLabError as exc:
                raise ValidationError(f"{where}: annotation {j}: {exc}") from None
        caption = a.get("caption")
        if caption is not None and not isinstance(caption, str):
            raise ParseError(f"{where}: annotation {j} 'caption' must be a string")
        anns.append((a["category_id"], box, caption))
    try:
        return AnnotatedImage(
            image_ref=ref,
            prompt=str(raw.get("prompt", "")),
            generator=str(raw.get("generator", "")),
            labels=labels,
            annotations=tuple(ArtifactAnnotation(*a) for a in anns),
        )
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from None


def dataset_from_json(text: str, taxonomy: Taxonomy | None = None) -> Dataset:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(doc, dict) or not isinstance(doc.get("items"), list):
        raise ParseError("dataset must be an object with an 'items' list")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise VersionMismatchError(f"dataset schema_version {version!r}, expected {SCHEMA_VERSION}")
    items = [_item_from_json(raw, i) for i, raw in enumerate(doc["items"])]
    ds = Dataset(tuple(items), str(doc.get("taxonomy_version", "")), dict(doc.get("metadata") or {}))
    return ds.validate(taxonomy or default_taxonomy())


def load_dataset(path, taxonomy: Taxonomy | None = None) -> Dataset:
    return dataset_from_json(Path(path).read_text(encoding="utf-8"), taxonomy)


def split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded random split into (train, test) of sizes round(n*f) and the rest."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    order = list(range(len(ds.items)))
    random.Random(seed).shuffle(order)
    n_train = round(len(order) * train_fraction)
    meta = {"split_seed": seed, "train_fraction": train_fraction}
    train = [ds.items[i] for i in order[:n_train]]
    test = [ds.items[i] for i in order[n_train:]]
    return (
        replace(ds, items=tuple(train), metadata={**ds.metadata, **meta, "part": "train"}),
        replace(ds, items=tuple(test), metadata={**ds.metadata, **meta, "part": "test"}),
    )


def summarize(ds: Dataset, taxonomy: Taxonomy | None = None) -> dict:
    """Per-category image counts plus the number of clean images.

    Keys are category ids and the string ``"no_artifacts"``.
    """
    taxonomy = taxonomy or default_taxonomy()
    counts = Counter()
    for item in ds.items:
        if item.labels.is_clean:
            counts[NO_ARTIFACTS_KEY] += 1
        else:
            counts.update(item.labels.ids)
    out = {c.id: counts.get(c.id, 0) for c in taxonomy.categories}
    out[NO_ARTIFACTS_KEY] = counts.get(NO_ARTIFACTS_KEY, 0)
    return out


def summary_csv(summary: dict, taxonomy: Taxonomy | None = None) -> str:
    taxonomy = taxonomy or default_taxonomy()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["category", "name", "count"])
    for c in taxonomy.categories:
        writer.writerow([c.id, c.name, summary.get(c.id, 0)])
    writer.writerow([NO_ARTIFACTS_KEY, "No artifacts", summary.get(NO_ARTIFACTS_KEY, 0)])
    return buf.getvalue()
