"""Artifact category system and answer parsing.

A taxonomy document is plain text made of blank-line separated records.
An optional header record carries ``version = ...``; every other record
starts with a ``[category]`` line followed by ``key = value`` lines::

    version = default-13

    [category]
    name = Blur
    group = others
    explanation = The image or part of it is out of focus.
    aliases = Blurry; Blurred region

``name``, ``group`` and ``explanation`` are required, ``aliases`` is an
optional semicolon separated list. Lines starting with ``#`` are comments.
Category ids are assigned by position, starting at 0.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

from .errors import AnswerConflictError, DomainError, EmptyAnswerError, ParseError, ValidationError

COARSE_GROUPS = ("object-aware", "object-agnostic", "lighting", "others")

NO_ARTIFACTS_TEXT = "No artifacts"


@dataclass(frozen=True)
class ArtifactCategory:
    id: int
    name: str
    coarse_group: str
    explanation: str
    aliases: tuple[str, ...] = ()

    def __post_init__(self):
        if self.coarse_group not in COARSE_GROUPS:
            raise ValidationError(f"unknown coarse group {self.coarse_group!r} for {self.name!r}")
        if not self.name.strip():
            raise ValidationError(f"category {self.id} has an empty name")
        if "," in self.name or "\n" in self.name:
            raise ValidationError(f"category name {self.name!r} may not contain commas or newlines")
        if not self.explanation.strip():
            raise ValidationError(f"category {self.name!r} has an empty explanation")


@dataclass(frozen=True)
class Taxonomy:
    categories: tuple[ArtifactCategory, ...]
    version: str = "unversioned"

    def __post_init__(self):
        if not self.categories:
            raise ValidationError("taxonomy must contain at least one category")
        seen = {}
        for position, cat in enumerate(self.categories):
            if cat.id != position:
                raise ValidationError(f"category {cat.name!r} has id {cat.id}, expected {position}")
            for key in (cat.name, *cat.aliases):
                folded = key.casefold()
                if folded in seen:
                    raise ValidationError(f"duplicate category name {key!r}")
                if folded == NO_ARTIFACTS_TEXT.casefold():
                    raise ValidationError(f"{NO_ARTIFACTS_TEXT!r} is reserved")
                seen[folded] = cat.id

    def __len__(self):
        return len(self.categories)

    def __getitem__(self, category_id: int) -> ArtifactCategory:
        if not 0 <= category_id < len(self.categories):
            raise DomainError(f"category id {category_id} outside 0..{len(self.categories) - 1}")
        return self.categories[category_id]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.categories]

    @cached_property
    def _lookup(self) -> dict[str, int]:
        out = {}
        for cat in self.categories:
            for key in (cat.name, *cat.aliases):
                out[key.casefold()] = cat.id
        return out

    def id_of(self, name: str) -> int:
        """Exact, case-insensitive lookup of a name or alias."""
        try:
            return self._lookup[name.strip().casefold()]
        except KeyError:
            raise DomainError(f"no category named {name!r}") from None

    def match(self, token: str) -> int | None:
        """Exact match first, then a prefix shared by exactly one category."""
        folded = token.casefold()
        if folded in self._lookup:
            return self._lookup[folded]
        hits = {cid for key, cid in self._lookup.items() if key.startswith(folded)}
        if len(hits) == 1:
            return hits.pop()
        return None


@dataclass(frozen=True)
class LabelSet:
    """Either "No artifacts" (no ids) or a non-empty set of category ids.

    The empty state *is* the no-artifacts state, which makes a mixed answer
    unrepresentable.
    """

    ids: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "ids", frozenset(int(i) for i in self.ids))

    @classmethod
    def of(cls, *ids: int) -> "LabelSet":
        return cls(frozenset(ids))

    @property
    def is_clean(self) -> bool:
        return not self.ids

    def sorted_ids(self) -> list[int]:
        return sorted(self.ids)

    def validate(self, taxonomy: Taxonomy) -> "LabelSet":
        for i in self.ids:
            taxonomy[i]
        return self

    def __iter__(self):
        return iter(sorted(self.ids))

    def __contains__(self, category_id) -> bool:
        return category_id in self.ids

    def __repr__(self):
        if self.is_clean:
            return "NO_ARTIFACTS"
        return f"LabelSet({self.sorted_ids()})"


NO_ARTIFACTS = LabelSet()


def _parse_records(text: str):
    """Yield (first_line_number, header_or_None, {key: (value, line)})."""
    record, header, start = {}, None, None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            if not line and (record or header):
                yield start, header, record
                record, header, start = {}, None, None
            continue
        if start is None:
            start = lineno
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"unterminated section header {line!r}", lineno)
            if header is not None or record:
                raise ParseError("section header must start a record (separate records with a blank line)", lineno)
            header = line[1:-1].strip().lower()
            if header != "category":
                raise ParseError(f"unknown section [{header}]", lineno)
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(f"expected 'key = value', got {line!r}", lineno)
        key = key.strip().lower()
        if not key:
            raise ParseError("empty key", lineno)
        if key in record:
            raise ParseError(f"repeated key {key!r}", lineno)
        record[key] = (value.strip(), lineno)
    if record or header:
        yield start, header, record


_REQUIRED = ("name", "group", "explanation")
_OPTIONAL = ("aliases",)


def load_taxonomy(source: str | Path | None = None) -> Taxonomy:
    """Parse a taxonomy document.

    ``source`` may be document text, a path, or ``None`` for the built-in
    default. Strings containing a newline or a ``=`` are treated as text.
    """
    if source is None:
        return default_taxonomy()
    if isinstance(source, Path) or ("\n" not in source and "=" not in source):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source

    version = "unversioned"
    categories = []
    for start, header, record in _parse_records(text):
        if header is None:
            extra = sorted(set(record) - {"version"})
            if extra:
                raise ParseError(f"unexpected key {extra[0]!r} outside a [category] record", record[extra[0]][1])
            if categories:
                raise ParseError("version header must come before the categories", start)
            version = record["version"][0]
            continue
        missing = [k for k in _REQUIRED if k not in record]
        if missing:
            raise ParseError(f"category record missing {', '.join(missing)}", start)
        extra = sorted(set(record) - set(_REQUIRED) - set(_OPTIONAL))
        if extra:
            raise ParseError(f"unknown key {extra[0]!r}", record[extra[0]][1])
        aliases = ()
        if "aliases" in record:
            aliases = tuple(a.strip() for a in record["aliases"][0].split(";") if a.strip())
        try:
            categories.append(
                ArtifactCategory(
                    id=len(categories),
                    name=record["name"][0],
                    coarse_group=record["group"][0].lower(),
                    explanation=record["explanation"][0],
                    aliases=aliases,
                )
            )
        except ValidationError as exc:
            raise ValidationError(f"line {start}: {exc}") from None
    return Taxonomy(tuple(categories), version)


def dump_taxonomy(taxonomy: Taxonomy) -> str:
    """Serialise to the document format accepted by :func:`load_taxonomy`."""
    parts = [f"version = {taxonomy.version}"]
    for cat in taxonomy.categories:
        lines = ["[category]", f"name = {cat.name}", f"group = {cat.coarse_group}", f"explanation = {cat.explanation}"]
        if cat.aliases:
            lines.append(f"aliases = {'; '.join(cat.aliases)}")
        parts.append("\n".join(lines))
    return "\n\n".join(parts) + "\n"


# Reconstructed from the prose description of the 13 categories; the
# upstream figure is not machine readable. Substitute a file to change it.
DEFAULT_TAXONOMY_TEXT = """\
version = default-13-v1

[category]
name = Illegible letters
group = object-aware
explanation = Text or letters in the image are malformed and hard to recognize.

[category]
name = Awkward facial expression
group = object-aware
explanation = A human or animal face shows an unnatural, distorted or implausible expression.

[category]
name = Distorted components
group = object-agnostic
explanation = Parts of an object are distorted or deformed, such as twisted limbs or warped hands.
aliases = Distorted and deformated components; Distorted and deformed components; Distortion

[category]
name = Omitted components
group = object-agnostic
explanation = Parts of an object are missing, such as fewer fingers or limbs than expected.
aliases = Omission

[category]
name = Duplicated components
group = object-agnostic
explanation = Parts of an object are repeated, such as extra fingers, limbs or ears.
aliases = Duplication

[category]
name = Color mis-binding
group = object-agnostic
explanation = An object has a color that contradicts common sense and was not requested.

[category]
name = Texture mis-binding
group = object-agnostic
explanation = An object has a surface texture that does not belong to it.

[category]
name = Spatial position mis-binding
group = object-agnostic
explanation = Objects are placed in implausible positions relative to each other.

[category]
name = Shape mis-binding
group = object-agnostic
explanation = An object has a shape that does not match what it should look like.

[category]
name = Luminosity anomaly
group = lighting
explanation = Brightness or light sources are inconsistent with the rest of the scene.

[category]
name = Shadow anomaly
group = lighting
explanation = Shadows are missing, misplaced or inconsistent with the lighting.

[category]
name = Blur
group = others
explanation = The image or part of it is unintentionally blurry.

[category]
name = Out of frame
group = others
explanation = The main subject is cut off by the image border.
"""


_DEFAULT: Taxonomy | None = None


def default_taxonomy() -> Taxonomy:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_taxonomy(DEFAULT_TAXONOMY_TEXT)
    return _DEFAULT


_SPLIT = re.compile(r"[,\n;]+")
_STRIP = " \t\r.;:!?\"'`*-•"


def _tokens(text: str) -> list[str]:
    out = []
    for piece in _SPLIT.split(text):
        token = " ".join(piece.strip(_STRIP).split())
        if token:
            out.append(token)
    return out


def parse_answer(text: str, taxonomy: Taxonomy) -> tuple[LabelSet, list[str]]:
    """Turn free classifier output into a label set plus unmatched tokens.

    Raises :class:`EmptyAnswerError` when nothing recognisable is found and
    :class:`AnswerConflictError` when "No artifacts" appears next to
    artifact categories.
    """
    tokens = _tokens(text or "")
    if not tokens:
        raise EmptyAnswerError("empty answer")
    ids, unmatched, clean = set(), [], False
    for token in tokens:
        if token.casefold() == NO_ARTIFACTS_TEXT.casefold():
            clean = True
            continue
        cid = taxonomy.match(token)
        if cid is None:
            unmatched.append(token)
        else:
            ids.add(cid)
    if clean and ids:
        raise AnswerConflictError(
            "answer mixes 'No artifacts' with artifact categories", labels=LabelSet(frozenset(ids)), unmatched=unmatched
        )
    if clean:
        return NO_ARTIFACTS, unmatched
    if not ids:
        raise EmptyAnswerError(f"no category recognised in {text!r}", unmatched)
    return LabelSet(frozenset(ids)), unmatched


def canonical_answer(labels: LabelSet, taxonomy: Taxonomy) -> str:
    if labels.is_clean:
        return NO_ARTIFACTS_TEXT + "."
    return ", ".join(taxonomy[i].name for i in labels.sorted_ids()) + "."


def labelset_from_names(names: Iterable[str], taxonomy: Taxonomy) -> LabelSet:
    ids = frozenset(taxonomy.id_of(n) for n in names)
    return LabelSet(ids)
