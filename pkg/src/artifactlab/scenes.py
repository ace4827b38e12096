"""Procedural toy scenes: a body disc with up to six limbs.

A scene is a 15-vector ``[cx, cy, r, phi_0, l_0, ..., phi_5, l_5]`` in scene
units (the frame is the unit square, y pointing down). A limb slot counts
as present when its length reaches the presence threshold. The oracle
labels a scene with four of the taxonomy's categories:

* omission: fewer than ``nominal_limbs`` limbs present
* duplication: more than ``nominal_limbs`` limbs present
* distortion: a present limb outside the nominal length band, or any
  non-finite entry
* out of frame: the body disc crosses the frame border

Diffusion runs on a standardized copy of the vector (see :func:`to_model`)
so every coordinate has roughly unit scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .taxonomy import NO_ARTIFACTS, LabelSet, Taxonomy, default_taxonomy

N_SLOTS = 6
DIM = 3 + 2 * N_SLOTS
SPECS = ("clean", "omission", "duplication", "distortion", "out_of_frame")


@dataclass(frozen=True)
class SceneConfig:
    presence_threshold: float = 0.08
    length_lo: float = 0.14
    length_hi: float = 0.36
    nominal_limbs: int = 4
    # clean samples keep this distance from every predicate boundary
    margin: float = 0.04
    # body radius range per condition class
    radius_ranges: tuple = ((0.10, 0.14), (0.17, 0.21))
    # category names the predicates report, resolved against the taxonomy
    category_names: dict = field(
        default_factory=lambda: {
            "omission": "Omitted components",
            "duplication": "Duplicated components",
            "distortion": "Distorted components",
            "out_of_frame": "Out of frame",
        }
    )

    def __post_init__(self):
        if not 0 < self.presence_threshold < self.length_lo < self.length_hi:
            raise ValueError("need 0 < presence_threshold < length_lo < length_hi")
        if self.margin <= 0 or self.length_lo + self.margin >= self.length_hi - self.margin:
            raise ValueError("margin too large for the nominal band")
        if self.presence_threshold - self.margin < 0:
            raise ValueError("margin larger than the presence threshold")
        if not 0 < self.nominal_limbs < N_SLOTS:
            raise ValueError(f"nominal_limbs must lie in 1..{N_SLOTS - 1}")

    @property
    def n_conditions(self) -> int:
        return len(self.radius_ranges)

    def category_ids(self, taxonomy: Taxonomy | None = None) -> dict[str, int]:
        taxonomy = taxonomy or default_taxonomy()
        return {k: taxonomy.id_of(v) for k, v in self.category_names.items()}


def nominal_angles() -> np.ndarray:
    return np.arange(N_SLOTS) * (2 * math.pi / N_SLOTS)


# Affine standardization used by the diffusion model.
_CENTER = np.concatenate([[0.5, 0.5, 0.155], np.ravel(np.column_stack([nominal_angles(), np.full(N_SLOTS, 0.13)]))])
_SCALE = np.concatenate([[0.15, 0.15, 0.05], np.ravel(np.column_stack([np.full(N_SLOTS, 0.3), np.full(N_SLOTS, 0.1)]))])


def to_model(params: np.ndarray) -> np.ndarray:
    return (np.asarray(params, dtype=float) - _CENTER) / _SCALE


def from_model(z: np.ndarray) -> np.ndarray:
    return np.asarray(z, dtype=float) * _SCALE + _CENTER


def limb_lengths(params: np.ndarray) -> np.ndarray:
    return np.asarray(params)[..., 4::2]


def limb_angles(params: np.ndarray) -> np.ndarray:
    return np.asarray(params)[..., 3::2]


def _base_scene(rng: np.random.Generator, cfg: SceneConfig, condition: int) -> np.ndarray:
    m = cfg.margin
    r_lo, r_hi = cfg.radius_ranges[condition]
    r = rng.uniform(r_lo, r_hi)
    cx, cy = rng.uniform(r + m, 1 - r - m, size=2)
    angles = nominal_angles() + rng.uniform(-0.25, 0.25, size=N_SLOTS)
    # Clean scenes use the first `nominal_limbs` slots; the rest are stubs.
    lengths = np.empty(N_SLOTS)
    lengths[: cfg.nominal_limbs] = rng.uniform(cfg.length_lo + m, cfg.length_hi - m, size=cfg.nominal_limbs)
    lengths[cfg.nominal_limbs :] = rng.uniform(0.0, cfg.presence_threshold - m, size=N_SLOTS - cfg.nominal_limbs)
    out = np.empty(DIM)
    out[:3] = cx, cy, r
    out[3::2] = angles
    out[4::2] = lengths
    return out


def sample_scene(rng: np.random.Generator, artifact_spec: str = "clean", cfg: SceneConfig | None = None,
                 condition: int | None = None) -> np.ndarray:
    """Draw scene parameters whose oracle label is exactly the requested one."""
    cfg = cfg or SceneConfig()
    if artifact_spec not in SPECS:
        raise ValueError(f"unknown artifact spec {artifact_spec!r}; choose from {SPECS}")
    if condition is None:
        condition = int(rng.integers(cfg.n_conditions))
    x = _base_scene(rng, cfg, condition)
    m, k = cfg.margin, cfg.nominal_limbs
    if artifact_spec == "omission":
        drop = rng.choice(k, size=int(rng.integers(1, k + 1)), replace=False)
        x[4 + 2 * drop] = rng.uniform(0.0, cfg.presence_threshold - m, size=len(drop))
    elif artifact_spec == "duplication":
        extra = rng.choice(np.arange(k, N_SLOTS), size=int(rng.integers(1, N_SLOTS - k + 1)), replace=False)
        x[4 + 2 * extra] = rng.uniform(cfg.length_lo + m, cfg.length_hi - m, size=len(extra))
    elif artifact_spec == "distortion":
        slot = int(rng.integers(k))
        if rng.random() < 0.5:
            length = rng.uniform(cfg.length_hi + m, cfg.length_hi + 3 * m)
        else:
            length = rng.uniform(cfg.presence_threshold + m / 4, cfg.length_lo - m / 4)
        x[4 + 2 * slot] = length
    elif artifact_spec == "out_of_frame":
        r = x[2]
        axis = int(rng.integers(2))
        overshoot = rng.uniform(m, 0.5 * r)
        x[axis] = (r - overshoot) if rng.random() < 0.5 else (1 - r + overshoot)
    return x


def classify_scene(params, cfg: SceneConfig | None = None, taxonomy: Taxonomy | None = None) -> LabelSet:
    cfg = cfg or SceneConfig()
    ids = cfg.category_ids(taxonomy)
    x = np.asarray(params, dtype=float)
    found = set()
    if not np.all(np.isfinite(x)):
        found.add(ids["distortion"])
        lengths = np.nan_to_num(limb_lengths(x), nan=0.0)
    else:
        lengths = limb_lengths(x)
    present = lengths >= cfg.presence_threshold
    count = int(present.sum())
    if count < cfg.nominal_limbs:
        found.add(ids["omission"])
    if count > cfg.nominal_limbs:
        found.add(ids["duplication"])
    pl = lengths[present]
    if np.any((pl < cfg.length_lo) | (pl > cfg.length_hi)):
        found.add(ids["distortion"])
    cx, cy, r = x[:3]
    if np.all(np.isfinite(x[:3])):
        if cx - r < 0 or cy - r < 0 or cx + r > 1 or cy + r > 1:
            found.add(ids["out_of_frame"])
    return LabelSet(frozenset(found)) if found else NO_ARTIFACTS


def render(params, resolution: int = 64) -> np.ndarray:
    """Rasterize to a ``uint8`` image: body 255, limbs 160, background 0."""
    if resolution < 16:
        raise ValueError("resolution must be at least 16")
    x = np.asarray(params, dtype=float)
    img = np.zeros((resolution, resolution), dtype=np.uint8)
    if not np.all(np.isfinite(x)):
        return img
    cx, cy, r = x[:3] * resolution
    ys, xs = np.mgrid[0:resolution, 0:resolution] + 0.5
    img[(xs - cx) ** 2 + (ys - cy) ** 2 <= r * r] = 255
    for phi, length in zip(limb_angles(x), limb_lengths(x)):
        if length <= 0:
            continue
        c, s = math.cos(phi), math.sin(phi)
        x0, y0 = cx + r * c, cy + r * s
        x1, y1 = x0 + length * resolution * c, y0 + length * resolution * s
        n = int(math.ceil(max(abs(x1 - x0), abs(y1 - y0)))) + 1
        t = np.linspace(0.0, 1.0, n + 1)
        px = np.floor(x0 + t * (x1 - x0)).astype(int)
        py = np.floor(y0 + t * (y1 - y0)).astype(int)
        keep = (px >= 0) & (px < resolution) & (py >= 0) & (py < resolution)
        px, py = px[keep], py[keep]
        limb = img[py, px] == 0
        img[py[limb], px[limb]] = 160
    return img


def encode_pgm(img: np.ndarray) -> bytes:
    """Binary PGM (P5, maxval 255)."""
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def write_pgm(img: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(img))


def read_pgm(data: bytes) -> np.ndarray:
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5" or parts[3] != b"255":
        raise ValueError("not a P5 PGM with maxval 255")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def artifact_boxes(params, cfg: SceneConfig | None = None, taxonomy: Taxonomy | None = None):
    """Normalized boxes locating each oracle artifact, as (category_id, [x1,y1,x2,y2], caption).

    Coordinates are clipped to the unit square, which equals the normalized
    336x336 canvas for square renders.
    """
    cfg = cfg or SceneConfig()
    ids = cfg.category_ids(taxonomy)
    x = np.asarray(params, dtype=float)
    labels = classify_scene(x, cfg, taxonomy)
    if labels.is_clean or not np.all(np.isfinite(x)):
        return []
    cx, cy, r = x[:3]

    def clip_box(x1, y1, x2, y2):
        b = [min(max(v, 0.0), 1.0) for v in (x1, y1, x2, y2)]
        if b[0] >= b[2] or b[1] >= b[3]:
            return None
        return b

    def limb_box(i):
        phi, length = limb_angles(x)[i], max(limb_lengths(x)[i], 0.0)
        c, s = math.cos(phi), math.sin(phi)
        xa, ya = cx + r * c, cy + r * s
        xb, yb = xa + length * c, ya + length * s
        pad = 0.01
        return clip_box(min(xa, xb) - pad, min(ya, yb) - pad, max(xa, xb) + pad, max(ya, yb) + pad)

    body = clip_box(cx - r, cy - r, cx + r, cy + r)
    lengths = limb_lengths(x)
    present = lengths >= cfg.presence_threshold
    out = []
    if ids["out_of_frame"] in labels:
        out.append((ids["out_of_frame"], body, "The body is cut off by the frame."))
    if ids["omission"] in labels:
        out.append((ids["omission"], body, f"Only {int(present.sum())} limbs are attached."))
    if ids["duplication"] in labels:
        extra = [i for i in range(cfg.nominal_limbs, N_SLOTS) if present[i]] or [int(np.flatnonzero(present)[-1])]
        out.append((ids["duplication"], limb_box(extra[0]), f"{int(present.sum())} limbs instead of {cfg.nominal_limbs}."))
    if ids["distortion"] in labels:
        bad = [i for i in range(N_SLOTS) if present[i] and not cfg.length_lo <= lengths[i] <= cfg.length_hi]
        out.append((ids["distortion"], limb_box(bad[0]), "A limb has an implausible length."))
    return out
