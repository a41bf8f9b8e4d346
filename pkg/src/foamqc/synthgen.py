"""Deterministic synthetic foam-group generator with ground truth.

Substitutes for the unavailable microscope data at desk scale: plan views are
dark discs on a bright background with a faint ring, profiles are bright slab
bands on dark background. Defective groups carry bright stains/scratches on a
plan disc or dark holes in a profile slab; the generator records exact circle
parameters and per-view defect masks for oracle tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from .data import PLAN_VIEWS, PROFILE_VIEWS, ExampleGroup, RawLabel, ViewKind
from .preprocess import Circle

__all__ = [
    "SynthParams",
    "SynthTruth",
    "generate",
    "class_counts",
    "rle_encode",
    "rle_decode",
]


@dataclass(frozen=True)
class SynthParams:
    n_groups: int = 100
    image_size: int = 224
    raw_upscale: float = 1.0
    class_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)  # normal, nd, defective
    stain_count: tuple[int, int] = (1, 3)
    stain_radius: tuple[int, int] = (8, 18)
    scratch_count: tuple[int, int] = (1, 2)
    scratch_length: tuple[int, int] = (30, 80)
    dark_hole_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_groups < 1:
            raise ValueError("n_groups must be >= 1")
        if abs(sum(self.class_mix) - 1.0) > 1e-9 or any(f < 0 for f in self.class_mix):
            raise ValueError(f"class_mix must be nonnegative and sum to 1, got {self.class_mix}")


@dataclass
class SynthTruth:
    circles: dict[ViewKind, Circle]
    defect_masks: dict[ViewKind, np.ndarray]
    raw_label: RawLabel


def class_counts(n: int, mix: tuple[float, float, float]) -> tuple[int, int, int]:
    """Largest-remainder allocation of n groups over the three classes."""
    exact = [n * f for f in mix]
    base = [int(np.floor(e)) for e in exact]
    order = sorted(range(3), key=lambda i: (exact[i] - base[i], -i), reverse=True)
    for i in order[: n - sum(base)]:
        base[i] += 1
    return tuple(base)  # type: ignore[return-value]


def rle_encode(mask: np.ndarray) -> list[int]:
    """Row-major run lengths, alternating runs starting with a zero-run."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    changes = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs: list[int], shape: tuple[int, int]) -> np.ndarray:
    out = np.zeros(shape[0] * shape[1], dtype=bool)
    pos = 0
    val = False
    for run in runs:
        if val:
            out[pos : pos + run] = True
        pos += run
        val = not val
    return out.reshape(shape)


def _plan_view(rng: np.random.Generator, size: int) -> tuple[np.ndarray, Circle]:
    bg = int(rng.integers(200, 231))
    disc = int(rng.integers(10, 41))
    r = int(rng.integers(round(0.30 * size), round(0.45 * size) + 1))
    jitter = max(1, int(0.04 * size))
    cy = size // 2 + int(rng.integers(-jitter, jitter + 1))
    cx = size // 2 + int(rng.integers(-jitter, jitter + 1))
    img = np.full((size, size), bg, dtype=np.uint8)
    ys = np.arange(size)[:, None]
    xs = np.arange(size)[None, :]
    d2 = (ys - cy) ** 2 + (xs - cx) ** 2
    img[d2 <= r * r] = disc
    ring = (d2 >= (r + 3) ** 2) & (d2 <= (r + 5) ** 2)
    img[ring] = int(rng.integers(240, 251))
    noise = rng.normal(0, 2.0, img.shape)
    img = np.clip(img.astype(np.float64) + noise, 0, 255).astype(np.uint8)
    return img, Circle(cx=cx, cy=cy, r=r)


def _profile_view(rng: np.random.Generator, size: int) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    bg = int(rng.integers(0, 9))
    slab = int(rng.integers(180, 231))
    bh = int(rng.integers(round(0.35 * size), round(0.55 * size) + 1))
    bw = int(rng.integers(round(0.70 * size), round(0.90 * size) + 1))
    jitter = max(1, int(0.05 * size))
    y0 = (size - bh) // 2 + int(rng.integers(-jitter, jitter + 1))
    x0 = (size - bw) // 2 + int(rng.integers(-jitter, jitter + 1))
    img = np.full((size, size), bg, dtype=np.uint8)
    img[y0 : y0 + bh, x0 : x0 + bw] = slab
    noise = rng.normal(0, 2.0, img.shape)
    img = np.clip(img.astype(np.float64) + noise, 0, 255).astype(np.uint8)
    return img, (y0, x0, bh, bw)


def _stain(rng, img, mask, circle: Circle, axes_hi: int, axes_lo: int) -> None:
    # bright ellipse fully inside the disc
    a = int(rng.integers(axes_lo, axes_hi + 1))
    b = int(rng.integers(axes_lo, axes_hi + 1))
    margin = max(a, b) + 2
    rad = max(1, circle.r - margin)
    ang = rng.uniform(0, 2 * np.pi)
    rho = rng.uniform(0, rad)
    cy = int(circle.cy + rho * np.sin(ang))
    cx = int(circle.cx + rho * np.cos(ang))
    value = int(rng.integers(140, 221))
    layer = np.zeros(img.shape, dtype=np.uint8)
    cv2.ellipse(layer, (cx, cy), (a, b), float(rng.uniform(0, 180)), 0, 360, 255, -1)
    img[layer > 0] = value
    mask[layer > 0] = True


def _scratch(rng, img, mask, circle: Circle, length: int) -> None:
    # bright thin polyline staying inside the disc
    ang = rng.uniform(0, 2 * np.pi)
    rho = rng.uniform(0, max(1, circle.r - length // 2 - 4))
    y = circle.cy + rho * np.sin(ang)
    x = circle.cx + rho * np.cos(ang)
    pts = [(x, y)]
    heading = rng.uniform(0, 2 * np.pi)
    steps = max(2, length // 10)
    for _ in range(steps):
        heading += rng.uniform(-0.5, 0.5)
        x += np.cos(heading) * length / steps
        y += np.sin(heading) * length / steps
        pts.append((x, y))
    poly = np.array([[int(px), int(py)] for px, py in pts], dtype=np.int32)
    layer = np.zeros(img.shape, dtype=np.uint8)
    cv2.polylines(layer, [poly], False, 255, thickness=int(rng.integers(1, 4)))
    inside = np.zeros(img.shape, dtype=np.uint8)
    cv2.circle(inside, (circle.cx, circle.cy), circle.r - 1, 255, -1)
    layer &= inside
    value = int(rng.integers(150, 221))
    img[layer > 0] = value
    mask[layer > 0] = True


def _dark_hole(rng, img, mask, band: tuple[int, int, int, int]) -> None:
    # dark ellipse inside the bright slab band of a profile
    y0, x0, bh, bw = band
    a = int(rng.integers(5, max(6, bh // 6)))
    b = int(rng.integers(5, max(6, bw // 10)))
    cy = int(rng.integers(y0 + a + 2, y0 + bh - a - 2))
    cx = int(rng.integers(x0 + b + 2, x0 + bw - b - 2))
    slab_level = int(img[y0 + bh // 2, x0 + bw // 2])
    value = max(0, slab_level - int(rng.integers(60, 121)))
    layer = np.zeros(img.shape, dtype=np.uint8)
    cv2.ellipse(layer, (cx, cy), (b, a), float(rng.uniform(0, 180)), 0, 360, 255, -1)
    img[layer > 0] = value
    mask[layer > 0] = True


def _make_group(rng: np.random.Generator, gid: str, label: RawLabel, params: SynthParams):
    size = max(32, int(round(params.image_size * params.raw_upscale)))
    images: dict[ViewKind, np.ndarray] = {}
    circles: dict[ViewKind, Circle] = {}
    masks: dict[ViewKind, np.ndarray] = {}
    bands: dict[ViewKind, tuple[int, int, int, int]] = {}
    for kind in PLAN_VIEWS:
        img, circle = _plan_view(rng, size)
        images[kind] = img
        circles[kind] = circle
        masks[kind] = np.zeros((size, size), dtype=bool)
    for kind in PROFILE_VIEWS:
        img, band = _profile_view(rng, size)
        images[kind] = img
        bands[kind] = band
        masks[kind] = np.zeros((size, size), dtype=bool)

    if label is RawLabel.DEFECTIVE:
        n_defects = int(rng.integers(params.stain_count[0], params.stain_count[1] + 1))
        for _ in range(n_defects):
            kind = PLAN_VIEWS[int(rng.integers(0, 2))]
            if rng.uniform() < 0.6:
                _stain(rng, images[kind], masks[kind], circles[kind],
                       params.stain_radius[1], params.stain_radius[0])
            else:
                length = int(rng.integers(params.scratch_length[0], params.scratch_length[1] + 1))
                _scratch(rng, images[kind], masks[kind], circles[kind], length)
        if rng.uniform() < params.dark_hole_prob:
            pk = PROFILE_VIEWS[int(rng.integers(0, 3))]
            _dark_hole(rng, images[pk], masks[pk], bands[pk])
    elif label is RawLabel.NORMAL_DEFECTIVE:
        # one sub-threshold stain: area < 0.5% of the disc
        kind = PLAN_VIEWS[int(rng.integers(0, 2))]
        circle = circles[kind]
        axis = max(2, int(0.06 * circle.r))
        _stain(rng, images[kind], masks[kind], circle, axis, max(2, axis - 1))

    group = ExampleGroup(id=gid, raw_label=label, images=images)
    truth = SynthTruth(circles=circles, defect_masks=masks, raw_label=label)
    return group, truth


def generate(params: SynthParams) -> list[tuple[ExampleGroup, SynthTruth]]:
    """Generate n_groups labeled synthetic groups, deterministic in seed."""
    n_normal, n_nd, n_defective = class_counts(params.n_groups, params.class_mix)
    labels = (
        [RawLabel.NORMAL] * n_normal
        + [RawLabel.NORMAL_DEFECTIVE] * n_nd
        + [RawLabel.DEFECTIVE] * n_defective
    )
    order = np.random.default_rng([params.seed, 0xC0FFEE]).permutation(len(labels))
    out = []
    for i, j in enumerate(order):
        rng = np.random.default_rng([params.seed, i])
        gid = f"g{i:04d}"
        out.append(_make_group(rng, gid, labels[j], params))
    return out
