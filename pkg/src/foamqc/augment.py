"""Training-set expansion: rotations plus photometric jitter.

Plan views rotate by right angles (exact pixel permutations), profiles by
small angles; gaussian noise and brightness/contrast jitter are drawn from an
explicit, reproducible RNG. Masked background (0) pixels stay 0 throughout.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import cv2
import numpy as np

from .data import PLAN_VIEWS, VIEW_ORDER, ExampleGroup
from .preprocess import GrayImage

__all__ = [
    "AugmentSpec",
    "rotate",
    "add_gaussian_noise",
    "adjust_brightness_contrast",
    "augment_group",
    "apply_variant",
    "variant_count",
    "stable_hash",
]


@dataclass(frozen=True)
class AugmentSpec:
    profile_angles: tuple[float, ...] = (-10.0, -5.0, 0.0, 5.0, 10.0)
    plan_angles: tuple[float, ...] = (0.0, 90.0, 180.0, 270.0)
    noise_sigma: float = 5.0
    brightness_delta: float = 0.10
    contrast_lo: float = 0.90
    contrast_hi: float = 1.10
    seed: int = 0

    def __post_init__(self):
        if not self.profile_angles or not self.plan_angles:
            raise ValueError("angle lists must be non-empty")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0 < self.contrast_lo <= self.contrast_hi:
            raise ValueError("contrast range must be positive and ordered")


def stable_hash(*parts) -> int:
    """Process-independent 63-bit hash for RNG seeding."""
    h = hashlib.blake2b("\x1f".join(str(p) for p in parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big") >> 1


def _round_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


def rotate(img: GrayImage, angle: float) -> GrayImage:
    """Rotate counter-clockwise about the image center, canvas preserved.

    Right-angle rotations of square images are exact pixel permutations;
    everything else is bilinear with exposed areas filled with 0.
    """
    px = img.pixels
    a = angle % 360.0
    if a == 0.0:
        return img.with_pixels(px.copy())
    h, w = px.shape
    if a in (90.0, 180.0, 270.0) and h == w:
        return img.with_pixels(np.rot90(px, k=int(a // 90)).copy())
    m = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), a, 1.0)
    out = cv2.warpAffine(
        px, m, (w, h), flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT, borderValue=0,
    )
    return img.with_pixels(out)


def add_gaussian_noise(img: GrayImage, sigma: float, rng: np.random.Generator) -> GrayImage:
    """Additive gaussian noise on foreground pixels; background 0 stays 0."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return img.with_pixels(img.pixels.copy())
    px = img.pixels.astype(np.float64)
    noisy = _round_u8(px + rng.normal(0.0, sigma, px.shape))
    noisy[img.pixels == 0] = 0
    return img.with_pixels(noisy)


def adjust_brightness_contrast(img: GrayImage, delta: float, factor: float) -> GrayImage:
    """Scale contrast about the foreground mean, then shift brightness.

    v' = factor * (v - mu) + mu + 255 * delta for nonzero v, with mu the mean
    of nonzero pixels; zeros are preserved as mask.
    """
    if factor <= 0:
        raise ValueError("contrast factor must be > 0")
    px = img.pixels
    nz = px != 0
    if not nz.any() or (delta == 0.0 and factor == 1.0):
        return img.with_pixels(px.copy())
    mu = px[nz].mean()
    out = px.copy()
    adjusted = factor * (px[nz].astype(np.float64) - mu) + mu + 255.0 * delta
    out[nz] = _round_u8(adjusted)
    return img.with_pixels(out)


def variant_count(spec: AugmentSpec) -> int:
    return math.lcm(len(spec.plan_angles), len(spec.profile_angles))


def apply_variant(
    group: ExampleGroup, spec: AugmentSpec, index: int, rng: np.random.Generator
) -> dict:
    """Produce the images of augmentation variant ``index`` for a group.

    Variant i rotates plan views by plan_angles[i mod |plan|] and all profiles
    by profile_angles[i mod |profiles|], then applies per-view photometric
    jitter drawn from ``rng``.
    """
    plan_angle = spec.plan_angles[index % len(spec.plan_angles)]
    profile_angle = spec.profile_angles[index % len(spec.profile_angles)]
    out: dict = {}
    for kind in VIEW_ORDER:
        img = GrayImage(group.images[kind], view=kind)
        img = rotate(img, plan_angle if kind in PLAN_VIEWS else profile_angle)
        img = add_gaussian_noise(img, spec.noise_sigma, rng)
        delta = rng.uniform(-spec.brightness_delta, spec.brightness_delta)
        factor = rng.uniform(spec.contrast_lo, spec.contrast_hi)
        img = adjust_brightness_contrast(img, delta, factor)
        out[kind] = img.pixels
    return out


def augment_group(group: ExampleGroup, spec: AugmentSpec) -> list[ExampleGroup]:
    """Expand one preprocessed group into its full set of variants.

    The variant count is lcm(|plan angles|, |profile angles|) so every angle in
    both lists is exercised while the five views stay mutually consistent.
    """
    n = variant_count(spec)
    out: list[ExampleGroup] = []
    for i in range(n):
        rng = np.random.default_rng([spec.seed, stable_hash(group.id), i])
        images = apply_variant(group, spec, i, rng)
        out.append(
            ExampleGroup(
                id=f"{group.id}__aug{i}",
                raw_label=group.raw_label,
                source_paths=dict(group.source_paths),
                images=images,
            )
        )
    return out
