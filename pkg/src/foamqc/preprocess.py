"""Physics-guided image reduction for the five foam views.

Plan views (top/bottom): grayscale -> intensity quantization -> circle
extraction -> masking outside the circle -> square crop around the circle ->
resize. Profiles: grayscale -> quantization -> foreground centering on a black
canvas. Everything here is pure and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import cv2
import numpy as np

from .data import PLAN_VIEWS, VIEW_ORDER, ExampleGroup, ViewKind

__all__ = [
    "GrayImage",
    "Circle",
    "CircleSearchParams",
    "CircleSearchError",
    "PreprocessError",
    "to_grayscale",
    "quantize",
    "quantize_level",
    "find_circle",
    "mask_outside",
    "bound_circle",
    "center_profile",
    "resize",
    "preprocess_group",
    "preprocess_groups",
]

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class PreprocessError(ValueError):
    """A preprocessing step failed for a specific view."""


class CircleSearchError(PreprocessError):
    """Circle search grid is empty or degenerate for the image."""


def _round_half_up(x: np.ndarray | float) -> np.ndarray | float:
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def _as_u8(x) -> np.ndarray:
    return np.clip(x, 0, 255).astype(np.uint8)


@dataclass
class GrayImage:
    """Single-channel 8-bit raster: 0 = dark, 255 = bright."""

    pixels: np.ndarray
    view: ViewKind | None = None
    pixel_pitch: float | None = None  # micrometers per pixel, when known

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise PreprocessError(f"gray image must be HxW, got shape {px.shape}")
        if px.dtype != np.uint8:
            if px.min() < 0 or px.max() > 255:
                raise PreprocessError("pixel values outside [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = px

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape  # type: ignore[return-value]

    def with_pixels(self, pixels: np.ndarray) -> "GrayImage":
        return GrayImage(pixels=pixels, view=self.view, pixel_pitch=self.pixel_pitch)


@dataclass(frozen=True)
class Circle:
    cx: int  # column of center
    cy: int  # row of center
    r: int

    def __post_init__(self):
        if self.r <= 0:
            raise PreprocessError(f"circle radius must be positive, got {self.r}")

    def inside(self, shape: tuple[int, int]) -> bool:
        h, w = shape
        return (
            self.cy - self.r >= 0
            and self.cx - self.r >= 0
            and self.cy + self.r <= h - 1
            and self.cx + self.r <= w - 1
        )


@dataclass(frozen=True)
class CircleSearchParams:
    """Grid-search space for the circle extractor.

    Fractions are of min(H, W). The search assumes the background is brighter
    than the foam disc; what counts as "bright" is the threshold below.
    """

    bright_threshold: int = 128
    radius_lo: float = 0.30
    radius_hi: float = 0.48
    center_window: float = 0.05
    step: int = 2

    def __post_init__(self):
        if not (0.0 < self.radius_lo < self.radius_hi <= 0.5):
            raise PreprocessError(
                f"radius range must satisfy 0 < lo < hi <= 0.5, got [{self.radius_lo}, {self.radius_hi}]"
            )
        if self.step < 1:
            raise PreprocessError(f"step must be >= 1, got {self.step}")


def to_grayscale(rgb: np.ndarray, view: ViewKind | None = None) -> GrayImage:
    """Convert an RGB raster to 8-bit gray with ITU-R 601 luma weights.

    A 2-channel-free (H, W) input passes through unchanged: foam images may
    already be stored single-channel.
    """
    arr = np.asarray(rgb)
    if arr.ndim == 2:
        return GrayImage(pixels=arr, view=view)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise PreprocessError(f"expected HxWx3 raster, got shape {arr.shape}")
    r, g, b = LUMA_WEIGHTS
    luma = r * arr[..., 0].astype(np.float64) + g * arr[..., 1] + b * arr[..., 2]
    return GrayImage(pixels=_as_u8(_round_half_up(luma)), view=view)


def quantize_level(v: int, bins: int = 10) -> int:
    """Representative gray level (bin center) for a single input value."""
    b = min(v * bins // 256, bins - 1)
    # round-half-up((b + 0.5) * 256 / bins - 0.5) == (2b + 1) * 128 // bins, exactly
    return min(255, (2 * b + 1) * 128 // bins)


def quantize(img: GrayImage, bins: int = 10) -> GrayImage:
    """Map each pixel to the center of its intensity bin.

    Collapses near-zero background variance so the model cannot fixate on it.
    Idempotent: bin representatives land back in their own bin.
    """
    if bins < 2:
        raise PreprocessError(f"bins must be >= 2, got {bins}")
    lut = np.array([quantize_level(v, bins) for v in range(256)], dtype=np.uint8)
    return img.with_pixels(lut[img.pixels])


def _candidate_grid(
    shape: tuple[int, int], params: CircleSearchParams
) -> tuple[list[int], list[int], list[int]]:
    h, w = shape
    m = min(h, w)
    r_lo = max(1, int(np.ceil(params.radius_lo * m)))
    r_hi = int(np.floor(params.radius_hi * m))
    radii = list(range(r_lo, r_hi + 1, params.step))
    cy0, cx0 = h // 2, w // 2
    win = int(round(params.center_window * m))
    offsets = sorted(
        {k * params.step for k in range(win // params.step + 1)}
        | {-k * params.step for k in range(win // params.step + 1)}
    )
    cys = [cy0 + o for o in offsets if 0 <= cy0 + o < h]
    cxs = [cx0 + o for o in offsets if 0 <= cx0 + o < w]
    return cys, cxs, radii


def find_circle(
    img: GrayImage, params: CircleSearchParams = CircleSearchParams()
) -> tuple[Circle, int]:
    """Locate the foam disc on a plan view by exhaustive grid search.

    Score of a candidate = (#dark pixels inside) - (#bright pixels inside),
    dark meaning below ``bright_threshold``. Only circles fully inside the
    image are considered. Ties prefer the larger radius, then the center
    closest to the image center, then the smaller (cy, cx).

    Returns the winning circle and its score.
    """
    if img.view is not None and img.view not in PLAN_VIEWS:
        raise PreprocessError(f"circle search applies to plan views, got {img.view}")
    h, w = img.shape
    cys, cxs, radii = _candidate_grid((h, w), params)
    if not radii or not cys or not cxs:
        raise CircleSearchError(
            f"empty search grid for image {h}x{w} with params {params}"
        )

    weight = np.where(img.pixels < params.bright_threshold, 1, -1).astype(np.int64)
    cy0, cx0 = h // 2, w // 2
    r_max = radii[-1]
    r2_of = np.array([r * r for r in radii], dtype=np.int64)

    ys = np.arange(h, dtype=np.int64)
    xs = np.arange(w, dtype=np.int64)

    best = None  # (score, r, -dist2, -cy, -cx, circle)
    for cy in cys:
        dy2 = (ys - cy) ** 2
        for cx in cxs:
            d2 = dy2[:, None] + (xs - cx) ** 2
            sel = d2 <= r_max * r_max
            counts = np.bincount(
                d2[sel].ravel(), weights=weight[sel].ravel(), minlength=r_max * r_max + 1
            )
            cumulative = np.cumsum(counts)
            dist2 = (cy - cy0) ** 2 + (cx - cx0) ** 2
            for i, r in enumerate(radii):
                if cy - r < 0 or cx - r < 0 or cy + r > h - 1 or cx + r > w - 1:
                    continue
                score = int(cumulative[r2_of[i]])
                key = (score, r, -dist2, -cy, -cx)
                if best is None or key > best[:5]:
                    best = (score, r, -dist2, -cy, -cx, Circle(cx=cx, cy=cy, r=r))
    if best is None:
        raise CircleSearchError(
            f"no admissible circle for image {h}x{w} with params {params}"
        )
    return best[5], best[0]


def mask_outside(img: GrayImage, c: Circle) -> GrayImage:
    """Zero every pixel farther than r from the circle center."""
    h, w = img.shape
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    outside = (ys - c.cy) ** 2 + (xs - c.cx) ** 2 > c.r * c.r
    out = img.pixels.copy()
    out[outside] = 0
    return img.with_pixels(out)


def bound_circle(img: GrayImage, c: Circle) -> GrayImage:
    """Crop the square [cy-r, cy+r] x [cx-r, cx+r], clipped to image bounds."""
    h, w = img.shape
    y0, y1 = max(0, c.cy - c.r), min(h - 1, c.cy + c.r)
    x0, x1 = max(0, c.cx - c.r), min(w - 1, c.cx + c.r)
    return img.with_pixels(img.pixels[y0 : y1 + 1, x0 : x1 + 1])


def center_profile(
    img: GrayImage, target: tuple[int, int], fg_threshold: int = 0
) -> GrayImage:
    """Center the foreground bounding box on a black canvas of ``target`` size.

    Foreground = pixels above ``fg_threshold`` (after quantization the darkest
    bin's representative is nonzero, so the pipeline passes that level).
    Oversized foregrounds are center-cropped; retained pixels are unmodified.
    """
    if img.view is not None and not img.view.is_profile:
        raise PreprocessError(f"profile centering applies to profiles, got {img.view}")
    fg = img.pixels > fg_threshold
    rows = np.flatnonzero(fg.any(axis=1))
    cols = np.flatnonzero(fg.any(axis=0))
    if rows.size == 0:
        raise PreprocessError("profile has no foreground (all background)")
    box = img.pixels[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]

    th, tw = target
    bh, bw = box.shape
    if bh > th:
        top = (bh - th) // 2
        box = box[top : top + th, :]
        bh = th
    if bw > tw:
        left = (bw - tw) // 2
        box = box[:, left : left + tw]
        bw = tw
    canvas = np.zeros((th, tw), dtype=np.uint8)
    y0 = (th - bh) // 2
    x0 = (tw - bw) // 2
    canvas[y0 : y0 + bh, x0 : x0 + bw] = box
    return img.with_pixels(canvas)


def resize(img: GrayImage, target: tuple[int, int]) -> GrayImage:
    """Resize with area averaging when shrinking, bilinear when growing."""
    th, tw = target
    h, w = img.shape
    if (h, w) == (th, tw):
        return img
    interp = cv2.INTER_AREA if th * tw < h * w else cv2.INTER_LINEAR
    out = cv2.resize(img.pixels, (tw, th), interpolation=interp)
    return img.with_pixels(out)


def preprocess_group(
    group: ExampleGroup,
    params: CircleSearchParams = CircleSearchParams(),
    target: tuple[int, int] = (224, 224),
    bins: int = 10,
) -> ExampleGroup:
    """Run the full reduction on a loaded group; returns a new group.

    Plan views: gray -> quantize -> circle extraction -> mask -> crop -> resize.
    Profiles: gray -> quantize -> foreground centering. Output images are all
    single-channel ``target``-sized.
    """
    if set(group.images) != set(ViewKind):
        missing = [k.value for k in ViewKind if k not in group.images]
        raise PreprocessError(f"group {group.id}: missing images for {missing}")
    background_rep = quantize_level(0, bins)
    out_images: dict[ViewKind, np.ndarray] = {}
    for kind in VIEW_ORDER:
        try:
            gray = to_grayscale(group.images[kind], view=kind)
            quant = quantize(gray, bins)
            if kind.is_plan:
                circle, _ = find_circle(quant, params)
                processed = resize(bound_circle(mask_outside(quant, circle), circle), target)
            else:
                processed = center_profile(quant, target, fg_threshold=background_rep)
        except Exception as e:
            raise PreprocessError(f"group {group.id}, view {kind.value}: {e}") from e
        out_images[kind] = processed.pixels
    return ExampleGroup(
        id=group.id,
        raw_label=group.raw_label,
        source_paths=dict(group.source_paths),
        images=out_images,
    )


def preprocess_groups(
    groups: Iterable[ExampleGroup],
    params: CircleSearchParams = CircleSearchParams(),
    target: tuple[int, int] = (224, 224),
    bins: int = 10,
    jobs: int = 1,
) -> list[ExampleGroup]:
    """Preprocess many groups, optionally in parallel; output order = input order."""
    groups = list(groups)
    if jobs <= 1:
        return [preprocess_group(g, params, target, bins) for g in groups]
    from concurrent.futures import ProcessPoolExecutor
    from functools import partial

    fn = partial(preprocess_group, params=params, target=target, bins=bins)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, groups))
