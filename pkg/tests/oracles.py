"""Independent reference implementations used to check the package.

These deliberately avoid the production code paths: brute-force loops,
exact rational arithmetic, and per-candidate mask sums.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np


def luma_reference(r: int, g: int, b: int) -> int:
    """Round-half-up of the ITU-R 601 weighted sum, in exact rationals."""
    value = (
        Fraction(299, 1000) * r + Fraction(587, 1000) * g + Fraction(114, 1000) * b
    )
    rounded = (value + Fraction(1, 2)).__floor__()
    return int(min(255, max(0, rounded)))


def quantize_reference(v: int, bins: int) -> int:
    """Bin-center representative computed with exact rationals."""
    b = min((v * bins) // 256, bins - 1)
    center = (Fraction(2 * b + 1, 1) * 128) / bins
    rounded = center.__floor__()  # round-half-up((2b+1)*128/bins - 1/2 + 1/2)
    return int(min(255, rounded))


def circle_candidates(shape, bright_threshold, radius_lo, radius_hi, center_window, step):
    """Candidate enumeration mirroring the published search-space definition."""
    h, w = shape
    m = min(h, w)
    r_lo = max(1, int(np.ceil(radius_lo * m)))
    r_hi = int(np.floor(radius_hi * m))
    radii = list(range(r_lo, r_hi + 1, step))
    cy0, cx0 = h // 2, w // 2
    win = int(round(center_window * m))
    ks = list(range(0, win // step + 1))
    offsets = sorted({k * step for k in ks} | {-k * step for k in ks})
    cys = [cy0 + o for o in offsets if 0 <= cy0 + o < h]
    cxs = [cx0 + o for o in offsets if 0 <= cx0 + o < w]
    return cys, cxs, radii, (cy0, cx0)


def brute_force_circle(
    pixels: np.ndarray,
    bright_threshold: int = 128,
    radius_lo: float = 0.30,
    radius_hi: float = 0.48,
    center_window: float = 0.05,
    step: int = 1,
):
    """Score every candidate circle by explicit mask construction.

    Returns ((cy, cx, r), score) of the winner under the same tie order as the
    implementation: max score, then max radius, then closest to image center,
    then smallest (cy, cx).
    """
    h, w = pixels.shape
    cys, cxs, radii, (cy0, cx0) = circle_candidates(
        (h, w), bright_threshold, radius_lo, radius_hi, center_window, step
    )
    ys, xs = np.mgrid[0:h, 0:w]
    dark = pixels < bright_threshold
    best_key = None
    best = None
    for cy in cys:
        for cx in cxs:
            d2 = (ys - cy) ** 2 + (xs - cx) ** 2
            for r in radii:
                if cy - r < 0 or cx - r < 0 or cy + r > h - 1 or cx + r > w - 1:
                    continue
                inside = d2 <= r * r
                n_inside = int(inside.sum())
                n_dark = int((inside & dark).sum())
                score = n_dark - (n_inside - n_dark)
                dist2 = (cy - cy0) ** 2 + (cx - cx0) ** 2
                key = (score, r, -dist2, -cy, -cx)
                if best_key is None or key > best_key:
                    best_key = key
                    best = ((cy, cx, r), score)
    return best


def auc_bruteforce(scores, labels) -> float:
    """O(n^2) pairwise AUC: every (positive, negative) pair, ties count half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("both classes required")
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))
