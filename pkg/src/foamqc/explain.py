"""Perturbation-based local explanation of a single-view prediction.

A preprocessed view is carved into grid segments inside its foreground mask;
random segment subsets are blanked, the model's normal-probability is recorded
per subset, and a weighted ridge surrogate yields one signed weight per
segment. Positive weights push toward normal (rendered green), negative toward
defective (red).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .model import FoamClassifier, ModelConfig, NormStats

__all__ = [
    "SegmentMap",
    "Explanation",
    "ExplainError",
    "segment",
    "explain",
    "render_overlay",
]


class ExplainError(ValueError):
    pass


@dataclass
class SegmentMap:
    labels: np.ndarray  # H x W int, values 0..n_segments-1
    n_segments: int
    background_id: int = 0


@dataclass
class Explanation:
    segment_weights: np.ndarray  # signed, one per segment
    intercept: float
    fidelity_r2: float
    full_mask_gap: float  # |surrogate(all-ones) - model probability|
    segments: SegmentMap
    overlay: np.ndarray  # H x W x 3


def segment(pixels: np.ndarray, cell: int = 28) -> SegmentMap:
    """Grid segmentation intersected with the nonzero foreground mask.

    Tile content outside the mask joins the single background segment (id 0);
    each tile that touches the mask becomes one foreground segment.
    """
    h, w = pixels.shape
    if cell > h or cell > w:
        raise ExplainError(f"cell size {cell} larger than image {h}x{w}")
    fg = pixels > 0
    labels = np.zeros((h, w), dtype=np.int32)
    next_id = 1
    for y0 in range(0, h, cell):
        for x0 in range(0, w, cell):
            tile = fg[y0 : y0 + cell, x0 : x0 + cell]
            if tile.any():
                block = labels[y0 : y0 + cell, x0 : x0 + cell]
                block[tile] = next_id
                next_id += 1
    return SegmentMap(labels=labels, n_segments=next_id, background_id=0)


def _weighted_ridge(x: np.ndarray, y: np.ndarray, w: np.ndarray, ridge: float):
    """Ridge fit with unpenalized intercept; returns (coefficients, intercept)."""
    n, s = x.shape
    a = np.concatenate([x, np.ones((n, 1))], axis=1)
    aw = a * w[:, None]
    m = a.T @ aw
    m[np.arange(s), np.arange(s)] += ridge
    beta = np.linalg.solve(m, aw.T @ y)
    return beta[:s], float(beta[s])


def explain(
    model: FoamClassifier,
    pixels: np.ndarray,
    cfg: ModelConfig,
    norm: NormStats = NormStats(),
    n_samples: int = 1000,
    seed: int = 0,
    cell: int = 28,
    kernel_width: float = 0.25,
    ridge: float = 1e-3,
    batch_size: int = 32,
    top_k: int = 6,
) -> Explanation:
    """Explain the model's normal-probability on one preprocessed view.

    Draws ``n_samples`` binary segment masks (each segment kept with
    probability 1/2), blanks dropped segments to 0, and fits a linear
    surrogate weighted by exp(-d^2 / kernel_width^2) where d is the cosine
    distance of the mask from the all-ones mask.
    """
    if cfg.mode != "one_view" or len(cfg.views) != 1:
        raise ExplainError("explanations apply to a single-view configuration")
    seg = segment(pixels, cell)
    s = seg.n_segments
    if n_samples < s + 1:
        raise ExplainError(
            f"n_samples={n_samples} under-determines {s} segments (+ intercept)"
        )

    rng = np.random.default_rng(seed)
    masks = rng.integers(0, 2, size=(n_samples, s)).astype(np.float64)

    with np.errstate(invalid="ignore"):
        cosine = masks.sum(axis=1) / (np.sqrt((masks**2).sum(axis=1)) * np.sqrt(s))
    distance = 1.0 - np.where(np.isfinite(cosine), cosine, 0.0)
    weights = np.exp(-(distance**2) / kernel_width**2)

    base = pixels.astype(np.float32) / 255.0
    base = (base - norm.mean) / norm.std
    blank = (0.0 - norm.mean) / norm.std
    label_map = seg.labels

    model.eval()
    probs = np.empty(n_samples, dtype=np.float64)
    with torch.inference_mode():
        for start in range(0, n_samples, batch_size):
            chunk = masks[start : start + batch_size]
            keep = chunk[:, label_map]  # (B, H, W) of 0/1
            batch = keep * base[None, :, :] + (1.0 - keep) * blank
            x = torch.from_numpy(batch.astype(np.float32))[:, None, None, :, :]
            logits = model(x)
            probs[start : start + len(chunk)] = torch.softmax(logits, dim=1)[:, 0].numpy()

        full = torch.from_numpy(base.astype(np.float32))[None, None, None, :, :]
        p_full = float(torch.softmax(model(full), dim=1)[0, 0])

    coef, intercept = _weighted_ridge(masks, probs, weights, ridge)

    predicted = masks @ coef + intercept
    mean_w = float(np.average(probs, weights=weights))
    ss_res = float(np.sum(weights * (probs - predicted) ** 2))
    ss_tot = float(np.sum(weights * (probs - mean_w) ** 2))
    fidelity = 0.0 if ss_tot < 1e-12 else 1.0 - ss_res / ss_tot
    gap = abs(intercept + float(coef.sum()) - p_full)

    expl = Explanation(
        segment_weights=coef,
        intercept=intercept,
        fidelity_r2=fidelity,
        full_mask_gap=gap,
        segments=seg,
        overlay=np.zeros((*pixels.shape, 3), dtype=np.uint8),
    )
    expl.overlay = render_overlay(pixels, expl, top_k=top_k)
    return expl


def render_overlay(pixels: np.ndarray, expl: Explanation, top_k: int = 6) -> np.ndarray:
    """Tint the top_k segments by |weight|: green toward normal, red toward defective.

    Tint opacity scales with |weight| / max|weight|; untinted pixels pass
    through as grayscale. All-zero weights give a plain grayscale render.
    """
    weights = expl.segment_weights
    if top_k > len(weights):
        raise ExplainError(f"top_k={top_k} exceeds segment count {len(weights)}")
    out = np.repeat(pixels[:, :, None], 3, axis=2).astype(np.float64)
    max_w = float(np.max(np.abs(weights)))
    if max_w > 0:
        order = np.argsort(-np.abs(weights), kind="stable")
        for sid in order[:top_k]:
            w = weights[sid]
            if w == 0:
                continue
            alpha = abs(w) / max_w
            color = np.array([0.0, 255.0, 0.0]) if w > 0 else np.array([255.0, 0.0, 0.0])
            mask = expl.segments.labels == sid
            out[mask] = (1 - alpha) * out[mask] + alpha * color
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
