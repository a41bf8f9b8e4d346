"""Training loop, min-loss checkpoint selection, metrics, grid and ablation.

Reported accuracy is the test accuracy at the epoch with minimum test loss;
AUC is the probability that a random (defective, normal) pair is ranked
correctly by defective-probability, ties counted half.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .augment import AugmentSpec, apply_variant, stable_hash, variant_count
from .data import (
    BinaryLabel,
    DatasetSplit,
    ExampleGroup,
    RawLabel,
    ValidationError,
    collapse_label,
    stratified_split,
)
from .model import (
    SIX_CONFIGS,
    FoamClassifier,
    ModelConfig,
    NormStats,
    build_backbone,
    save_checkpoint,
)

__all__ = [
    "TrainConfig",
    "TrainReport",
    "TrainResult",
    "EvalResult",
    "TrainingDiverged",
    "auc_rank",
    "train",
    "evaluate",
    "run_grid",
    "ablate_data_size",
    "GRID_ROWS",
    "GRID_COLUMNS",
    "write_grid_csv",
]


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    class_weights: bool = True
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    augment_online: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")


@dataclass
class EpochRow:
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float


@dataclass
class TrainReport:
    config: ModelConfig
    split: DatasetSplit
    epochs: list[EpochRow]
    selected_epoch: int
    accuracy_at_min_loss: float  # percent
    auc: float | None  # percent
    auc_error: str | None = None

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "split": {
                "train": list(self.split.train),
                "test": list(self.split.test),
                "seed": self.split.seed,
                "include_nd": self.split.include_nd,
            },
            "epochs": [
                {
                    "train_loss": e.train_loss,
                    "train_acc": e.train_acc,
                    "test_loss": e.test_loss,
                    "test_acc": e.test_acc,
                }
                for e in self.epochs
            ],
            "selected_epoch": self.selected_epoch,
            "accuracy_at_min_loss": self.accuracy_at_min_loss,
            "auc": self.auc,
            "auc_error": self.auc_error,
        }


@dataclass
class TrainResult:
    report: TrainReport
    model: FoamClassifier
    norm: NormStats


@dataclass
class EvalResult:
    accuracy: float  # percent
    auc: float | None  # percent
    probabilities: dict[str, float]  # group id -> p(defective)
    auc_error: str | None = None


def auc_rank(scores, labels) -> float:
    """Rank-based AUC in [0, 1] with average ranks for ties.

    ``labels``: 1 for defective (positive), 0 for normal. Equivalent to the
    pairwise count with ties worth half a pair.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC undefined: need both classes present")
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1])) + 1.0
    avg_rank = starts + (counts - 1) / 2.0
    ranks = avg_rank[inverse]
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _binary_index(label: RawLabel) -> int:
    return 0 if collapse_label(label) is BinaryLabel.NORMAL else 1


def _norm_from_groups(groups: list[ExampleGroup]) -> NormStats:
    acc = []
    for g in groups:
        for arr in g.images.values():
            acc.append(arr.astype(np.float64) / 255.0)
    if not acc:
        return NormStats()
    stacked = np.stack(acc)
    mean = float(stacked.mean())
    std = float(stacked.std())
    if std < 1e-6:
        return NormStats()
    return NormStats(mean=mean, std=std)


def _resolve(groups: list[ExampleGroup], ids) -> list[ExampleGroup]:
    by_id = {g.id: g for g in groups}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise ValidationError(f"split references unknown group ids: {missing[:5]}")
    return [by_id[i] for i in ids]


def _views_tensor(images: dict, views, norm: NormStats) -> torch.Tensor:
    planes = [
        (images[v].astype(np.float32) / 255.0 - norm.mean) / norm.std for v in views
    ]
    return torch.from_numpy(np.stack(planes)[:, None, :, :])


def _epoch_images(group: ExampleGroup, tcfg: TrainConfig, epoch: int) -> dict:
    if not tcfg.augment_online:
        return group.images
    spec = tcfg.augment
    rng = np.random.default_rng([tcfg.seed, epoch, stable_hash(group.id)])
    index = int(rng.integers(variant_count(spec)))
    return apply_variant(group, spec, index, rng)


def _score_groups(
    model: FoamClassifier,
    groups: list[ExampleGroup],
    cfg: ModelConfig,
    norm: NormStats,
    batch_size: int = 16,
    with_loss: bool = False,
) -> tuple[dict[str, float], dict[str, int], float]:
    """Probabilities, predictions and mean per-sample loss on clean images."""
    model.eval()
    probs: dict[str, float] = {}
    preds: dict[str, int] = {}
    losses: list[float] = []
    one_view_multi = cfg.mode == "one_view" and len(cfg.views) > 1
    with torch.inference_mode():
        for start in range(0, len(groups), batch_size):
            chunk = groups[start : start + batch_size]
            x = torch.stack([_views_tensor(g.images, cfg.views, norm) for g in chunk])
            labels = torch.tensor([_binary_index(g.raw_label) for g in chunk])
            if one_view_multi:
                b, v = x.shape[0], x.shape[1]
                logits = model(x.reshape(b * v, 1, 1, *x.shape[3:]))
                if with_loss:
                    per_img_labels = labels.repeat_interleave(v)
                    losses.extend(
                        nn.functional.cross_entropy(
                            logits, per_img_labels, reduction="none"
                        ).tolist()
                    )
                p = torch.softmax(logits, dim=1)[:, 1].reshape(b, v)
                best = p.argmax(dim=1)
                group_logits = logits.reshape(b, v, 2)[torch.arange(b), best]
            else:
                group_logits = model(x)
                if with_loss:
                    losses.extend(
                        nn.functional.cross_entropy(
                            group_logits, labels, reduction="none"
                        ).tolist()
                    )
            p_def = torch.softmax(group_logits, dim=1)[:, 1]
            for g, p_i, logit in zip(chunk, p_def.tolist(), group_logits):
                probs[g.id] = float(p_i)
                preds[g.id] = int(torch.argmax(logit))
    mean_loss = float(np.mean(losses)) if losses else float("nan")
    return probs, preds, mean_loss


def evaluate(
    model: FoamClassifier,
    groups: list[ExampleGroup],
    cfg: ModelConfig,
    norm: NormStats,
    batch_size: int = 16,
) -> EvalResult:
    """Accuracy (percent), AUC (percent) and per-group defective-probabilities."""
    if not groups:
        raise ValidationError("cannot evaluate on an empty group list")
    probs, preds, _ = _score_groups(model, groups, cfg, norm, batch_size)
    labels = {g.id: _binary_index(g.raw_label) for g in groups}
    correct = sum(1 for gid in labels if preds[gid] == labels[gid])
    accuracy = 100.0 * correct / len(labels)
    ids = sorted(labels)
    try:
        auc = 100.0 * auc_rank([probs[i] for i in ids], [labels[i] for i in ids])
        auc_error = None
    except ValidationError as e:
        auc, auc_error = None, str(e)
    return EvalResult(accuracy=accuracy, auc=auc, probabilities=probs, auc_error=auc_error)


def train(
    groups: list[ExampleGroup],
    split: DatasetSplit,
    cfg: ModelConfig,
    tcfg: TrainConfig,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Train one configuration on a split; select the min-test-loss epoch.

    Groups must be preprocessed (five target-sized single-channel views).
    Writes checkpoint.pt and report.json under ``out_dir`` when given.
    """
    if not split.train or not split.test:
        raise ValidationError("split has an empty train or test side")
    if split.include_nd != cfg.include_nd:
        raise ValidationError(
            f"split include_nd={split.include_nd} inconsistent with config "
            f"include_nd={cfg.include_nd}"
        )
    train_groups = _resolve(groups, split.train)
    test_groups = _resolve(groups, split.test)

    torch.manual_seed(tcfg.seed)
    model = build_backbone(cfg.pretrained)
    norm = _norm_from_groups(train_groups)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=tcfg.learning_rate, weight_decay=tcfg.weight_decay
    )

    labels = np.array([_binary_index(g.raw_label) for g in train_groups])
    if tcfg.class_weights:
        counts = np.bincount(labels, minlength=2).astype(np.float64)
        counts[counts == 0] = 1.0
        weight = torch.tensor(len(labels) / (2.0 * counts), dtype=torch.float32)
    else:
        weight = None
    criterion = nn.CrossEntropyLoss(weight=weight)

    one_view = cfg.mode == "one_view"
    rows: list[EpochRow] = []
    best_loss = math.inf
    best_epoch = -1
    best_state = None
    best_acc = 0.0

    for epoch in range(tcfg.epochs):
        model.train()
        shuffle_rng = np.random.default_rng([tcfg.seed, 1 + epoch])
        epoch_images = {g.id: _epoch_images(g, tcfg, epoch) for g in train_groups}

        if one_view:
            samples = [
                (g, kind) for g in train_groups for kind in cfg.views
            ]
        else:
            samples = [(g, None) for g in train_groups]
        order = shuffle_rng.permutation(len(samples))

        loss_sum = 0.0
        correct = 0
        for start in range(0, len(order), tcfg.batch_size):
            batch = [samples[i] for i in order[start : start + tcfg.batch_size]]
            xs, ys = [], []
            for g, kind in batch:
                views = (kind,) if kind is not None else cfg.views
                xs.append(_views_tensor(epoch_images[g.id], views, norm))
                ys.append(_binary_index(g.raw_label))
            x = torch.stack(xs)
            y = torch.tensor(ys)
            optimizer.zero_grad()
            logits = model(x)
            loss = criterion(logits, y)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite training loss at epoch {epoch} "
                    f"(config {cfg.name}, lr {tcfg.learning_rate})"
                )
            loss.backward()
            optimizer.step()
            loss_sum += float(loss) * len(batch)
            correct += int((logits.argmax(dim=1) == y).sum())

        train_loss = loss_sum / len(samples)
        train_acc = 100.0 * correct / len(samples)
        _, preds, test_loss = _score_groups(model, test_groups, cfg, norm, with_loss=True)
        test_labels = {g.id: _binary_index(g.raw_label) for g in test_groups}
        test_acc = 100.0 * sum(
            1 for gid in test_labels if preds[gid] == test_labels[gid]
        ) / len(test_labels)
        rows.append(EpochRow(train_loss, train_acc, test_loss, test_acc))

        if test_loss < best_loss:
            best_loss = test_loss
            best_epoch = epoch
            best_acc = test_acc
            best_state = copy.deepcopy(model.state_dict())

    if best_state is None:
        raise TrainingDiverged("no epoch produced a finite test loss")
    model.load_state_dict(best_state)
    model.eval()
    result = evaluate(model, test_groups, cfg, norm)
    report = TrainReport(
        config=cfg,
        split=split,
        epochs=rows,
        selected_epoch=best_epoch,
        accuracy_at_min_loss=best_acc,
        auc=result.auc,
        auc_error=result.auc_error,
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(
            out_dir / "checkpoint.pt",
            model,
            cfg,
            best_epoch,
            {"accuracy": best_acc, "auc": result.auc},
            norm,
        )
        from .storage import write_json_atomic

        write_json_atomic(out_dir / "report.json", report.to_json())
    return TrainResult(report=report, model=model, norm=norm)


# Grid layout mirrors the two published tables: five image-set rows, four
# columns pairing each mode with/without the normal-defective examples.
GRID_ROWS = ("top", "bottom", "top_bottom", "profiles", "full_group")
GRID_COLUMNS = ("one_view", "one_view_nd", "multi_view", "multi_view_nd")

_ROW_OF = {
    "ov_top": "top",
    "ov_bottom": "bottom",
    "ov_top_bottom": "top_bottom",
    "mv_top_bottom": "top_bottom",
    "mv_profiles": "profiles",
    "mv_full_group": "full_group",
}


def _column_of(cfg: ModelConfig) -> str:
    base = "one_view" if cfg.mode == "one_view" else "multi_view"
    return base if cfg.include_nd else base + "_nd"


@dataclass
class GridCell:
    config: ModelConfig
    accuracy: float | None
    auc: float | None
    error: str | None = None


@dataclass
class GridResult:
    cells: list[GridCell]

    def metric_table(self, metric: str) -> dict[str, dict[str, float | None | str]]:
        table: dict[str, dict] = {r: {c: "--" for c in GRID_COLUMNS} for r in GRID_ROWS}
        for cell in self.cells:
            row = _ROW_OF[cell.config.name]
            col = _column_of(cell.config)
            if cell.error is not None:
                table[row][col] = "failed"
            else:
                table[row][col] = getattr(cell, metric)
        return table


def write_grid_csv(result: GridResult, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "row", *GRID_COLUMNS])
        for metric in ("accuracy", "auc"):
            table = result.metric_table(metric)
            for row in GRID_ROWS:
                values = [
                    v if isinstance(v, str) else (f"{v:.2f}" if v is not None else "")
                    for v in (table[row][c] for c in GRID_COLUMNS)
                ]
                writer.writerow([metric, row, *values])


def run_grid(
    groups: list[ExampleGroup],
    ratio: float,
    seed: int,
    tcfg: TrainConfig,
    out_dir: str | Path | None = None,
    configs: tuple[ModelConfig, ...] = SIX_CONFIGS,
) -> GridResult:
    """Train every configuration with and without the ND class: 12 cells.

    A failing cell is recorded and the grid continues.
    """
    cells: list[GridCell] = []
    for include_nd in (True, False):
        split = stratified_split(groups, ratio, include_nd, seed)
        for base_cfg in configs:
            cfg = ModelConfig(
                mode=base_cfg.mode,
                views=base_cfg.views,
                include_nd=include_nd,
                pretrained=base_cfg.pretrained,
            )
            cell_dir = None
            if out_dir is not None:
                suffix = "with_nd" if include_nd else "no_nd"
                cell_dir = Path(out_dir) / f"{cfg.name}__{suffix}"
            try:
                result = train(groups, split, cfg, tcfg, out_dir=cell_dir)
                cells.append(
                    GridCell(
                        config=cfg,
                        accuracy=result.report.accuracy_at_min_loss,
                        auc=result.report.auc,
                    )
                )
            except Exception as e:  # grid continues; the cell is marked failed
                cells.append(GridCell(config=cfg, accuracy=None, auc=None, error=str(e)))
    grid = GridResult(cells=cells)
    if out_dir is not None:
        write_grid_csv(grid, Path(out_dir) / "grid.csv")
    return grid


def _remove_stratified(
    train_ids: tuple[str, ...],
    groups_by_id: dict[str, ExampleGroup],
    removed: int,
    seed: int,
) -> tuple[str, ...]:
    by_class: dict[RawLabel, list[str]] = {}
    for gid in train_ids:
        by_class.setdefault(groups_by_id[gid].raw_label, []).append(gid)
    total = len(train_ids)
    exact = {c: removed * len(ids) / total for c, ids in by_class.items()}
    take = {c: int(math.floor(v)) for c, v in exact.items()}
    order = sorted(
        by_class, key=lambda c: (exact[c] - take[c], list(RawLabel).index(c)), reverse=True
    )
    for c in order[: removed - sum(take.values())]:
        take[c] += 1
    rng = np.random.default_rng(seed)
    dropped: set[str] = set()
    for c, ids in by_class.items():
        ids = sorted(ids)
        picks = rng.choice(len(ids), size=min(take[c], len(ids)), replace=False)
        dropped.update(ids[int(i)] for i in picks)
    return tuple(gid for gid in train_ids if gid not in dropped)


@dataclass
class AblationCell:
    config: ModelConfig
    seed: int
    full_accuracy: float
    reduced_accuracy: float
    full_auc: float | None
    reduced_auc: float | None


@dataclass
class AblationResult:
    cells: list[AblationCell]

    @property
    def mean_accuracy_delta(self) -> float:
        """Mean accuracy gained by the extra training examples (full - reduced)."""
        return float(np.mean([c.full_accuracy - c.reduced_accuracy for c in self.cells]))

    @property
    def mean_auc_delta(self) -> float | None:
        pairs = [
            c.full_auc - c.reduced_auc
            for c in self.cells
            if c.full_auc is not None and c.reduced_auc is not None
        ]
        return float(np.mean(pairs)) if pairs else None


def ablate_data_size(
    groups: list[ExampleGroup],
    ratio: float,
    removed: int,
    seeds: tuple[int, ...],
    tcfg: TrainConfig,
    out_dir: str | Path | None = None,
    configs: tuple[ModelConfig, ...] = SIX_CONFIGS,
) -> AblationResult:
    """Paired runs per cell: full train set vs train minus ``removed`` groups.

    The removal is a stratified random subset; the test set is identical on
    both sides of each pair.
    """
    groups_by_id = {g.id: g for g in groups}
    cells: list[AblationCell] = []
    for seed in seeds:
        for include_nd in (True, False):
            split = stratified_split(groups, ratio, include_nd, seed)
            if len(split.train) <= removed:
                raise ValidationError(
                    f"train split ({len(split.train)}) not larger than removed={removed}"
                )
            reduced_split = DatasetSplit(
                train=_remove_stratified(split.train, groups_by_id, removed, seed),
                test=split.test,
                seed=seed,
                include_nd=include_nd,
            )
            for base_cfg in configs:
                cfg = ModelConfig(
                    mode=base_cfg.mode,
                    views=base_cfg.views,
                    include_nd=include_nd,
                    pretrained=base_cfg.pretrained,
                )
                run_tcfg = TrainConfig(
                    epochs=tcfg.epochs,
                    batch_size=tcfg.batch_size,
                    learning_rate=tcfg.learning_rate,
                    weight_decay=tcfg.weight_decay,
                    class_weights=tcfg.class_weights,
                    augment=tcfg.augment,
                    augment_online=tcfg.augment_online,
                    seed=seed,
                )
                full = train(groups, split, cfg, run_tcfg)
                reduced = train(groups, reduced_split, cfg, run_tcfg)
                cells.append(
                    AblationCell(
                        config=cfg,
                        seed=seed,
                        full_accuracy=full.report.accuracy_at_min_loss,
                        reduced_accuracy=reduced.report.accuracy_at_min_loss,
                        full_auc=full.report.auc,
                        reduced_auc=reduced.report.auc,
                    )
                )
    result = AblationResult(cells=cells)
    if out_dir is not None:
        from .storage import write_json_atomic

        payload = {
            "removed": removed,
            "seeds": list(seeds),
            "mean_accuracy_delta": result.mean_accuracy_delta,
            "mean_auc_delta": result.mean_auc_delta,
            "cells": [
                {
                    "config": c.config.to_json(),
                    "seed": c.seed,
                    "full_accuracy": c.full_accuracy,
                    "reduced_accuracy": c.reduced_accuracy,
                    "full_auc": c.full_auc,
                    "reduced_auc": c.reduced_auc,
                }
                for c in result.cells
            ],
        }
        write_json_atomic(Path(out_dir) / "ablation.json", payload)
    return result
