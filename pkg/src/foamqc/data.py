"""Dataset model: example groups, labels, manifest ingestion, stratified splitting.

One "example group" is one foam: five views (top, bottom, three profiles) that
are labeled and classified as a unit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

__all__ = [
    "ViewKind",
    "RawLabel",
    "BinaryLabel",
    "ExampleGroup",
    "DatasetSplit",
    "ManifestError",
    "ValidationError",
    "load_manifest",
    "collapse_label",
    "stratified_split",
    "eligible_groups",
    "save_split",
    "load_split",
]


class ViewKind(str, Enum):
    TOP = "top"
    BOTTOM = "bottom"
    PROFILE_1 = "profile_1"
    PROFILE_2 = "profile_2"
    PROFILE_3 = "profile_3"

    @property
    def is_plan(self) -> bool:
        return self in (ViewKind.TOP, ViewKind.BOTTOM)

    @property
    def is_profile(self) -> bool:
        return not self.is_plan


# Canonical presentation order: the two surface planes, then the profiles.
VIEW_ORDER = (
    ViewKind.TOP,
    ViewKind.BOTTOM,
    ViewKind.PROFILE_1,
    ViewKind.PROFILE_2,
    ViewKind.PROFILE_3,
)

PLAN_VIEWS = (ViewKind.TOP, ViewKind.BOTTOM)
PROFILE_VIEWS = (ViewKind.PROFILE_1, ViewKind.PROFILE_2, ViewKind.PROFILE_3)


class RawLabel(str, Enum):
    NORMAL = "normal"
    NORMAL_DEFECTIVE = "normal_defective"
    DEFECTIVE = "defective"


class BinaryLabel(str, Enum):
    NORMAL = "normal"
    DEFECTIVE = "defective"


class ManifestError(ValueError):
    """Manifest file could not be parsed or violates the record schema."""


class ValidationError(ValueError):
    """Input data violates a dataset-level invariant."""


@dataclass
class ExampleGroup:
    """One foam: id, per-view image paths and (once loaded) pixel arrays."""

    id: str
    raw_label: RawLabel | None = None
    source_paths: dict[ViewKind, Path] = field(default_factory=dict)
    images: dict[ViewKind, np.ndarray] = field(default_factory=dict)
    problems: list[str] = field(default_factory=list)

    @property
    def is_complete(self) -> bool:
        """All five views referenced and no per-group load problems."""
        return len(self.source_paths) == len(ViewKind) and not self.problems

    @property
    def is_eligible(self) -> bool:
        """Complete and labeled: admissible for training/evaluation."""
        return self.is_complete and self.raw_label is not None


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    test: tuple[str, ...]
    seed: int
    include_nd: bool

    def __post_init__(self):
        overlap = set(self.train) & set(self.test)
        if overlap:
            raise ValidationError(f"train/test overlap: {sorted(overlap)[:5]}")


def collapse_label(raw: RawLabel) -> BinaryLabel:
    """Fold the ambiguous middle class into defective: doubt counts against the foam."""
    if raw is RawLabel.NORMAL:
        return BinaryLabel.NORMAL
    return BinaryLabel.DEFECTIVE


def load_manifest(path: str | Path) -> list[ExampleGroup]:
    """Read a dataset manifest (JSON array of group records).

    Each record: {"id": str, "label": str, "views": {view_kind: relative path}}.
    Missing view entries or unreadable image files are recorded on the group's
    ``problems`` list rather than dropping the group.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e
    try:
        records = json.loads(text)
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}:{e.lineno}: malformed manifest: {e.msg}") from e
    if not isinstance(records, list):
        raise ManifestError(f"{path}: manifest root must be a JSON array")

    root = path.parent
    groups: list[ExampleGroup] = []
    seen: set[str] = set()
    for i, rec in enumerate(records):
        if not isinstance(rec, dict) or "id" not in rec:
            raise ManifestError(f"{path}: record {i} has no id")
        gid = str(rec["id"])
        if gid in seen:
            raise ValidationError(f"duplicate group id {gid!r} in {path}")
        seen.add(gid)

        label = rec.get("label")
        raw_label: RawLabel | None = None
        if label is not None:
            try:
                raw_label = RawLabel(label)
            except ValueError:
                raise ManifestError(
                    f"{path}: record {gid!r} has unknown label {label!r}"
                ) from None

        group = ExampleGroup(id=gid, raw_label=raw_label)
        views = rec.get("views", {})
        for kind in ViewKind:
            rel = views.get(kind.value)
            if rel is None:
                group.problems.append(f"missing view {kind.value}")
                continue
            img_path = root / rel
            if not img_path.is_file():
                group.problems.append(f"unreadable image for {kind.value}: {img_path}")
            group.source_paths[kind] = img_path
        groups.append(group)
    return groups


def eligible_groups(groups: list[ExampleGroup]) -> list[ExampleGroup]:
    return [g for g in groups if g.is_eligible]


def stratified_split(
    groups: list[ExampleGroup],
    ratio: float,
    include_nd: bool,
    seed: int,
) -> DatasetSplit:
    """Split groups into train/test, stratified by raw label.

    Deterministic in ``seed``. Each class contributes floor(n*ratio) groups to
    train; the remaining train quota (round(total*ratio) - sum of floors) goes
    to the classes with the largest fractional parts, ties resolved in favor of
    the later class in RawLabel order. With include_nd=False the
    normal-defective groups are removed before splitting.
    """
    if not 0.0 < ratio < 1.0:
        raise ValidationError(f"ratio must be in (0,1), got {ratio}")
    bad = [g.id for g in groups if g.raw_label is None or not g.is_complete]
    if bad:
        raise ValidationError(f"unlabeled or incomplete groups in split input: {bad[:5]}")

    if not include_nd:
        groups = [g for g in groups if g.raw_label is not RawLabel.NORMAL_DEFECTIVE]

    by_class: dict[RawLabel, list[str]] = {}
    for g in groups:
        by_class.setdefault(g.raw_label, []).append(g.id)
    if include_nd:
        empty = [c.value for c in RawLabel if not by_class.get(c)]
        if empty:
            raise ValidationError(f"classes with no members: {empty}")
    if not by_class:
        raise ValidationError("no groups to split")
    required = sorted(by_class, key=list(RawLabel).index)

    total = sum(len(ids) for ids in by_class.values())
    train_total = round(total * ratio)
    base: dict[RawLabel, int] = {}
    frac: dict[RawLabel, float] = {}
    for c, ids in by_class.items():
        exact = len(ids) * ratio
        base[c] = math.floor(exact)
        frac[c] = exact - base[c]
    leftover = train_total - sum(base.values())
    # Later classes win fractional ties so the scarcer defect-side classes
    # keep the extra training examples.
    order = sorted(required, key=lambda c: (frac[c], list(RawLabel).index(c)), reverse=True)
    for c in order[:leftover]:
        base[c] += 1

    rng = np.random.default_rng(seed)
    train: list[str] = []
    test: list[str] = []
    for c in required:
        ids = sorted(by_class[c])
        perm = rng.permutation(len(ids))
        shuffled = [ids[j] for j in perm]
        train.extend(shuffled[: base[c]])
        test.extend(shuffled[base[c] :])
    return DatasetSplit(train=tuple(train), test=tuple(test), seed=seed, include_nd=include_nd)


def save_split(split: DatasetSplit, path: str | Path) -> None:
    payload = {
        "train": list(split.train),
        "test": list(split.test),
        "seed": split.seed,
        "include_nd": split.include_nd,
    }
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def load_split(path: str | Path) -> DatasetSplit:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return DatasetSplit(
        train=tuple(payload["train"]),
        test=tuple(payload["test"]),
        seed=int(payload["seed"]),
        include_nd=bool(payload["include_nd"]),
    )
