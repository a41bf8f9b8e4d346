"""On-disk layout: manifests, PNG images, truth sidecars, atomic JSON writes."""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
from PIL import Image

from .data import VIEW_ORDER, ExampleGroup, ViewKind
from .synthgen import SynthTruth, rle_encode

__all__ = [
    "read_image",
    "write_image",
    "load_group_images",
    "write_json_atomic",
    "write_dataset",
    "manifest_record",
]


def read_image(path: str | Path) -> np.ndarray:
    """Load a PNG as (H, W) gray or (H, W, 3) RGB uint8."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
        return np.asarray(im)


def write_image(path: str | Path, pixels: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path)


def load_group_images(group: ExampleGroup) -> ExampleGroup:
    """Read every referenced view image into the group (new object)."""
    images = {}
    problems = list(group.problems)
    for kind, path in group.source_paths.items():
        try:
            images[kind] = read_image(path)
        except OSError as e:
            problems.append(f"unreadable image for {kind.value}: {e}")
    return ExampleGroup(
        id=group.id,
        raw_label=group.raw_label,
        source_paths=dict(group.source_paths),
        images=images,
        problems=problems,
    )


def write_json_atomic(path: str | Path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    os.replace(tmp, path)


def manifest_record(group: ExampleGroup, root: Path) -> dict:
    return {
        "id": group.id,
        "label": group.raw_label.value if group.raw_label else None,
        "views": {
            kind.value: str(group.source_paths[kind].relative_to(root))
            for kind in VIEW_ORDER
            if kind in group.source_paths
        },
    }


def write_dataset(
    out_dir: str | Path,
    groups: list[ExampleGroup],
    truths: list[SynthTruth] | None = None,
) -> Path:
    """Write images + manifest.json (+ truth sidecars); returns manifest path."""
    out_dir = Path(out_dir)
    records = []
    for i, group in enumerate(groups):
        paths: dict[ViewKind, Path] = {}
        for kind in VIEW_ORDER:
            p = out_dir / "images" / group.id / f"{kind.value}.png"
            write_image(p, group.images[kind])
            paths[kind] = p
        stored = ExampleGroup(id=group.id, raw_label=group.raw_label, source_paths=paths)
        records.append(manifest_record(stored, out_dir))
        if truths is not None:
            truth = truths[i]
            sidecar = {
                "label": truth.raw_label.value,
                "circles": {
                    k.value: {"cx": c.cx, "cy": c.cy, "r": c.r}
                    for k, c in truth.circles.items()
                },
                "defect_masks": {
                    k.value: {
                        "shape": list(m.shape),
                        "rle": rle_encode(m),
                    }
                    for k, m in truth.defect_masks.items()
                },
            }
            write_json_atomic(out_dir / "truth" / f"{group.id}.json", sidecar)
    manifest = out_dir / "manifest.json"
    write_json_atomic(manifest, records)
    return manifest
