"""Truncated residual backbone, view pooling, and the group classifier.

The backbone is the first half of a 34-layer residual network: 7x7 stem on a
single gray channel, the 3-block 64-channel stage and the 4-block 128-channel
stage, global average pooling to a 128-dim embedding, and a 128->2 linear
head. The two deeper stages are removed to keep the model small enough for a
few-shot dataset: 1,341,890 learnable parameters in total, against 21,799,674
for the untruncated 3-channel transfer baseline (the stock 34-layer network
plus a binary adapter on its 1000-way output).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .data import PROFILE_VIEWS, VIEW_ORDER, ExampleGroup, ViewKind

__all__ = [
    "ModelConfig",
    "NormStats",
    "ConfigError",
    "CheckpointError",
    "FoamClassifier",
    "build_backbone",
    "parameter_count",
    "reference_parameter_count",
    "view_pool",
    "classify_group",
    "group_tensor",
    "spec_hash",
    "save_checkpoint",
    "load_checkpoint",
    "EXPECTED_PARAMETERS",
    "EXPECTED_REFERENCE_PARAMETERS",
]

EXPECTED_PARAMETERS = 1_341_890
EXPECTED_REFERENCE_PARAMETERS = 21_799_674

INPUT_SIZE = 224

# Fallback normalization for synthetic data; real runs compute stats from the
# training split.
DEFAULT_NORM = (0.3, 0.25)


class ConfigError(ValueError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class NormStats:
    mean: float = DEFAULT_NORM[0]
    std: float = DEFAULT_NORM[1]


_ALLOWED_CONFIGS = {
    ("one_view", (ViewKind.TOP,)),
    ("one_view", (ViewKind.BOTTOM,)),
    ("one_view", (ViewKind.TOP, ViewKind.BOTTOM)),
    ("multi_view", (ViewKind.TOP, ViewKind.BOTTOM)),
    ("multi_view", PROFILE_VIEWS),
    ("multi_view", VIEW_ORDER),
}


@dataclass(frozen=True)
class ModelConfig:
    """One of the six learning configurations, plus the ND-inclusion switch."""

    mode: str  # "one_view" | "multi_view"
    views: tuple[ViewKind, ...]
    include_nd: bool = True
    pretrained: bool = False

    def __post_init__(self):
        key = (self.mode, tuple(self.views))
        if key not in _ALLOWED_CONFIGS:
            allowed = sorted(f"{m}{tuple(v.value for v in vs)}" for m, vs in _ALLOWED_CONFIGS)
            raise ConfigError(f"unsupported (mode, views) pair {key}; allowed: {allowed}")

    @property
    def name(self) -> str:
        views = {
            (ViewKind.TOP,): "top",
            (ViewKind.BOTTOM,): "bottom",
            (ViewKind.TOP, ViewKind.BOTTOM): "top_bottom",
            PROFILE_VIEWS: "profiles",
            VIEW_ORDER: "full_group",
        }[tuple(self.views)]
        prefix = "ov" if self.mode == "one_view" else "mv"
        return f"{prefix}_{views}"

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "views": [v.value for v in self.views],
            "include_nd": self.include_nd,
            "pretrained": bool(self.pretrained),
        }

    @staticmethod
    def from_json(payload: dict) -> "ModelConfig":
        return ModelConfig(
            mode=payload["mode"],
            views=tuple(ViewKind(v) for v in payload["views"]),
            include_nd=bool(payload["include_nd"]),
            pretrained=bool(payload.get("pretrained", False)),
        )


SIX_CONFIGS = (
    ModelConfig("one_view", (ViewKind.TOP,)),
    ModelConfig("one_view", (ViewKind.BOTTOM,)),
    ModelConfig("one_view", (ViewKind.TOP, ViewKind.BOTTOM)),
    ModelConfig("multi_view", (ViewKind.TOP, ViewKind.BOTTOM)),
    ModelConfig("multi_view", PROFILE_VIEWS),
    ModelConfig("multi_view", VIEW_ORDER),
)


class BasicBlock(nn.Module):
    """3x3 + 3x3 residual block (layer naming matches the stock network)."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=True)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class FoamClassifier(nn.Module):
    """Shared per-view embedder + max view pooling + binary head."""

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 64, 7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(64)
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(3, stride=2, padding=1)
        self.layer1 = nn.Sequential(*[BasicBlock(64, 64) for _ in range(3)])
        self.layer2 = nn.Sequential(
            BasicBlock(64, 128, stride=2), *[BasicBlock(128, 128) for _ in range(3)]
        )
        self.avgpool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(128, 2)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """(B, 1, H, W) -> (B, 128) per-view embeddings."""
        x = self.maxpool(self.relu(self.bn1(self.conv1(x))))
        x = self.layer2(self.layer1(x))
        return self.avgpool(x).flatten(1)

    def forward(self, views: torch.Tensor, return_embeddings: bool = False):
        """(B, V, 1, H, W) -> (B, 2) logits; views are max-pooled per feature."""
        b, v, c, h, w = views.shape
        emb = self.embed(views.reshape(b * v, c, h, w)).reshape(b, v, -1)
        pooled = view_pool(emb)
        logits = self.fc(pooled)
        if return_embeddings:
            return logits, emb
        return logits


def view_pool(embeddings) -> torch.Tensor:
    """Element-wise maximum over views: (B, V, D) -> (B, D), or list of (D,)."""
    if isinstance(embeddings, (list, tuple)):
        if len(embeddings) == 0:
            raise ValueError("view_pool requires at least one embedding")
        return torch.stack(list(embeddings)).amax(dim=0)
    if embeddings.ndim != 3 or embeddings.shape[1] < 1:
        raise ValueError(f"expected (B, V, D) with V >= 1, got {tuple(embeddings.shape)}")
    return embeddings.amax(dim=1)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def reference_parameter_count() -> int:
    """Learnable parameters of the untruncated transfer baseline.

    Stock 34-layer residual network (3-channel stem, 1000-way head) with the
    binary adapter appended on its output.
    """
    import torchvision

    ref = torchvision.models.resnet34(weights=None)
    return parameter_count(ref) + parameter_count(nn.Linear(1000, 2))


def _import_pretrained(model: FoamClassifier, source) -> None:
    """Copy stem/stage weights from a stock 34-layer state dict.

    The 3-channel stem kernel is reduced to 1 channel by summing over input
    channels (a gray input then produces the same stem response as the
    replicated-gray RGB input). Deeper-stage and head weights are discarded.
    """
    if source is True:
        import torchvision

        sd = torchvision.models.resnet34(
            weights=torchvision.models.ResNet34_Weights.IMAGENET1K_V1
        ).state_dict()
    else:
        sd = torch.load(source, map_location="cpu", weights_only=True)
        if not isinstance(sd, dict):
            raise CheckpointError(f"pretrained source {source} is not a state dict")

    own = model.state_dict()
    updates = {}
    for name, tensor in sd.items():
        if name == "conv1.weight":
            tensor = tensor.sum(dim=1, keepdim=True)
        elif not (name.startswith(("bn1.", "layer1.", "layer2."))):
            continue
        if name not in own:
            raise CheckpointError(f"pretrained import: unexpected layer {name}")
        if tuple(own[name].shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"pretrained import: shape mismatch at {name}: "
                f"{tuple(tensor.shape)} vs {tuple(own[name].shape)}"
            )
        updates[name] = tensor
    own.update(updates)
    model.load_state_dict(own)


def build_backbone(pretrained: bool | str | Path = False) -> FoamClassifier:
    """Construct the classifier; optionally import stock pretrained weights.

    ``pretrained`` may be True (fetch the stock weights) or a path to a saved
    34-layer state dict. The exact-parameter identity is asserted here.
    """
    model = FoamClassifier()
    count = parameter_count(model)
    if count != EXPECTED_PARAMETERS:
        raise AssertionError(
            f"backbone has {count} learnable parameters, expected {EXPECTED_PARAMETERS}"
        )
    if pretrained:
        _import_pretrained(model, pretrained)
    return model


def spec_hash(model: nn.Module) -> str:
    """Architecture fingerprint: layer paths and shapes, not values."""
    desc = [(name, tuple(t.shape)) for name, t in sorted(model.state_dict().items())]
    return hashlib.sha256(json.dumps(desc).encode()).hexdigest()


def group_tensor(
    group: ExampleGroup, views: tuple[ViewKind, ...], norm: NormStats
) -> torch.Tensor:
    """Stack the requested views of one group into a (V, 1, H, W) float tensor."""
    missing = [v.value for v in views if v not in group.images]
    if missing:
        raise ConfigError(f"group {group.id}: missing required views {missing}")
    planes = []
    for kind in views:
        arr = group.images[kind].astype(np.float32) / 255.0
        planes.append((arr - norm.mean) / norm.std)
    return torch.from_numpy(np.stack(planes)[:, None, :, :])


def classify_group(
    model: FoamClassifier,
    group: ExampleGroup,
    cfg: ModelConfig,
    norm: NormStats = NormStats(),
) -> torch.Tensor:
    """Logits (normal, defective) for one group under a configuration.

    multi_view pools the per-view embeddings; one_view on a single view embeds
    just that view; one_view on top+bottom scores each image independently and
    reports the logits of whichever image looks more defective.
    """
    model.eval()
    with torch.no_grad():
        x = group_tensor(group, cfg.views, norm)
        if cfg.mode == "multi_view":
            return model(x[None, ...])[0]
        if len(cfg.views) == 1:
            return model(x[:, None, :, :, :])[0]
        logits = model(x[:, None, :, :, :])  # each view scored independently
        p_defective = torch.softmax(logits, dim=1)[:, 1]
        return logits[int(torch.argmax(p_defective))]


def save_checkpoint(
    path: str | Path,
    model: FoamClassifier,
    config: ModelConfig,
    epoch: int,
    metrics: dict,
    norm: NormStats,
) -> None:
    header = {
        "config": config.to_json(),
        "epoch": epoch,
        "metrics": metrics,
        "spec_hash": spec_hash(model),
        "norm": {"mean": norm.mean, "std": norm.std},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"header": header, "state_dict": model.state_dict()}, path)


def load_checkpoint(path: str | Path) -> tuple[FoamClassifier, ModelConfig, NormStats, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if "header" not in payload or "state_dict" not in payload:
        raise CheckpointError(f"{path}: not a classifier checkpoint")
    header = payload["header"]
    model = build_backbone(pretrained=False)
    if header["spec_hash"] != spec_hash(model):
        raise CheckpointError(
            f"{path}: checkpoint architecture hash {header['spec_hash'][:12]} does not "
            "match this model"
        )
    model.load_state_dict(payload["state_dict"])
    model.eval()
    config = ModelConfig.from_json(header["config"])
    norm = NormStats(mean=header["norm"]["mean"], std=header["norm"]["std"])
    return model, config, norm, header
