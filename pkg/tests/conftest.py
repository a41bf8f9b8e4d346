import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from foamqc.data import RawLabel, ViewKind
from foamqc.synthgen import SynthParams, generate


@pytest.fixture(scope="session")
def synth_pairs():
    """Small deterministic synthetic dataset shared across tests."""
    return generate(SynthParams(n_groups=24, seed=11))


@pytest.fixture(scope="session")
def synth_groups(synth_pairs):
    return [g for g, _ in synth_pairs]


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def make_manifest(tmp_path: Path, n: int = 6, labels=None, drop_view=None) -> Path:
    """Write a tiny dataset with real PNG files and return the manifest path."""
    from foamqc.storage import write_dataset
    from foamqc.data import ExampleGroup

    labels = labels or [
        [RawLabel.NORMAL, RawLabel.NORMAL_DEFECTIVE, RawLabel.DEFECTIVE][i % 3]
        for i in range(n)
    ]
    groups = []
    rng = np.random.default_rng(5)
    for i in range(n):
        images = {
            kind: rng.integers(0, 256, size=(32, 32), dtype=np.uint8)
            for kind in ViewKind
        }
        groups.append(ExampleGroup(id=f"m{i:03d}", raw_label=labels[i], images=images))
    manifest = write_dataset(tmp_path, groups)
    if drop_view is not None:
        gid, kind = drop_view
        (tmp_path / "images" / gid / f"{kind.value}.png").unlink()
    return manifest
