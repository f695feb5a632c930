import numpy as np
import pytest

from damagemap.ingest import build_index
from damagemap.synth import SyntheticSpec, generate_synthetic


@pytest.fixture(scope="session")
def synth_dataset(tmp_path_factory):
    """Small deterministic dataset shared by read-only tests."""
    root = tmp_path_factory.mktemp("synthdata")
    spec = SyntheticSpec(
        num_scenes=6,
        image_size=64,
        buildings_per_scene=(3, 5),
        seed=42,
        splits={"train": 4, "val": 2},
    )
    manifest = generate_synthetic(spec, root)
    return root, spec, manifest


@pytest.fixture(scope="session")
def train_index(synth_dataset):
    root, _, _ = synth_dataset
    return build_index(root, "train")


@pytest.fixture(scope="session")
def val_index(synth_dataset):
    root, _, _ = synth_dataset
    return build_index(root, "val")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
