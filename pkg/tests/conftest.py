import pytest

from dcgaze.config import RunConfig
from dcgaze.data import SyntheticSpec, generate_synthetic, load_dataset

TINY_CONFIG = {
    "image_size": 32,
    "grid_h": 2,
    "grid_w": 2,
    "feature_dim": 8,
    "transformer_layers": 1,
    "attention_heads": 2,
    "batch_size": 4,
    "epochs": 1,
    "backend_embed_dim": 16,
    "learning_rate": 1e-3,
}


def tiny_config(**overrides) -> RunConfig:
    values = dict(TINY_CONFIG)
    values.update(overrides)
    return RunConfig(values)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tinydata")
    generate_synthetic(SyntheticSpec(count=8, image_size=32, seed=11), root)
    return load_dataset(root)
