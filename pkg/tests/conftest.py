from pathlib import Path

import pytest

from vir_vlfm.data import DatasetConfig, build_dataset
from vir_vlfm.train import TrainConfig, train

TINY_DATA = DatasetConfig(train=24, val=6, test=10, pretrain=30, eval_shifts=[0.0, 8.0])
TINY_MODEL = dict(width=16, depth=2, heads=2, bottleneck=4, queries=2, qformer_depth=1, decoder_depth=1)


def tiny_config(**over) -> TrainConfig:
    base = dict(epochs=2, batch_size=8, seed=0, **TINY_MODEL)
    base.update(over)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory) -> Path:
    return build_dataset(tmp_path_factory.mktemp("data") / "tiny", TINY_DATA, log=lambda m: None)


@pytest.fixture(scope="session")
def tiny_pretrain(tiny_data, tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("pretrain")
    return train(tiny_config(phase="pretrain", lr=1e-3), tiny_data, out, echo=False)
