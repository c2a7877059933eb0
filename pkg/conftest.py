"""
Shared pytest fixtures
Small model configurations, a synthetic dataset and the slow-test gate
"""

import os

import pytest
import torch

import equipose  # noqa: F401  (sets float64 as the default dtype)
from equipose.ai.diffusion import make_rng
from equipose.models import ModelConfig, RunConfig, ScheduleConfig, SynthSpec, TrainConfig
from equipose.services.synth_dataset import synth_dataset

RUN_SLOW = os.getenv("EQUIPOSE_RUN_SLOW") == "1"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale training oracles (set EQUIPOSE_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip = pytest.mark.skip(reason="set EQUIPOSE_RUN_SLOW=1 to run desk-scale oracles")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def tiny_model_config(**overrides) -> ModelConfig:
    """d=8, N=N_0=32, tetrahedral group: the smallest assembled model."""
    values = dict(feature_dim=8, heads=2, group="tetrahedral", n_points=32, n_observed=32,
                  kernel_size=8, max_neighbors=8)
    values.update(overrides)
    return ModelConfig(**values)


def tiny_run_config(**train) -> RunConfig:
    values = dict(batch_size=2, steps_per_phase=3, checkpoint_every=2, seed=0)
    values.update(train)
    return RunConfig(model=tiny_model_config(), schedule=ScheduleConfig(T=5), train=TrainConfig(**values))


@pytest.fixture
def rng():
    return make_rng(1234, 0)


@pytest.fixture
def cloud(rng):
    return torch.as_tensor(rng.standard_normal((64, 3)))


@pytest.fixture
def tiny_config():
    return tiny_model_config()


@pytest.fixture
def tiny_run():
    return tiny_run_config()


@pytest.fixture
def toy_spec():
    return SynthSpec(categories=["box", "cylinder"], instances_per_category=4, n_points=32, seed=3)


@pytest.fixture
def toy_dataset_dir(tmp_path, toy_spec):
    root = tmp_path / "data"
    synth_dataset(toy_spec, root)
    return root
