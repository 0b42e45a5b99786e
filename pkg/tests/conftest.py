from __future__ import annotations

import pytest

from withprofit.config import load_config, example_config_path
from withprofit.runner import build


@pytest.fixture(scope="session")
def example_cfg():
    return load_config(example_config_path())


@pytest.fixture(scope="session")
def pre02(example_cfg):
    """Example product precomputed at h = 0.02 for both procedures."""
    return build(example_cfg.with_run(step=0.02, mode="both"))


@pytest.fixture(scope="session")
def pre01(example_cfg):
    """Example product precomputed at h = 0.01 for both procedures."""
    return build(example_cfg.with_run(step=0.01, mode="both"))
