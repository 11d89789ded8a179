import dataclasses

import numpy as np
import pytest

from mvcn.config import PipelineConfig
from mvcn.experiment import prepare_splits, pretrain
from mvcn.features import SyntheticConfig, generate_synthetic

# Lines collected by the acceptance module, echoed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# A cut-down pipeline for unit tests that need a trained base classifier.
SMALL_SYNTH = SyntheticConfig(dim=16, n_base_classes=8, n_novel_classes=6,
                              samples_per_class=40, seed=7)


@pytest.fixture(scope="session")
def small_setup():
    cfg = PipelineConfig(n_novel_classes=6, query_per_class=10)
    cfg = dataclasses.replace(
        cfg, pretrain=dataclasses.replace(cfg.pretrain, iterations=1500),
        finetune=dataclasses.replace(cfg.finetune, iterations=100))
    ds = generate_synthetic(SMALL_SYNTH)
    splits = prepare_splits(ds, cfg)
    return cfg, splits, pretrain(splits, cfg)


@pytest.fixture(scope="session")
def full_setup():
    """Default configuration: d=32, 20 base and 20 novel classes, 100 samples each."""
    cfg = PipelineConfig()
    splits = prepare_splits(generate_synthetic(SyntheticConfig()), cfg)
    return cfg, splits, pretrain(splits, cfg)
