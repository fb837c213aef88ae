import numpy as np
import pytest

from wgansing.conditioning import ConditioningConfig
from wgansing.data import load_corpus, make_toy_corpus
from wgansing.model import ModelConfig, Networks

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cond_cfg():
    return ConditioningConfig(n_phonemes=5, n_singers=3, f0_min=50.0, f0_max=1000.0,
                              phoneme_channels=4, f0_channels=3, singer_channels=2, noise_channels=2)


@pytest.fixture
def small_model_cfg(small_cond_cfg):
    return ModelConfig(small_cond_cfg, block_size=64, width_multiplier=0.125)


@pytest.fixture
def small_nets(small_model_cfg):
    return Networks.build(small_model_cfg, seed=7)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_corpus")
    make_toy_corpus(root, seed=3, n_singers=2, n_phonemes=6, n_tracks=4, n_frames=160, n_holdout=1)
    return root


@pytest.fixture(scope="session")
def tiny_dataset(tiny_corpus):
    return load_corpus(tiny_corpus)
