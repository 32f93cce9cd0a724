"""Pytest configuration and fixtures for rydbergfdm tests."""

from __future__ import annotations

import numpy as np
import pytest

from rydbergfdm.config import (
    AtomParams,
    CodecConfig,
    NetworkArchitecture,
    RunConfig,
    TransmissionModel,
)
from rydbergfdm.dataset import generate_dataset, split
from rydbergfdm.network.model import DecoderNetwork
from rydbergfdm.network.training import fit_model


def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line("markers", "integration: marks tests as integration tests")
    config.addinivalue_line("markers", "unit: marks tests as unit tests")
    config.addinivalue_line("markers", "acceptance: long end-to-end reproduction runs")
    config.addinivalue_line("markers", "benchmark: marks tests as performance benchmarks")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def physics_defaults():
    """
    Default forward-model parameters.

    Returns a dictionary containing:
    - 'atom': AtomParams with the documented defaults
    - 'model': TransmissionModel with contrast 1
    - 'codec': 4-bin, 2 kHz CodecConfig
    """
    return {
        "atom": AtomParams(),
        "model": TransmissionModel(),
        "codec": CodecConfig(),
    }


@pytest.fixture
def tiny_arch():
    return NetworkArchitecture(filters=2, kernel_len=4, pool=2, hidden=4)


@pytest.fixture
def tiny_network(tiny_arch, rng):
    """Randomly initialised decoder on 32-sample inputs with 4 output bins."""
    return DecoderNetwork.initialize(tiny_arch, input_len=32, n_bins=4, rng=rng)


@pytest.fixture(scope="session")
def small_config():
    """A RunConfig scaled down so full pipelines finish in seconds."""
    return RunConfig().apply_overrides(
        {
            "sampling.n": 128,
            "dataset.n_samples_per_class": 12,
            "train.epochs": 3,
            "train.batch_size": 16,
            "network.filters": 4,
            "network.kernel_len": 8,
            "network.pool": 4,
            "network.hidden": 6,
            "eval.repeats": 2,
            "eval.sigmas": [0.0, 0.1],
            "eval.fit_spectra": 4,
            "fit.max_iterations": 200,
        }
    )


@pytest.fixture(scope="session")
def small_dataset(small_config):
    """96 records: 8 classes x 12 spectra of 128 samples."""
    return generate_dataset(small_config.dataset_spec())


@pytest.fixture(scope="session")
def trained_small_model(small_config, small_dataset):
    """
    Decoder trained on fold 0 of the small dataset.

    Returns a dictionary containing:
    - 'model': the TrainedModel (network and loss curves)
    - 'split': the Split it was trained from
    """
    folds = split(small_dataset, small_config.split, small_config.seed)
    train, val = folds.train_val(0)
    model = fit_model(train, val, small_config.train, small_config.network)
    return {"model": model, "split": folds}
