from pathlib import Path

import numpy as np
import pytest

from mtdlab.detector import DetectorConfig, calibrate_threshold, train_autoencoder
from mtdlab.env import NORMAL, default_world, sample_rows
from mtdlab.fingerprint import default_schema

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def schema():
    return default_schema()


@pytest.fixture(scope="session")
def world(schema):
    """Default synthetic world (near-normal beurk)."""
    return default_world(schema, seed=7)


@pytest.fixture(scope="session")
def separable_world(schema):
    """World with every overlap knob at 1.0."""
    return default_world(schema, seed=7, overlap={"beurk": 1.0})


@pytest.fixture(scope="session")
def detector_result(world, schema):
    """A quick (reduced-epoch) calibrated detector for unit tests; the
    acceptance suite trains its own with the full published recipe."""
    rows = sample_rows(world, NORMAL, 1200, np.random.default_rng(42))
    result = train_autoencoder(rows, schema, DetectorConfig(epochs=30, seed=1))
    calibrate_threshold(result.model, result.heldout)
    return result


@pytest.fixture(scope="session")
def detector_model(detector_result):
    return detector_result.model
