"""
Shared pytest fixtures for geoward testing.

Tiny networks, synthetic datasets, a trained desk network, and environment
fixtures for configuration tests.
"""

import pytest

from geoward.config import config
from geoward.model.dataset import synth_gaussians
from geoward.model.network import NetworkSpec, init_weights
from geoward.model.training import TrainConfig, train


# Environment Variable Fixtures
@pytest.fixture
def geoward_env(monkeypatch):
    """Explicit, non-default geoward settings."""
    monkeypatch.setenv("GEOWARD_THREADS", "3")
    monkeypatch.setenv("GEOWARD_LOG_LEVEL", "DEBUG")
    monkeypatch.setenv("GEOWARD_CONSOLE_OUTPUT", "false")
    monkeypatch.setenv("GEOWARD_METRIC_CAP", "1200")
    monkeypatch.setenv("GEOWARD_VULNERABLE_THRESHOLD", "0.01")
    monkeypatch.setenv("GEOWARD_GAUSSIAN_CONVENTION", "printed")
    monkeypatch.setenv("GEOWARD_METRIC_BATCH", "16")
    monkeypatch.setenv("GEOWARD_VERIFY_RESIDUALS", "false")


@pytest.fixture
def minimal_env(monkeypatch):
    """Clear every geoward variable so defaults apply."""
    for var in [
        "GEOWARD_THREADS", "GEOWARD_LOG_LEVEL", "GEOWARD_CONSOLE_OUTPUT", "GEOWARD_METRIC_CAP",
        "GEOWARD_VULNERABLE_THRESHOLD", "GEOWARD_GAUSSIAN_CONVENTION", "GEOWARD_METRIC_BATCH",
        "GEOWARD_VERIFY_RESIDUALS",
    ]:
        monkeypatch.delenv(var, raising=False)


@pytest.fixture
def restore_config():
    """Undo CLI overrides applied to the global config."""
    saved = dict(vars(config))
    yield config
    vars(config).clear()
    vars(config).update(saved)


# Network Fixtures
@pytest.fixture
def tiny_spec():
    return NetworkSpec(layer_sizes=(2, 4, 3))


@pytest.fixture
def tiny_weights(tiny_spec):
    return init_weights(tiny_spec, seed=1)


@pytest.fixture
def affine_spec():
    """Single affine layer with identity output: its metric does not depend on w."""
    return NetworkSpec(layer_sizes=(3, 2), output_mode="identity")


@pytest.fixture
def blobs():
    """Three well-separated Gaussian classes in the plane."""
    return synth_gaussians(classes=3, dim=2, per_class=30, separation=6.0, seed=0)


@pytest.fixture(scope="session")
def trained_desk():
    """A 2-8-3 tanh network trained on separated blobs: (spec, weights, dataset)."""
    d = synth_gaussians(classes=3, dim=2, per_class=40, separation=6.0, seed=3)
    spec = NetworkSpec(layer_sizes=(2, 8, 3))
    w, _ = train(spec, d, TrainConfig(epochs=60, batch_size=16, learning_rate=0.2, seed=0))
    return spec, w, d
