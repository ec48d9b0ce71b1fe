import numpy as np
import pytest

from dcim_core import get_model_path, load_model


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch, tmp_path):
    """Keep user config files and DCIM_* variables out of every test."""
    import os

    for var in list(os.environ):
        if var.startswith("DCIM_"):
            monkeypatch.delenv(var)
    monkeypatch.setenv("HOME", str(tmp_path / "home"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def two_node():
    return load_model(get_model_path("two_node"))


@pytest.fixture
def three_node():
    return load_model(get_model_path("three_node"))


@pytest.fixture
def dynamic_three_node():
    return load_model(get_model_path("dynamic_three_node"))


@pytest.fixture
def thirty_node():
    return load_model(get_model_path("thirty_node"))
