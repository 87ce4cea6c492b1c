import numpy as np
import pytest

from ttabench.model.reference import ReferenceModel, build_reference_model


@pytest.fixture(autouse=True)
def _isolated_default_cache(tmp_path, monkeypatch) -> None:
    """Point the default output root at a temp dir so no test writes into the repo."""
    monkeypatch.setenv("TTABENCH_CACHE", str(tmp_path / "default_cache"))


@pytest.fixture
def model() -> ReferenceModel:
    """Untrained model with a fixed seed; cheap enough to build per test."""
    return build_reference_model(seed=3)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
