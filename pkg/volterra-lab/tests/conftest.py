from __future__ import annotations

from pathlib import Path

import pytest

from app.model import ExponentialVol, ModelConfig, MonomialPayoff, QuadraticPayoff, ShiftedLinearVol


@pytest.fixture(autouse=True)
def lab_data_dir(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> Path:
    root = tmp_path / "data"
    monkeypatch.setenv("VOLTERRA_LAB_DATA_DIR", str(root))
    monkeypatch.setenv("VOLTERRA_LAB_THREADS", "2")
    return root


@pytest.fixture
def quadratic_model() -> ModelConfig:
    return ModelConfig(H=0.3, rho=0.0, zeta=0.0, vol=ExponentialVol(nu=0.5), payoff=QuadraticPayoff())


@pytest.fixture
def cubic_model() -> ModelConfig:
    return ModelConfig(H=0.3, rho=-0.7, zeta=0.0, vol=ExponentialVol(nu=0.5), payoff=MonomialPayoff(n=3))


@pytest.fixture
def constant_vol_model() -> ModelConfig:
    return ModelConfig(H=0.3, rho=-0.5, zeta=0.0, vol=ShiftedLinearVol(a=0.4, b=0.0), payoff=QuadraticPayoff())
