from fractions import Fraction

import pytest

from cool_off_solver.game import GameParams
from cool_off_solver.signals import SignalModel


@pytest.fixture(autouse=True)
def isolated_dirs(tmp_path, monkeypatch):
    """Keep config, log and lock files of every test inside its tmp_path."""
    monkeypatch.setenv("COS_CONFIG_DIR", str(tmp_path / "config"))
    monkeypatch.setenv("COS_LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.setenv("COS_CACHE_DIR", str(tmp_path / "cache"))


@pytest.fixture
def params():
    return GameParams(Fraction(1, 5), Fraction(9, 10), Fraction(1, 2))


@pytest.fixture
def binary_model():
    return SignalModel.from_rows(["g", "b"], ["7/10", "3/10"], ["3/10", "7/10"])


@pytest.fixture
def ternary_model():
    return SignalModel.from_rows(["g", "m", "b"], ["1/2", "3/10", "1/5"], ["1/5", "3/10", "1/2"])
