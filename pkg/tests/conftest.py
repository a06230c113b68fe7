import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "lib"))
sys.path.insert(0, str(ROOT))

from core import make_grid, sample_brownian  # noqa: E402
from lq import LqParams  # noqa: E402
from problems import lq_setup, smooth_setup  # noqa: E402


@pytest.fixture
def grid():
    """T=1, delta=0.5, h=1/8"""
    return make_grid(1.0, 0.5, 4)


@pytest.fixture
def ens(grid):
    return sample_brownian(grid, 400, 123)


@pytest.fixture
def lq_params():
    return LqParams()


@pytest.fixture
def lq_pair(lq_params, grid, ens):
    return lq_setup(lq_params).pair(grid, ens)


@pytest.fixture
def smooth():
    return smooth_setup()


@pytest.fixture
def write_config(tmp_path):
    def write(text):
        path = tmp_path / "config.yaml"
        path.write_text(text)
        return str(path)

    return write
