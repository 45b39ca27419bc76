import numpy as np
import pytest

from boxtex.atlas import build_layout
from boxtex.geom import template_box


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tpl4():
    return template_box(4)


@pytest.fixture(scope="session")
def layout16():
    return build_layout(16, 4)


@pytest.fixture(scope="session")
def layout32():
    return build_layout(32, 4)
