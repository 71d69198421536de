import warnings

import numpy as np
import pytest

from photondot.geometry import QuasistaticWarning, WaveguideGeometry


@pytest.fixture
def hole_geom():
    return WaveguideGeometry.hole(1.0, 3.0, 20.0)


@pytest.fixture
def dot_geom():
    return WaveguideGeometry.dot(1.0, 2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(autouse=True)
def _quiet_quasistatic():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QuasistaticWarning)
        yield
