import logging

import numpy as np
import pytest

from deautoconv.grid import GridFn, GridSpec


@pytest.fixture(autouse=True)
def _reset_root_logger():
    # the CLI installs handlers bound to the captured streams of one test
    yield
    logging.getLogger().handlers.clear()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def random_fn(rng):
    def make(n: int, m: int) -> GridFn:
        return GridFn(spec=GridSpec.unit_cube(n, m), values=rng.standard_normal(m**n))

    return make
