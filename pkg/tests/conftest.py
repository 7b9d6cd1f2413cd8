import numpy as np
import pytest

from sparsesr.numerics import set_default_dtype


@pytest.fixture(autouse=True)
def _float32_default():
    # Each test starts from the training dtype; precision() blocks inside
    # individual tests switch to float64 where verification demands it.
    set_default_dtype(np.float32)
    yield
    set_default_dtype(np.float32)
