import numpy as np
import pytest

from bqlab.grid import Params, ScalarField, Y_FRAME, YBAR_FRAME, ODD, EVEN, build_grid


@pytest.fixture(scope="session")
def params64():
    return Params(alpha=0.1, n_beta=64, n_sigma=65)


@pytest.fixture(scope="session")
def grid64(params64):
    return build_grid(params64)


@pytest.fixture(scope="session")
def params128():
    return Params(alpha=0.1, n_beta=128, n_sigma=129)


@pytest.fixture(scope="session")
def grid128(params128):
    return build_grid(params128)


def gaussian_field(grid, frame, parity, angular, center=0.0, width=1.0,
                   amplitude=1.0):
    radial = amplitude * np.exp(-((grid.sigma - center) / width) ** 2)
    return ScalarField(grid, np.outer(radial, angular), frame, parity)


def odd_bump(grid, frame=YBAR_FRAME, center=0.0, width=1.0, amplitude=1.0):
    return gaussian_field(grid, frame, ODD, grid.sin_2b, center, width,
                          amplitude)


def even_bump(grid, frame=YBAR_FRAME, center=0.0, width=1.0, amplitude=1.0):
    return gaussian_field(grid, frame, EVEN, np.cos(2.0 * grid.beta),
                          center, width, amplitude)
