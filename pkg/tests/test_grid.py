import numpy as np
import pytest

from bqlab.errors import ConfigError, GridError
from bqlab.grid import (EVEN, ODD, Params, ScalarField, Y_FRAME, YBAR_FRAME,
                        build_grid, flip_parity)


def test_beta_nodes_are_midpoints():
    p = Params(alpha=0.1, n_beta=16, n_sigma=17)
    g = build_grid(p)
    h = (np.pi / 2) / 16
    assert np.allclose(g.beta, (np.arange(16) + 0.5) * h)
    # spec example at n_beta=4 scaled up: first nodes pi/64, 3pi/64, ...
    assert np.isclose(g.beta[0], np.pi / 64)
    assert np.isclose(g.beta[1], 3 * np.pi / 64)


def test_sigma_endpoint_inclusive_uniform():
    p = Params(alpha=0.1, n_beta=16, n_sigma=17, sigma_min=-1.0, sigma_max=1.0)
    g = build_grid(p)
    assert np.isclose(g.sigma[0], -1.0) and np.isclose(g.sigma[-1], 1.0)
    assert np.allclose(np.diff(g.sigma), g.h_sigma)
    assert np.allclose(g.y, np.exp(g.sigma))
    assert np.all(np.diff(g.y) > 0)


def test_frame_roundtrip():
    p = Params(alpha=0.1, n_beta=16, n_sigma=33)
    g = build_grid(p)
    l2 = 0.375
    ybar = l2 * g.y
    rho_bar = ybar ** (1.0 / p.alpha)
    back = np.log(rho_bar ** p.alpha / l2)
    assert np.max(np.abs(back - g.sigma) / np.maximum(np.abs(g.sigma), 1)) < 1e-13


def test_rho_bar_identity_point():
    # alpha=0.1, l2=1, y=1 -> rho_bar = 1
    p = Params(alpha=0.1, n_beta=16, n_sigma=17, sigma_min=-2, sigma_max=2)
    g = build_grid(p)
    i = np.argmin(np.abs(g.sigma))
    assert np.isclose(g.rho_bar(p.alpha)[i], 1.0)


def test_singular_weights_finite():
    p = Params(alpha=0.1, n_beta=64, n_sigma=65)
    g = build_grid(p)
    assert np.min(g.sin_2b) > 0
    assert np.all(np.isfinite(g.sin_2b ** (-p.eta)))
    assert np.all(np.isfinite(g.sin_2b ** (-p.gamma)))


def test_params_invariants():
    p = Params(alpha=0.2)
    assert p.eta == 99 / 100
    assert p.gamma == 1 + 0.2 / 10
    assert p.delta == 0.2  # default tracks alpha
    with pytest.raises(ConfigError):
        Params(alpha=-0.1)
    with pytest.raises(ConfigError):
        Params(n_beta=8)
    with pytest.raises(ConfigError):
        Params(sigma_min=1.0, sigma_max=2.0)
    with pytest.raises(ConfigError):
        Params(dt=0.0)
    with pytest.raises(ConfigError):
        Params(k=0)


def test_field_validation(grid64):
    with pytest.raises(GridError):
        ScalarField(grid64, np.zeros((3, 3)), Y_FRAME, ODD)
    bad = np.zeros(grid64.shape)
    bad[0, 0] = np.nan
    with pytest.raises(GridError):
        ScalarField(grid64, bad, Y_FRAME, ODD)
    f = grid64.zeros(YBAR_FRAME, "odd")
    assert f.parity == ("odd", "odd")


def test_flip_parity():
    assert flip_parity(ODD) == EVEN
    assert flip_parity(("odd", "even")) == ("even", "odd")
