"""Configuration and the discrete domain.

The radial coordinate is sigma = ln y on a uniform, endpoint-inclusive grid,
so the scale-invariant derivative y d/dy is a plain d/dsigma.  The angular
coordinate beta uses midpoint (cell-centered) nodes in (0, pi/2); singular
weights such as sin(2 beta)^(-eta) are therefore only evaluated strictly
inside the interval.  One sigma grid serves two frames:

  y-frame     y = e^sigma            (vorticity side)
  ybar-frame  ybar = e^sigma,        (temperature side; physically
              rhobar = ybar^(1/alpha)  ybar = l2(s) * y, handled by log-shifts)

Fields carry a frame tag and a per-endpoint beta parity tag; the parity drives
ghost extension across beta = 0 and beta = pi/2 in the stencil code.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigError, FrameError, GridError

Y_FRAME = "y"
YBAR_FRAME = "ybar"

# Parity tags are (behavior across beta=0, behavior across beta=pi/2).
# A plain scalar that is odd in x3 and axisymmetric (e.g. the temperature)
# is odd at beta=0 but even at the axis; its r-gradient is odd at both ends.
ODD = ("odd", "odd")
EVEN = ("even", "even")
ODD_EVEN = ("odd", "even")
EVEN_ODD = ("even", "odd")
NONE = ("none", "none")

_FLIP = {"odd": "even", "even": "odd", "none": "none"}


def flip_parity(parity):
    """Parity of the plain beta-derivative of a field with this parity."""
    return (_FLIP[parity[0]], _FLIP[parity[1]])


@dataclass(frozen=True)
class Params:
    """All scalar configuration.

    ``eta`` and ``gamma`` are fixed by the model (99/100 and 1 + alpha/10) and
    exposed as read-only properties.  ``delta`` defaults to alpha when not
    given.
    """

    alpha: float = 0.1
    delta: float | None = None
    k: int = 4
    n_beta: int = 128
    n_sigma: int = 129
    sigma_min: float = -20.0
    sigma_max: float = 20.0
    l2_0: float = 1.0
    lambda_0: float = 1.0
    dt: float = 0.01
    s_end: float = 10.0
    tol_linear: float = 1e-10
    tol_quad: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.alpha):
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.alpha > 0.25:
            raise ConfigError(
                f"alpha={self.alpha} outside the supported run range (0, 0.25]")
        if self.delta is None:
            object.__setattr__(self, "delta", float(self.alpha))
        if self.k < 1 or int(self.k) != self.k:
            raise ConfigError(f"k must be an integer >= 1, got {self.k}")
        if self.n_beta < 16 or self.n_sigma < 16:
            raise ConfigError(
                f"node counts must be >= 16, got n_beta={self.n_beta}, "
                f"n_sigma={self.n_sigma}")
        if not (self.sigma_min < 0.0 < self.sigma_max):
            raise ConfigError(
                f"need sigma_min < 0 < sigma_max, got "
                f"[{self.sigma_min}, {self.sigma_max}]")
        if self.dt <= 0.0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.lambda_0 <= 0.0 or self.l2_0 <= 0.0:
            raise ConfigError("lambda_0 and l2_0 must be positive")

    @property
    def eta(self) -> float:
        return 99.0 / 100.0

    @property
    def gamma(self) -> float:
        return 1.0 + self.alpha / 10.0


@dataclass
class Grid:
    """Log-radial x angular tensor grid with quadrature weights.

    Quadrature is the product rule: trapezoid in sigma (endpoint-inclusive
    grid, fields vanish at the truncation ends) times midpoint in beta.
    """

    sigma: np.ndarray
    beta: np.ndarray
    h_sigma: float
    h_beta: float
    w_sigma: np.ndarray
    w_beta: float
    y: np.ndarray = dc_field(init=False)
    sin_b: np.ndarray = dc_field(init=False)
    cos_b: np.ndarray = dc_field(init=False)
    tan_b: np.ndarray = dc_field(init=False)
    sin_2b: np.ndarray = dc_field(init=False)
    cos_2b: np.ndarray = dc_field(init=False)

    def __post_init__(self):
        self.y = np.exp(self.sigma)
        self.sin_b = np.sin(self.beta)
        self.cos_b = np.cos(self.beta)
        self.tan_b = np.tan(self.beta)
        self.sin_2b = np.sin(2.0 * self.beta)
        self.cos_2b = np.cos(2.0 * self.beta)

    @property
    def n_sigma(self) -> int:
        return self.sigma.size

    @property
    def n_beta(self) -> int:
        return self.beta.size

    @property
    def shape(self) -> tuple[int, int]:
        return (self.sigma.size, self.beta.size)

    @property
    def sigma_min(self) -> float:
        return float(self.sigma[0])

    @property
    def sigma_max(self) -> float:
        return float(self.sigma[-1])

    def rho_bar(self, alpha: float) -> np.ndarray:
        """rhobar = ybar^(1/alpha) on the congruent ybar grid."""
        return np.exp(self.sigma / alpha)

    def ybar(self, l2: float = 1.0) -> np.ndarray:
        return l2 * self.y

    def field(self, data, frame: str, parity) -> "ScalarField":
        return ScalarField(self, np.asarray(data, dtype=float), frame, parity)

    def zeros(self, frame: str, parity) -> "ScalarField":
        return ScalarField(self, np.zeros(self.shape), frame, parity)

    def descriptor(self) -> dict:
        return {
            "n_sigma": self.n_sigma,
            "n_beta": self.n_beta,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
        }


@dataclass
class ScalarField:
    """Real values over the grid, tagged with frame and beta parity."""

    grid: Grid
    data: np.ndarray
    frame: str
    parity: tuple[str, str]

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != self.grid.shape:
            raise GridError(
                f"field shape {self.data.shape} != grid shape {self.grid.shape}")
        if isinstance(self.parity, str):
            self.parity = (self.parity, self.parity)
        if self.frame not in (Y_FRAME, YBAR_FRAME):
            raise FrameError(f"unknown frame {self.frame!r}")
        if not np.all(np.isfinite(self.data)):
            raise GridError("field contains non-finite entries")

    def like(self, data) -> "ScalarField":
        """Same tags, new values."""
        return ScalarField(self.grid, data, self.frame, self.parity)

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.data.copy(), self.frame, self.parity)

    def retag(self, frame=None, parity=None) -> "ScalarField":
        return ScalarField(self.grid, self.data,
                           frame if frame is not None else self.frame,
                           parity if parity is not None else self.parity)


def build_grid(params: Params) -> Grid:
    """Midpoint beta nodes in (0, pi/2) and uniform endpoint-inclusive sigma.

    Rejects node counts below 16 (already enforced by Params) and
    non-uniformizable extents.
    """
    if params.sigma_max <= params.sigma_min:
        raise GridError("sigma_max must exceed sigma_min")
    n_s, n_b = params.n_sigma, params.n_beta
    h_sigma = (params.sigma_max - params.sigma_min) / (n_s - 1)
    sigma = params.sigma_min + h_sigma * np.arange(n_s)
    h_beta = (np.pi / 2.0) / n_b
    beta = (np.arange(n_b) + 0.5) * h_beta
    w_sigma = np.full(n_s, h_sigma)
    w_sigma[0] = w_sigma[-1] = 0.5 * h_sigma
    grid = Grid(sigma=sigma, beta=beta, h_sigma=h_sigma, h_beta=h_beta,
                w_sigma=w_sigma, w_beta=h_beta)
    if np.min(grid.sin_2b) <= 0.0:
        raise GridError("beta nodes touch the singular endpoints")
    return grid
