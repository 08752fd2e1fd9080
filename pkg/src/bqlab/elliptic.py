"""Self-similar Biot-Savart solver and velocity functionals.

The stream-function profile solves

  -alpha^2 y^2 Phi_yy - alpha (5 + alpha) y Phi_y - Phi_bb
      + d_b(tan b Phi) - 6 Phi  =  source,

discretized with 2nd-order centered differences on the log-radial grid
(y d/dy = d/dsigma, y^2 d^2/dy^2 = d^2/dsigma^2 - d/dsigma), Dirichlet-zero
across both beta ends via odd ghost folding, and Dirichlet rows at the radial
truncation ends.  The product tan(b) Phi is expanded as tan b d_b + sec^2 b
at midpoints, so no singular product is ever differenced.

Radial boundary data: the solution of the untruncated problem tends to
sin(2b) L12(source)(y) / (4 alpha) as y -> 0 (the angular factor sin(2b) is
in the kernel of the angular part), so the left Dirichlet row carries that
matched value rather than zero -- with plain zero the O(1) mismatch leaks an
oscillatory discrete boundary layer into the interior.  At the far end the
tail integral itself vanishes and the matched value degenerates to zero.

Two solve routes are provided and cross-validated: a direct solve, and the
production split route in which the singular part sin(2b) s(y) / (4 alpha)
(with s = L12(source) by quadrature) is peeled off semi-analytically --
using s' = -m, s'' = -m' for the moment m(sigma) of the source, and the
exact kernel identity for sin(2b) -- and only the fast-decaying remainder is
solved for with zero boundary data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .calculus import (D_BETA, D_RHOBAR, D_SIGMA, PARTIAL_BETA,
                       apply_derivative, _d_sigma_data, _k_moment,
                       _gregory_tail, l12_radial)
from .errors import FrameError, SolveError
from .grid import (EVEN, EVEN_ODD, Grid, ODD, ODD_EVEN, Params, ScalarField,
                   Y_FRAME, YBAR_FRAME)

log = logging.getLogger(__name__)


@dataclass
class EllipticOperator:
    """Assembled sparse operator with a reusable LU factorization."""

    grid: Grid
    alpha: float
    matrix: sp.csc_matrix
    lu: object

    def apply(self, data: np.ndarray) -> np.ndarray:
        return (self.matrix @ data.ravel()).reshape(self.grid.shape)


def build_operator(grid: Grid, alpha: float) -> EllipticOperator:
    """Assemble and factor the stream-function operator for one (alpha, grid).

    Row/column index is i * n_beta + j (sigma major).  Rows for the two
    radial end planes are identity rows; their right-hand side carries the
    Dirichlet data.
    """
    ns, nb = grid.shape
    h_s, h_b = grid.h_sigma, grid.h_beta
    n = ns * nb

    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    a = alpha
    c_ss = -a * a / h_s ** 2                 # coefficient of second sigma diff
    c_s = -5.0 * a / (2.0 * h_s)             # coefficient of first sigma diff
    tan_b = grid.tan_b
    sec2 = 1.0 / grid.cos_b ** 2
    for i in range(ns):
        for j in range(nb):
            r = i * nb + j
            if i == 0 or i == ns - 1:
                add(r, r, 1.0)
                continue
            diag = -2.0 * c_ss + 2.0 / h_b ** 2 + sec2[j] - 6.0
            add(r, r - nb, c_ss - c_s)
            add(r, r + nb, c_ss + c_s)
            up = -1.0 / h_b ** 2 + tan_b[j] / (2.0 * h_b)
            dn = -1.0 / h_b ** 2 - tan_b[j] / (2.0 * h_b)
            if j == 0:
                diag -= dn                    # odd ghost: Phi(-h/2) = -Phi_0
            else:
                add(r, r - 1, dn)
            if j == nb - 1:
                diag -= up                    # odd ghost past pi/2
            else:
                add(r, r + 1, up)
            add(r, r, diag)

    matrix = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    try:
        lu = splu(matrix)
    except RuntimeError as exc:
        norm1 = abs(matrix).sum(axis=0).max()
        raise SolveError(
            f"elliptic factorization failed (1-norm ~ {norm1:.3e}): {exc}"
        ) from exc
    return EllipticOperator(grid=grid, alpha=alpha, matrix=matrix, lu=lu)


def _boundary_rows(source: ScalarField, op: EllipticOperator,
                   matched: bool) -> tuple[np.ndarray, np.ndarray]:
    """Dirichlet data at the radial ends: sin(2b) L12(source)(y_end)/(4 alpha).

    The end rows of the source are excluded from the tail functional: they
    hold Dirichlet data, not source values, whenever the source came from an
    operator application.  For decaying physical sources the exclusion is a
    truncation-level change.
    """
    grid = op.grid
    if not matched:
        z = np.zeros(grid.n_beta)
        return z, z
    interior = source.like(source.data.copy())
    interior.data[0] = 0.0
    interior.data[-1] = 0.0
    s = l12_radial(interior)
    coef = grid.sin_2b / (4.0 * op.alpha)
    return s[0] * coef, s[-1] * coef


def solve_phi(source: ScalarField, op: EllipticOperator, params: Params,
              matched_bc: bool = True) -> ScalarField:
    """Direct solve for the stream-function profile of one source field."""
    if source.frame != Y_FRAME:
        raise FrameError("solve_phi expects a y-frame source")
    grid = op.grid
    b = source.data.copy()
    b[0], b[-1] = _boundary_rows(source, op, matched_bc)
    x = op.lu.solve(b.ravel())
    if not np.all(np.isfinite(x)):
        raise SolveError("elliptic solve produced non-finite values")
    res = op.matrix @ x - b.ravel()
    scale = max(float(np.linalg.norm(b)), 1e-300)
    rel = float(np.linalg.norm(res)) / scale
    if rel > params.tol_linear:
        raise SolveError(f"elliptic residual {rel:.3e} above tol_linear "
                         f"{params.tol_linear:.3e}")
    return ScalarField(grid, x.reshape(grid.shape), Y_FRAME, ODD)


@dataclass
class DecomposedSolution:
    """Split stream function: singular radial profile plus regular remainder."""

    s_of_y: np.ndarray
    phi_bar: ScalarField
    phi: ScalarField


def _angular_kernel_residual(grid: Grid) -> np.ndarray:
    """Discrete angular operator applied to sin(2b) with odd folding.

    Analytically zero (sin(2b) spans the kernel of -d_bb + d_b(tan b .) - 6);
    the 2nd-order midpoint stencil leaves an O(h) residual at the node next
    to pi/2 where tan(b) ~ 2/h, which the split solve must carry explicitly
    to stay consistent with the assembled matrix.
    """
    s2 = grid.sin_2b
    h_b = grid.h_beta
    lo = np.concatenate([[-s2[0]], s2[:-1]])      # odd ghost below beta=0
    hi = np.concatenate([s2[1:], [-s2[-1]]])      # odd ghost past pi/2
    return (-(lo - 2.0 * s2 + hi) / h_b ** 2
            + grid.tan_b * (hi - lo) / (2.0 * h_b)
            + (1.0 / grid.cos_b ** 2 - 6.0) * s2)


def decompose_solve(source: ScalarField, op: EllipticOperator,
                    params: Params) -> DecomposedSolution:
    """Split solve: peel off sin(2b) L12(source)(y) / (4 alpha) analytically.

    The radial action on the singular part reduces to (alpha^2 m' +
    5 alpha m) / (4 alpha) times sin(2b) because s' = -m exactly for the
    tail integral; the angular action is the discrete kernel residual of
    sin(2b) (zero in the continuum).  The remainder solve uses zero
    Dirichlet data at the truncation ends.
    """
    if source.frame != Y_FRAME:
        raise FrameError("decompose_solve expects a y-frame source")
    grid = op.grid
    a = op.alpha
    m = _k_moment(source)
    s = _gregory_tail(m, grid.h_sigma)
    mp = _d_sigma_data(m[:, None], grid.h_sigma)[:, 0]
    sing = np.outer(s, grid.sin_2b) / (4.0 * a)
    radial = (a * a * mp + 5.0 * a * m) / (4.0 * a)
    remainder = (source.data - np.outer(radial, grid.sin_2b)
                 - np.outer(s / (4.0 * a), _angular_kernel_residual(grid)))
    b = remainder.copy()
    b[0] = 0.0
    b[-1] = 0.0
    x = op.lu.solve(b.ravel())
    if not np.all(np.isfinite(x)):
        raise SolveError("remainder solve produced non-finite values")
    phi_bar = ScalarField(grid, x.reshape(grid.shape), Y_FRAME, ODD)
    phi = ScalarField(grid, sing + phi_bar.data, Y_FRAME, ODD)
    return DecomposedSolution(s_of_y=s, phi_bar=phi_bar, phi=phi)


@dataclass
class VelocityPack:
    """All velocity functionals derived from one stream function."""

    u: ScalarField
    v: ScalarField
    rcal: ScalarField
    lam1: ScalarField
    lam2: ScalarField
    lam3: ScalarField
    lam4: ScalarField
    tan_phi_max: float


def velocity_pack(phi: ScalarField, params: Params,
                  tan_guard: float = 1e8) -> VelocityPack:
    """Evaluate U, V, R and the four gradient functionals of one Phi.

    All built from cached 4th-order derivatives; alpha D_R is alpha
    d/dsigma on the log grid.  The midpoint grid keeps tan(beta) finite; the
    magnitude of tan(beta) Phi is still reported against a configured guard.
    """
    g = phi.grid
    a = params.alpha
    dr = apply_derivative(phi, D_SIGMA)
    dr = dr.like(a * dr.data)                       # alpha D_R Phi
    d2r = apply_derivative(dr, D_SIGMA)
    d2r = d2r.like(a * d2r.data)                    # (alpha D_R)^2 Phi
    db = apply_derivative(phi, PARTIAL_BETA)
    dbb = apply_derivative(db, PARTIAL_BETA)
    drb = apply_derivative(db, D_SIGMA)
    drb = drb.like(a * drb.data)                    # alpha D_R d_b Phi

    sb, cb, tb = g.sin_b[None, :], g.cos_b[None, :], g.tan_b[None, :]
    s2, c2 = g.sin_2b[None, :], g.cos_2b[None, :]
    sc = sb * cb
    p, pr, prr, pb, pbb, prb = (phi.data, dr.data, d2r.data, db.data,
                                dbb.data, drb.data)

    tan_phi = tb * p
    tan_phi_max = float(np.abs(tan_phi).max())
    if tan_phi_max > tan_guard:
        log.warning("velocity_pack: |tan(beta) Phi| reached %.3e", tan_phi_max)

    u = -3.0 * p - pr
    v = pb - tan_phi
    rcal = 2.0 * tan_phi + tb * pr + pb
    lam1 = (sc * prr + c2 * prb - sc * pbb + s2 * pr + c2 * pb)
    lam2 = (-cb ** 2 * prr + s2 * prb - sb ** 2 * pbb
            - 2.0 * (1.0 + cb ** 2) * pr + (tb + s2) * pb
            + (tb ** 2 - 3.0) * p)
    lam3 = (sb ** 2 * prr + s2 * prb + cb ** 2 * pbb
            + (1.0 + 2.0 * sb ** 2) * pr + s2 * pb + 2.0 * p)
    lam4 = (-sc * prr - c2 * prb + sc * pbb - (tb + s2) * pr
            - 2.0 * cb ** 2 * pb - 2.0 * tan_phi)

    fr = phi.frame
    mk = lambda d, par: ScalarField(g, d, fr, par)
    return VelocityPack(
        u=mk(u, ODD), v=mk(v, EVEN), rcal=mk(rcal, EVEN),
        lam1=mk(lam1, EVEN), lam2=mk(lam2, ODD),
        lam3=mk(lam3, ODD), lam4=mk(lam4, EVEN),
        tan_phi_max=tan_phi_max)


def zero_velocity_pack(grid: Grid, frame: str = Y_FRAME) -> VelocityPack:
    z = lambda par: ScalarField(grid, np.zeros(grid.shape), frame, par)
    return VelocityPack(u=z(ODD), v=z(EVEN), rcal=z(EVEN), lam1=z(EVEN),
                        lam2=z(ODD), lam3=z(ODD), lam4=z(EVEN),
                        tan_phi_max=0.0)


def shift_pack(vel: VelocityPack, shift: float, frame: str) -> VelocityPack:
    """Resample every functional at sigma + shift (frame coupling helper)."""
    from .calculus import sigma_shift

    mv = lambda f: sigma_shift(f, shift, frame=frame)
    return VelocityPack(u=mv(vel.u), v=mv(vel.v), rcal=mv(vel.rcal),
                        lam1=mv(vel.lam1), lam2=mv(vel.lam2),
                        lam3=mv(vel.lam3), lam4=mv(vel.lam4),
                        tan_phi_max=vel.tan_phi_max)


def physical_velocity(phi: ScalarField, modulation, params: Params):
    """Physical (u_r, u_3) on the (rho, beta) grid.

    Undoes the rescaling: the stored profile is lambda times the physical
    stream profile, and the physical radial coordinate is rho = R^(1/alpha)
    with R = lambda^(1+delta) y / mu.  With ``modulation=None`` the map is the
    identity (lambda = mu = 1).
    """
    g = phi.grid
    a = params.alpha
    if modulation is None:
        lam, mu = 1.0, 1.0
    else:
        lam, mu = modulation.lam, modulation.mu
    dr = apply_derivative(phi, D_SIGMA)
    db = apply_derivative(phi, PARTIAL_BETA)
    sb, cb = g.sin_b[None, :], g.cos_b[None, :]
    log_rho = ((1.0 + params.delta) * np.log(lam) + g.sigma - np.log(mu)) / a
    if log_rho.max() > 700.0:
        raise SolveError("physical radius overflows float64; narrow the "
                         "radial domain or increase alpha")
    rho = np.exp(log_rho)[:, None]
    base_r = 2.0 * sb * phi.data + a * sb * dr.data + cb * db.data
    base_3 = (-phi.data / cb - 2.0 * cb * phi.data - a * cb * dr.data
              + sb * db.data)
    u_r = ScalarField(g, rho * base_r / lam, phi.frame, EVEN_ODD)
    u_3 = ScalarField(g, rho * base_3 / lam, phi.frame, ODD_EVEN)
    return u_r, u_3
