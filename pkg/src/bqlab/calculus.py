"""Discrete differential operators and weighted functionals.

Derivatives are 4th-order centered stencils.  In sigma the two nodes next to
each truncation end fall back to one-sided 5-point stencils (correct for
smooth tails, harmless for decaying ones).  In beta, stencils see two ghost
layers built from the field's parity tags, so midpoint nodes never touch the
interval endpoints.

Functionals:

  l12       tail integral of f * K(beta) over dz/z, K = 3 sin b cos^2 b
  hk_norm   weighted Sobolev norm on the y-frame, radial weight (1+y)^2/y^2,
            angular weights sin(2b)^(-eta/2) (pure radial-derivative terms)
            and sin(2b)^(-gamma/2) (terms with >= 1 angular derivative)
  w_inner   the three temperature-side inner products on the ybar-frame,
            radial weights rhobar^2 (W1, W3) and rhobar^eta (W2)
  energy_xye  the aggregates X, Y, E built from those norms

All reductions use a fixed summation order, so results are reproducible
bit-for-bit for identical inputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import FrameError, ParityError
from .grid import (EVEN, Grid, Params, ScalarField, Y_FRAME, YBAR_FRAME,
                   flip_parity)

log = logging.getLogger(__name__)

D_SIGMA = "D_SIGMA"
PARTIAL_BETA = "PARTIAL_BETA"
D_BETA = "D_BETA"
D_RHOBAR = "D_RHOBAR"

W1, W2, W3 = "W1", "W2", "W3"

# 4th-order one-sided first-derivative stencils (node 0 and node 1 of five).
_EDGE0 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_EDGE1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0

_SIGN = {"odd": -1.0, "even": 1.0}


def _d_sigma_data(u: np.ndarray, h: float) -> np.ndarray:
    """4th-order d/dsigma along axis 0, one-sided at the truncation ends."""
    out = np.empty_like(u)
    out[2:-2] = (u[:-4] - 8.0 * u[1:-3] + 8.0 * u[3:-1] - u[4:]) / (12.0 * h)
    head = u[:5]
    tail = u[-5:]
    out[0] = np.tensordot(_EDGE0, head, axes=(0, 0)) / h
    out[1] = np.tensordot(_EDGE1, head, axes=(0, 0)) / h
    out[-1] = -np.tensordot(_EDGE0, tail[::-1], axes=(0, 0)) / h
    out[-2] = -np.tensordot(_EDGE1, tail[::-1], axes=(0, 0)) / h
    return out


def _beta_extend(u: np.ndarray, parity: tuple[str, str]) -> np.ndarray:
    """Two ghost layers at each beta end from the parity reflection."""
    if parity[0] == "none" or parity[1] == "none":
        raise ParityError(
            "beta derivative requested on a field with parity 'none'")
    s0 = _SIGN[parity[0]]
    s1 = _SIGN[parity[1]]
    left = s0 * u[:, 1::-1]          # columns [1, 0] -> ghosts at -3h/2, -h/2
    right = s1 * u[:, :-3:-1]        # columns [n-1, n-2] mirrored past pi/2
    return np.concatenate([left, u, right], axis=1)


def _partial_beta_data(u: np.ndarray, h: float, parity) -> np.ndarray:
    e = _beta_extend(u, parity)
    return (e[:, :-4] - 8.0 * e[:, 1:-3] + 8.0 * e[:, 3:-1] - e[:, 4:]) / (12.0 * h)


def apply_derivative(f: ScalarField, op: str, alpha: float | None = None) -> ScalarField:
    """One scale-invariant or angular derivative.

    D_SIGMA is y d/dy = ybar d/dybar on the log grid; D_RHOBAR = alpha *
    D_SIGMA; D_BETA = sin(2 beta) d/dbeta.  Parity tags propagate (D_SIGMA,
    D_BETA preserve them, PARTIAL_BETA flips both ends).
    """
    g = f.grid
    if op == D_SIGMA:
        return ScalarField(g, _d_sigma_data(f.data, g.h_sigma), f.frame, f.parity)
    if op == D_RHOBAR:
        if alpha is None:
            raise ValueError("D_RHOBAR requires alpha")
        return ScalarField(g, alpha * _d_sigma_data(f.data, g.h_sigma),
                           f.frame, f.parity)
    if op == PARTIAL_BETA:
        return ScalarField(g, _partial_beta_data(f.data, g.h_beta, f.parity),
                           f.frame, flip_parity(f.parity))
    if op == D_BETA:
        pb = _partial_beta_data(f.data, g.h_beta, f.parity)
        return ScalarField(g, g.sin_2b[None, :] * pb, f.frame, f.parity)
    raise ValueError(f"unknown derivative op {op!r}")


def d_sigma(f: ScalarField) -> ScalarField:
    return apply_derivative(f, D_SIGMA)


def partial_beta(f: ScalarField) -> ScalarField:
    return apply_derivative(f, PARTIAL_BETA)


def _upwind_pick(lo: np.ndarray, hi: np.ndarray, wind: np.ndarray):
    return np.where(wind >= 0.0, lo, hi)


def upwind_d_sigma(f: ScalarField, wind: np.ndarray) -> np.ndarray:
    """3rd-order upwind-biased d/dsigma for advection terms.

    Zero ghosts at the truncation ends (decaying fields); the bias follows
    the sign of the advecting wind so the leading truncation term is
    dissipative at grid scale.
    """
    g = f.grid
    h = g.h_sigma
    u = f.data
    e = np.concatenate([np.zeros((2, g.n_beta)), u,
                        np.zeros((2, g.n_beta))], axis=0)
    c = e[2:-2]
    lo = (2.0 * e[3:-1] + 3.0 * c - 6.0 * e[1:-3] + e[:-4]) / (6.0 * h)
    hi = -(2.0 * e[1:-3] + 3.0 * c - 6.0 * e[3:-1] + e[4:]) / (6.0 * h)
    return _upwind_pick(lo, hi, wind)


def upwind_partial_beta(f: ScalarField, wind: np.ndarray) -> np.ndarray:
    """3rd-order upwind-biased d/dbeta using the parity ghost extension."""
    g = f.grid
    h = g.h_beta
    e = _beta_extend(f.data, f.parity)
    c = e[:, 2:-2]
    lo = (2.0 * e[:, 3:-1] + 3.0 * c - 6.0 * e[:, 1:-3] + e[:, :-4]) / (6.0 * h)
    hi = -(2.0 * e[:, 1:-3] + 3.0 * c - 6.0 * e[:, 3:-1] + e[:, 4:]) / (6.0 * h)
    return _upwind_pick(lo, hi, wind)


def laplace_tilde(f: ScalarField, alpha: float) -> ScalarField:
    """alpha^2 D_ybar^2 f + alpha D_ybar f + (1/cos b) d_b(cos b d_b f).

    This is ybar^(2/alpha) times the full Laplacian of an axisymmetric,
    swirl-free scalar; the angular part expands to d_bb f - tan(b) d_b f.
    """
    if f.frame != YBAR_FRAME:
        raise FrameError("laplace_tilde expects a ybar-frame field")
    g = f.grid
    ds = _d_sigma_data(f.data, g.h_sigma)
    dss = _d_sigma_data(ds, g.h_sigma)
    pb = _partial_beta_data(f.data, g.h_beta, f.parity)
    pbb = _partial_beta_data(pb, g.h_beta, flip_parity(f.parity))
    data = (alpha * alpha * dss + alpha * ds + pbb
            - g.tan_b[None, :] * pb)
    return ScalarField(g, data, f.frame, f.parity)


def k_beta(grid: Grid) -> np.ndarray:
    """Angular kernel K(beta) = 3 sin(beta) cos^2(beta)."""
    return 3.0 * grid.sin_b * grid.cos_b ** 2


def _k_moment(f: ScalarField) -> np.ndarray:
    """m(sigma) = integral of f(sigma, .) K(.) dbeta by midpoint rule."""
    g = f.grid
    return (f.data * k_beta(g)[None, :]).sum(axis=1) * g.w_beta


def _gregory_tail(m: np.ndarray, h: float) -> np.ndarray:
    """s_i = integral of m from sigma_i to sigma_max, 4th-order accurate.

    Composite trapezoid with 3-point endpoint corrections (the h^2
    Euler-Maclaurin term removed at both ends).
    """
    n = m.size
    c = np.empty(n)
    c[0] = 0.0
    np.cumsum(0.5 * h * (m[:-1] + m[1:]), out=c[1:])
    s = c[-1] - c
    right = (h / 24.0) * (3.0 * m[-1] - 4.0 * m[-2] + m[-3])
    s -= right
    if n >= 3:
        left = (h / 24.0) * (-3.0 * m[:-2] + 4.0 * m[1:-1] - m[2:])
        s[:-2] += left
    return s


def l12_radial(f: ScalarField) -> np.ndarray:
    """L12(f) sampled at every radial node (tail integral from each node)."""
    return _gregory_tail(_k_moment(f), f.grid.h_sigma)


def l12(f: ScalarField, y0: float) -> float:
    """L12(f)(y0): integral of f K(beta) over dbeta dz/z for z > y0.

    y0 <= y_min (including 0) integrates the whole truncated domain.  An
    interior y0 gets a cubic partial-cell correction so the value is 4th-order
    accurate in the radial spacing.
    """
    g = f.grid
    m = _k_moment(f)
    s = _gregory_tail(m, g.h_sigma)
    y_min = float(np.exp(g.sigma[0]))
    if y0 <= y_min:
        return float(s[0])
    sig0 = np.log(y0)
    if sig0 > g.sigma[-1]:
        raise ValueError(f"y0={y0} above the radial truncation")
    k = int(np.searchsorted(g.sigma, sig0, side="left"))
    if g.sigma[k] == sig0:
        return float(s[k])
    base = min(max(k - 2, 0), g.n_sigma - 4)
    xs = g.sigma[base:base + 4] - sig0
    coef = np.polyfit(xs, m[base:base + 4], 3)
    upper = g.sigma[k] - sig0
    part = sum(coef[3 - p] * upper ** (p + 1) / (p + 1) for p in range(4))
    return float(s[k] + part)


def radial_tail_fraction(weighted_sq: np.ndarray, grid: Grid,
                         decades: float = 1.0) -> float:
    """Mass fraction of a per-node squared integrand in the outer decades.

    Used as the truncation-error indicator attached to norm computations.
    """
    total = float(weighted_sq.sum())
    if total <= 0.0:
        return 0.0
    cut = decades * np.log(10.0)
    mask = (grid.sigma < grid.sigma[0] + cut) | (grid.sigma > grid.sigma[-1] - cut)
    return float(weighted_sq[mask].sum()) / total


def _pair_sum(a: np.ndarray, b: np.ndarray, wrad: np.ndarray,
              wang: np.ndarray) -> float:
    return float(((a * b) @ wang) @ wrad)


def _hk_weights(grid: Grid, params: Params):
    y = grid.y
    wrad = (1.0 + y) ** 4 / y ** 3 * grid.w_sigma
    wang_eta = grid.sin_2b ** (-params.eta) * grid.w_beta
    wang_gamma = grid.sin_2b ** (-params.gamma) * grid.w_beta
    return wrad, wang_eta, wang_gamma


def hk_inner(f: ScalarField, g: ScalarField, k: int, params: Params) -> float:
    """Weighted Sobolev inner product of order k on the y-frame.

    Pure radial terms D_y^i, 0 <= i <= k, carry sin(2b)^(-eta); mixed terms
    D_beta^i D_y^j with i >= 1 and 1 <= i+j <= k carry sin(2b)^(-gamma).
    """
    if f.frame != Y_FRAME or g.frame != Y_FRAME:
        raise FrameError("hk_inner expects y-frame fields")
    if not (f.data.any() and g.data.any()):
        return 0.0
    grid = f.grid
    same = g is f
    wrad, wang_eta, wang_gamma = _hk_weights(grid, params)
    fj, gj = f, g
    total = _pair_sum(fj.data, gj.data, wrad, wang_eta)
    pyramid = [(fj, gj)]
    for _ in range(k):
        fj = apply_derivative(fj, D_SIGMA)
        gj = fj if same else apply_derivative(gj, D_SIGMA)
        total += _pair_sum(fj.data, gj.data, wrad, wang_eta)
        pyramid.append((fj, gj))
    for j in range(k):                      # radial order of the mixed term
        fb, gb = pyramid[j]
        for _ in range(k - j):              # angular applications
            fb = apply_derivative(fb, D_BETA)
            gb = fb if same else apply_derivative(gb, D_BETA)
            total += _pair_sum(fb.data, gb.data, wrad, wang_gamma)
    return total


def hk_norm(f: ScalarField, k: int, params: Params) -> float:
    val = hk_inner(f, f, k, params)
    return float(np.sqrt(max(val, 0.0)))


def hk_tail_fraction(f: ScalarField, params: Params) -> float:
    """Last-decade mass fraction of the k=0 integrand (truncation indicator)."""
    grid = f.grid
    wrad, wang_eta, _ = _hk_weights(grid, params)
    per_node = (f.data ** 2 @ wang_eta) * wrad
    return radial_tail_fraction(per_node, grid)


def _w_radial_weight(grid: Grid, params: Params, which: str) -> np.ndarray:
    """Radial measure: rhobar^2 drhobar (W1, W3) or rhobar^eta drhobar (W2),
    written as exp(c sigma/alpha) dsigma/alpha on the log grid."""
    a = params.alpha
    power = 3.0 if which in (W1, W3) else 1.0 + params.eta
    arg = power * grid.sigma / a
    if arg.max() > 700.0:
        log.warning("w_inner radial weight overflows float64 "
                    "(alpha=%.3g, sigma_max=%.3g); result may be inf",
                    a, grid.sigma[-1])
    with np.errstate(over="ignore"):
        return np.exp(arg) * grid.w_sigma / a


def w_inner(f: ScalarField, g: ScalarField, which: str, k: int,
            params: Params) -> float:
    """The three temperature-side inner products on the ybar-frame.

    W1/W2: sum over 0 <= i+j <= k of D_beta^i D_rhobar^j terms; the pure
    radial top term (i, j) = (0, k) carries sin(2b)^(2-eta), every other term
    sin(2b)^(-eta).  W3: same index range with weight cos(b)^(2-eta), plus the
    block of plain-d_beta-augmented terms up to total order k-1.
    """
    if f.frame != YBAR_FRAME or g.frame != YBAR_FRAME:
        raise FrameError("w_inner expects ybar-frame fields")
    if f.frame != g.frame:
        raise FrameError("mismatched frames")
    if not (f.data.any() and g.data.any()):
        return 0.0
    grid = f.grid
    same = g is f
    a = params.alpha
    wrad = _w_radial_weight(grid, params, which)
    wb = grid.w_beta
    total = 0.0
    if which in (W1, W2):
        wang_pure = grid.sin_2b ** (2.0 - params.eta) * wb
        wang_rest = grid.sin_2b ** (-params.eta) * wb
        fj, gj = f, g
        for j in range(k + 1):
            if j > 0:
                fj = apply_derivative(fj, D_RHOBAR, alpha=a)
                gj = fj if same else apply_derivative(gj, D_RHOBAR, alpha=a)
            wang = wang_pure if j == k else wang_rest
            total += _pair_sum(fj.data, gj.data, wrad, wang)
            fb, gb = fj, gj
            for _ in range(k - j):
                fb = apply_derivative(fb, D_BETA)
                gb = fb if same else apply_derivative(gb, D_BETA)
                total += _pair_sum(fb.data, gb.data, wrad, wang_rest)
        return total
    if which == W3:
        wang = grid.cos_b ** (2.0 - params.eta) * wb
        base_pairs = [(f, g, k)]
        fb0 = apply_derivative(f, PARTIAL_BETA)
        gb0 = fb0 if same else apply_derivative(g, PARTIAL_BETA)
        base_pairs.append((fb0, gb0, k - 1))
        for base_f, base_g, kmax in base_pairs:
            if kmax < 0:
                continue
            fj, gj = base_f, base_g
            for j in range(kmax + 1):
                if j > 0:
                    fj = apply_derivative(fj, D_RHOBAR, alpha=a)
                    gj = fj if same else apply_derivative(gj, D_RHOBAR,
                                                          alpha=a)
                total += _pair_sum(fj.data, gj.data, wrad, wang)
                fb, gb = fj, gj
                for _ in range(kmax - j):
                    fb = apply_derivative(fb, D_BETA)
                    gb = fb if same else apply_derivative(gb, D_BETA)
                    total += _pair_sum(fb.data, gb.data, wrad, wang)
        return total
    raise ValueError(f"unknown inner product {which!r}")


def w_norm(f: ScalarField, which: str, k: int, params: Params) -> float:
    return float(np.sqrt(max(w_inner(f, f, which, k, params), 0.0)))


@dataclass
class NormReport:
    """One row of norm/energy diagnostics."""

    hk: float
    w1: float
    w2: float
    w3: float
    X: float
    Y: float
    E: float
    k: int

    def to_dict(self) -> dict:
        return {"hk": self.hk, "w1": self.w1, "w2": self.w2, "w3": self.w3,
                "X": self.X, "Y": self.Y, "E": self.E, "k": self.k}


def y_bracket(xi: ScalarField, phi: ScalarField, k: int,
              params: Params) -> float:
    """Y(s): the dissipation bracket of (1/rhobar)-scaled first derivatives."""
    grid = xi.grid
    inv_rho = np.exp(-grid.sigma / params.alpha)[:, None]
    out = 0.0
    for fld, norms in ((xi, (W1, W2)), (phi, (W3,))):
        pb = apply_derivative(fld, PARTIAL_BETA)
        dr = apply_derivative(fld, D_RHOBAR, alpha=params.alpha)
        pb = pb.like(inv_rho * pb.data)
        dr = dr.like(inv_rho * dr.data)
        for which in norms:
            out += w_inner(pb, pb, which, k, params)
            out += w_inner(dr, dr, which, k, params)
    return out


def energy_xye(eps: ScalarField, xi: ScalarField, phi: ScalarField,
               k: int, params: Params, c_embed: float = 1.0) -> NormReport:
    """Assemble X, Y and the composite energy E.

    eps lives on the y-frame, xi and phi on the ybar-frame.  E uses the
    configurable embedding constant (default 1); the constant is diagnostic
    only.
    """
    hk = hk_norm(eps, k, params)
    w1 = w_norm(xi, W1, k, params)
    w2 = w_norm(xi, W2, k, params)
    w3 = w_norm(phi, W3, k, params)
    X = w1 * w1 + w2 * w2 + w3 * w3
    Y = y_bracket(xi, phi, k, params)
    E = c_embed * params.alpha ** (-2 * k + 1) * X + hk * hk
    return NormReport(hk=hk, w1=w1, w2=w2, w3=w3, X=X, Y=Y, E=E, k=k)


def grid_l2(data: np.ndarray, grid: Grid) -> float:
    """Plain L2 over dsigma dbeta (diagnostic measure, no weights)."""
    per = (data ** 2).sum(axis=1) * grid.w_beta
    return float(np.sqrt(per @ grid.w_sigma))


def sigma_shift(f: ScalarField, shift: float,
                frame: str | None = None) -> ScalarField:
    """Resample f at sigma + shift by cubic Lagrange interpolation.

    Realizes xi(l2 * y) as a log-shift between the congruent frames.  Values
    requested outside the grid are zero-padded; the lost fraction of the
    squared mass is returned on the field as attribute ``shift_loss`` via the
    module logger when above 1e-12.
    """
    g = f.grid
    n = g.n_sigma
    t = (g.sigma + shift - g.sigma[0]) / g.h_sigma
    base = np.floor(t).astype(int)
    frac = t - base
    out = np.zeros_like(f.data)
    for offset, wexpr in ((-1, lambda x: -x * (x - 1.0) * (x - 2.0) / 6.0),
                          (0, lambda x: (x * x - 1.0) * (x - 2.0) / 2.0),
                          (1, lambda x: -x * (x + 1.0) * (x - 2.0) / 2.0),
                          (2, lambda x: x * (x * x - 1.0) / 6.0)):
        idx = base + offset
        ok = (idx >= 0) & (idx < n)
        w = wexpr(frac)
        out[ok] += w[ok, None] * f.data[np.clip(idx, 0, n - 1)[ok]]
    before = float((f.data ** 2).sum())
    after = float((out ** 2).sum())
    if before > 0.0:
        loss = abs(before - after) / before
        if loss > 1e-6:
            log.debug("sigma_shift by %.3g moved %.2e of the squared mass "
                      "outside the grid", shift, loss)
    return ScalarField(g, out, frame if frame is not None else f.frame,
                       f.parity)
