"""Time-stepping for the coupled perturbation system with modulation.

State: a vorticity perturbation eps on the y-frame, temperature-gradient
profiles xi, phi on the congruent ybar-frame, and modulation parameters
(s, lambda, mu, l1, l2).  The vorticity side is advanced through the total
field W = F* + eps: one stream solve per stage gives the velocity pack of
Phi_W, and the steady-profile defect of F* (cached at startup) is the
explicit forcing that the unknown profile corrector would otherwise absorb.

The rescaling rate lambda_s/lambda + 1 is not integrated from a literal ODE;
it is chosen each stage by constraint projection -- apply the tail functional
L12(.)(0) to the assembled right-hand side of the eps equation and solve the
scalar equation that keeps d/ds L12(eps)(0) = 0.  The remaining modulation
functions are closed forms of s and the running integral of the rate:

  l1 = e^(-s)
  mu = (e^s lambda)^(2+delta)
  l2 = l2(0) exp(-(1+delta)s + alpha s/2 - (1+alpha/2) int_lam)

Time integration is Heun RK2 for transport/stretching/rescaling/coupling,
backward Euler for the stiff xi/phi diffusion (banded factorization cached
while the prefactor is unchanged), then re-projection of eps.  The diffusion
prefactor (mu l2 / lambda^(1+delta))^(2/alpha) lambda is carried in log form
to survive the 2/alpha exponent.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .calculus import (D_SIGMA, PARTIAL_BETA, apply_derivative, energy_xye,
                       grid_l2, hk_inner, l12, laplace_tilde, sigma_shift,
                       upwind_d_sigma, upwind_partial_beta, w_inner,
                       W1, W2, W3)
from .elliptic import (EllipticOperator, build_operator, decompose_solve,
                       shift_pack, velocity_pack, zero_velocity_pack)
from .errors import CflError, FrameError, OverflowGuardError, ParityError
from .grid import (EVEN, Grid, ODD, Params, ScalarField, Y_FRAME, YBAR_FRAME,
                   build_grid)
from .profiles import ProfilePack, build_profile, f_star_residual

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModulationState:
    """Rescaled time and the modulation functions derived from it.

    ``int_lam`` is the running integral of (lambda_s/lambda + 1); everything
    except it and t_phys is closed-form, so the identities l1 e^s = 1 and
    mu = (e^s lambda)^(2+delta) hold to rounding, never to integrator error.
    """

    s: float
    int_lam: float
    t_phys: float
    lam: float
    mu: float
    l1: float
    l2: float

    @classmethod
    def create(cls, params: Params, s: float = 0.0, int_lam: float = 0.0,
               t_phys: float = 0.0) -> "ModulationState":
        a, d = params.alpha, params.delta
        log_lam = math.log(params.lambda_0) - s + int_lam
        lam = math.exp(log_lam)
        mu = params.lambda_0 ** (2.0 + d) * math.exp((2.0 + d) * int_lam)
        l1 = math.exp(-s)
        l2 = params.l2_0 * math.exp(-(1.0 + d) * s + 0.5 * a * s
                                    - (1.0 + 0.5 * a) * int_lam)
        return cls(s=s, int_lam=int_lam, t_phys=t_phys, lam=lam, mu=mu,
                   l1=l1, l2=l2)


@dataclass
class ModCoeffs:
    """Per-stage modulation rates and the diffusion prefactor (log form)."""

    lam_rate: float          # lambda_s/lambda + 1
    mu_rate: float           # mu_s/mu
    l1_rate: float           # l1'/l1 = -1
    l2_rate: float           # l2'/l2
    ln_pref: float           # ln[(mu l2 / lambda^(1+delta))^(2/alpha) lambda]
    pref_ratio: float        # prefactor / l2(0)^(2/alpha)


def modulation_coeffs(mod: ModulationState, lam_rate: float,
                      params: Params) -> ModCoeffs:
    a, d = params.alpha, params.delta
    mu_rate = (2.0 + d) * lam_rate
    l2_rate = -(1.0 + d) + 0.5 * a - (1.0 + 0.5 * a) * lam_rate
    ln_pref = (2.0 / a) * (math.log(mod.mu) + math.log(mod.l2)
                           - (1.0 + d) * math.log(mod.lam)) + math.log(mod.lam)
    ratio = math.exp(ln_pref - (2.0 / a) * math.log(params.l2_0))
    return ModCoeffs(lam_rate=lam_rate, mu_rate=mu_rate, l1_rate=-1.0,
                     l2_rate=l2_rate, ln_pref=ln_pref, pref_ratio=ratio)


@dataclass
class SimOptions:
    """Run-level switches (not part of the scalar Params contract)."""

    forcing: bool = True
    freeze_velocity: bool = False
    freeze_modulation: bool = False
    cfl_limit: float = 1.0
    ledger_terms: bool = True


@dataclass
class SimContext:
    """Immutable per-run machinery: grid, profile, solver, cached fields."""

    params: Params
    grid: Grid
    pack: ProfilePack
    op: EllipticOperator
    phi_fstar: ScalarField
    forcing: ScalarField
    options: SimOptions
    l12_fstar0: float
    _diff_cache: dict = dc_field(default_factory=dict)


def build_context(params: Params, options: SimOptions | None = None,
                  grid: Grid | None = None) -> SimContext:
    grid = grid if grid is not None else build_grid(params)
    pack = build_profile(params, grid)
    op = build_operator(grid, params.alpha)
    phi_fstar = decompose_solve(pack.f_star, op, params).phi
    forcing, _ = f_star_residual(pack, phi_fstar, params)
    return SimContext(params=params, grid=grid, pack=pack, op=op,
                      phi_fstar=phi_fstar, forcing=forcing,
                      options=options if options is not None else SimOptions(),
                      l12_fstar0=l12(pack.f_star, 0.0))


@dataclass
class SimState:
    """Evolving fields plus the cached stream solution and history ring."""

    mod: ModulationState
    eps: ScalarField
    xi: ScalarField
    phi: ScalarField
    phi_eps: ScalarField | None = None
    history: list = dc_field(default_factory=list)


def project_constraint(eps: ScalarField, ctx: SimContext,
                       direction: ScalarField | None = None) -> ScalarField:
    """Remove the L12(.)(0) component of eps along F* (or a given direction)."""
    direction = direction if direction is not None else ctx.pack.f_star
    denom = ctx.l12_fstar0 if direction is ctx.pack.f_star else l12(direction, 0.0)
    if abs(denom) < 1e-300:
        raise ValueError("projection direction has no tail-integral component")
    c = l12(eps, 0.0) / denom
    return eps.like(eps.data - c * direction.data)


def init_from_theta(theta0: ScalarField | None, eps0: ScalarField | None,
                    ctx: SimContext) -> SimState:
    """Initial state from a temperature profile and a vorticity perturbation.

    xi0 and phi0 are the r- and x3-gradient profiles of theta0, computed with
    the self-similar gradient formulas, so the cross-derivative compatibility
    identity holds to discretization error from the first step.  eps0 is
    projected onto the constraint L12(eps)(0) = 0.
    """
    grid, params = ctx.grid, ctx.params
    a = params.alpha
    if -grid.sigma[0] / a > 700.0:
        raise OverflowGuardError(
            "1/rhobar overflows float64 for this (alpha, sigma_min)")
    if theta0 is None:
        xi0 = grid.zeros(YBAR_FRAME, ODD)
        phi0 = grid.zeros(YBAR_FRAME, EVEN)
    else:
        if theta0.frame != YBAR_FRAME:
            raise FrameError("theta0 must be a ybar-frame field")
        if theta0.parity[0] != "odd":
            raise ParityError("theta0 must be odd across beta = 0")
        ay = apply_derivative(theta0, D_SIGMA)
        ay = ay.like(a * ay.data)                        # alpha D_ybar theta
        pb = apply_derivative(theta0, PARTIAL_BETA)
        inv_rho = np.exp(-grid.sigma / a)[:, None]
        cb, sb = grid.cos_b[None, :], grid.sin_b[None, :]
        xi0 = ScalarField(grid, inv_rho * (cb * ay.data - sb * pb.data),
                          YBAR_FRAME, ODD)
        phi0 = ScalarField(grid, inv_rho * (sb * ay.data + cb * pb.data),
                           YBAR_FRAME, EVEN)
    if eps0 is None:
        eps = ctx.grid.zeros(Y_FRAME, ODD)
    else:
        if eps0.frame != Y_FRAME:
            raise FrameError("eps0 must be a y-frame field")
        eps = project_constraint(eps0, ctx)
    mod = ModulationState.create(params)
    state = SimState(mod=mod, eps=eps, xi=xi0, phi=phi0)
    state.phi_eps = decompose_solve(eps, ctx.op, params).phi
    return state


def compatibility_residual(xi: ScalarField, phi: ScalarField,
                           params: Params) -> float:
    """L2 size of sin b a D_ybar xi + cos b d_b xi - cos b a D_ybar phi
    + sin b d_b phi (the cross-derivative identity for gradient pairs)."""
    g = xi.grid
    a = params.alpha
    dxi = a * apply_derivative(xi, D_SIGMA).data
    dphi = a * apply_derivative(phi, D_SIGMA).data
    bxi = apply_derivative(xi, PARTIAL_BETA).data
    bphi = apply_derivative(phi, PARTIAL_BETA).data
    sb, cb = g.sin_b[None, :], g.cos_b[None, :]
    mismatch = sb * dxi + cb * bxi - cb * dphi + sb * bphi
    return grid_l2(mismatch, g)


@dataclass
class Rhs:
    """Assembled right-hand sides with per-term fields for the ledger.

    d_xi and d_phi hold the EXPLICIT part only; the (stiff, often
    astronomically large near the inner radius) diffusion fields live in
    terms["xi_diffusion"] / terms["phi_diffusion"] so that explicit updates
    never subtract two huge numbers.  ``total(which)`` assembles the full
    documented right-hand side for diagnostics.
    """

    d_eps: ScalarField
    d_xi: ScalarField
    d_phi: ScalarField
    lam_rate: float
    coeffs: ModCoeffs
    terms: dict

    def total(self, which: str) -> np.ndarray:
        base = getattr(self, "d_" + which).data
        if which in ("xi", "phi"):
            return base + self.terms[which + "_diffusion"]
        return base


def _diffusion_coef(coeffs: ModCoeffs, grid: Grid, alpha: float) -> np.ndarray:
    arg = coeffs.ln_pref - 2.0 * grid.sigma / alpha
    if arg.max() > 700.0:
        raise OverflowGuardError(
            "diffusion coefficient exceeds float64 range; narrow sigma_min "
            "or increase alpha")
    return np.exp(arg)


def rhs_all(state: SimState, ctx: SimContext,
            include_diffusion: bool = True) -> Rhs:
    """Assemble d_eps, d_xi, d_phi and the projected rescaling rate.

    The eps equation is evaluated in total-W form: the transport/stretching
    defect P(W) of W = F* + eps (with the velocity pack of Phi_W) carries the
    linearized operator, the rescaling error term and the quadratic terms
    jointly; subtracting the cached F* defect switches the forcing off.
    """
    params, grid, opts = ctx.params, ctx.grid, ctx.options
    a, d = params.alpha, params.delta
    pack = ctx.pack

    sol = decompose_solve(state.eps, ctx.op, params)
    phi_eps = sol.phi
    phi_w = phi_eps.like(phi_eps.data + ctx.phi_fstar.data)
    if opts.freeze_velocity:
        vel = zero_velocity_pack(grid)
    else:
        vel = velocity_pack(phi_w, params)

    # total W: profile parts in closed form; the perturbation's own advection
    # derivatives are upwind-biased (central + RK2 has no damping and the
    # vorticity side carries no diffusion to absorb grid-scale noise)
    w_data = pack.f_star.data + state.eps.data
    ydy_eps_c = apply_derivative(state.eps, D_SIGMA)
    ydy_w_c = pack.ydy_f_star.data + ydy_eps_c.data
    wind_s = (1.0 + d) + a * vel.v.data
    ydy_eps_up = upwind_d_sigma(state.eps, wind_s)
    dbeta_eps_up = upwind_partial_beta(state.eps, vel.u.data)

    p_of_w = (w_data
              + (1.0 + d) * (pack.ydy_f_star.data + ydy_eps_up)
              + vel.u.data * (pack.dbeta_f_star.data + dbeta_eps_up)
              + vel.v.data * a * (pack.ydy_f_star.data + ydy_eps_up)
              - vel.rcal.data * w_data)
    if not opts.forcing:
        p_of_w = p_of_w - ctx.forcing.data

    coupling = sigma_shift(state.xi, math.log(state.mod.l2), frame=Y_FRAME)
    coupling = coupling.like(state.mod.l1 * coupling.data)

    g_field = ScalarField(grid, -p_of_w + coupling.data, Y_FRAME, ODD)

    scale_dir = ScalarField(grid, w_data - ydy_w_c, Y_FRAME, ODD)
    if opts.freeze_modulation:
        lam_rate = 0.0
    else:
        denom = l12(scale_dir, 0.0)
        lam_rate = -l12(g_field, 0.0) / denom
    eps_scaling = scale_dir.like(lam_rate * scale_dir.data)
    d_eps = g_field.like(g_field.data + eps_scaling.data)

    coeffs = modulation_coeffs(state.mod, lam_rate, params)

    # temperature side: scaling, transport, diffusion
    if opts.freeze_modulation:
        xi_scaling = np.zeros(grid.shape)
        phi_scaling = np.zeros(grid.shape)
        ln_pref = (2.0 / a) * math.log(params.l2_0)
        coeffs = ModCoeffs(lam_rate=0.0, mu_rate=0.0, l1_rate=-1.0,
                           l2_rate=0.0, ln_pref=ln_pref, pref_ratio=1.0)
    else:
        c_id = 2.0 * lam_rate - (2.0 + coeffs.l1_rate)
        c_sc = (-coeffs.mu_rate + (1.0 + d) * lam_rate
                - (1.0 + d + coeffs.l2_rate))
        wind = np.full(grid.shape, -c_sc)
        xi_scaling = (c_id * state.xi.data
                      + c_sc * upwind_d_sigma(state.xi, wind))
        phi_scaling = (c_id * state.phi.data
                       + c_sc * upwind_d_sigma(state.phi, wind))

    if opts.freeze_velocity:
        xi_transport = np.zeros(grid.shape)
        phi_transport = np.zeros(grid.shape)
    else:
        velb = shift_pack(vel, -math.log(state.mod.l2), frame=YBAR_FRAME)
        wind_bs = a * velb.v.data
        xi_transport = -(velb.u.data * upwind_partial_beta(state.xi,
                                                           velb.u.data)
                         + wind_bs * upwind_d_sigma(state.xi, wind_bs)
                         + velb.lam1.data * state.xi.data
                         + velb.lam2.data * state.phi.data)
        phi_transport = -(velb.u.data * upwind_partial_beta(state.phi,
                                                            velb.u.data)
                          + wind_bs * upwind_d_sigma(state.phi, wind_bs)
                          + velb.lam3.data * state.xi.data
                          + velb.lam4.data * state.phi.data)

    d_xi_data = xi_scaling + xi_transport
    d_phi_data = phi_scaling + phi_transport
    xi_diffusion = np.zeros(grid.shape)
    phi_diffusion = np.zeros(grid.shape)
    if include_diffusion:
        coef = _diffusion_coef(coeffs, grid, a)[:, None]
        sec2 = 1.0 / grid.cos_b[None, :] ** 2
        xi_diffusion = coef * (laplace_tilde(state.xi, a).data
                               - sec2 * state.xi.data)
        phi_diffusion = coef * laplace_tilde(state.phi, a).data

    terms = {
        "eps_scaling": eps_scaling.data,
        "eps_transport": -p_of_w,
        "eps_coupling": coupling.data,
        "xi_scaling": xi_scaling, "xi_transport": xi_transport,
        "xi_diffusion": xi_diffusion,
        "phi_scaling": phi_scaling, "phi_transport": phi_transport,
        "phi_diffusion": phi_diffusion,
        "max_u": float(np.abs(vel.u.data).max()),
        "max_v": float(np.abs(vel.v.data).max()),
        "phi_eps": phi_eps,
    }
    d_xi = state.xi.like(d_xi_data)
    d_phi = state.phi.like(d_phi_data)
    return Rhs(d_eps=d_eps, d_xi=d_xi, d_phi=d_phi, lam_rate=lam_rate,
               coeffs=coeffs, terms=terms)


def _diffusion_matrix(grid: Grid, alpha: float, dt_coef: np.ndarray,
                      n_rows: int, with_mass: bool) -> sp.csc_matrix:
    """Backward-Euler matrix in the scaled variable zeta = rhobar * field.

    Conjugating the operator by rhobar flips the sign of the first radial
    derivative: rhobar Lap_tilde(zeta/rhobar) = a^2 d_ss zeta - a d_s zeta +
    angular part.  Only the first n_rows radial planes are assembled (the
    block where dt * coef is above identity level); zero-Dirichlet ghost at
    the inner end, frozen-value interface handled on the right-hand side.
    Odd (xi, with the sec^2 mass) or even (phi) folding across the beta ends.
    """
    nb = grid.n_beta
    h_s, h_b = grid.h_sigma, grid.h_beta
    n = n_rows * nb
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    a = alpha
    tan_b = grid.tan_b
    sec2 = 1.0 / grid.cos_b ** 2
    fold = -1.0 if with_mass else 1.0        # odd for xi, even for phi
    lo_s = a * a / h_s ** 2 + a / (2.0 * h_s)
    hi_s = a * a / h_s ** 2 - a / (2.0 * h_s)
    for i in range(n_rows):
        ci = dt_coef[i]
        for j in range(nb):
            r = i * nb + j
            diag = -2.0 * a * a / h_s ** 2 - 2.0 / h_b ** 2
            if with_mass:
                diag -= sec2[j]
            lo_b = 1.0 / h_b ** 2 + tan_b[j] / (2.0 * h_b)
            hi_b = 1.0 / h_b ** 2 - tan_b[j] / (2.0 * h_b)
            if i > 0:
                add(r, r - nb, -ci * lo_s)
            if i < n_rows - 1:
                add(r, r + nb, -ci * hi_s)
            if j > 0:
                add(r, r - 1, -ci * lo_b)
            else:
                diag += fold * lo_b
            if j < nb - 1:
                add(r, r + 1, -ci * hi_b)
            else:
                diag += fold * hi_b
            add(r, r, 1.0 - ci * diag)
    return sp.csc_matrix((vals, (rows, cols)), shape=(n, n))


# Relative floor applied to the scaled solve output: values this far below
# the block maximum are LU noise, not dynamics, and would be amplified by the
# exponential frame weights if kept.
_ZETA_FLOOR = 1e-13
_IDENTITY_LEVEL = 1e-20


def _diffusion_block(ctx: SimContext, dt: float, coeffs: ModCoeffs):
    """Cached (lu_xi, lu_phi, n_rows, dt_coef) for one (dt, prefactor)."""
    grid, a = ctx.grid, ctx.params.alpha
    l_scale = (2.0 * a * a / grid.h_sigma ** 2 + a / grid.h_sigma
               + 2.0 / grid.h_beta ** 2 + grid.tan_b[-1] / grid.h_beta
               + 1.0 / grid.cos_b[-1] ** 2)
    arg = coeffs.ln_pref - 2.0 * grid.sigma / a
    active = dt * np.exp(np.minimum(arg, 700.0)) * l_scale > _IDENTITY_LEVEL
    if not active.any():
        return None
    n_rows = int(np.nonzero(active)[0][-1]) + 1
    key = (round(dt, 15), round(coeffs.ln_pref, 11), n_rows)
    hit = ctx._diff_cache.get(key)
    if hit is not None:
        return hit
    dt_coef = dt * _diffusion_coef(coeffs, grid, a)[:n_rows]
    lu_xi = splu(_diffusion_matrix(grid, a, dt_coef, n_rows, True))
    lu_phi = splu(_diffusion_matrix(grid, a, dt_coef, n_rows, False))
    if len(ctx._diff_cache) > 8:
        ctx._diff_cache.clear()
    entry = (lu_xi, lu_phi, n_rows, dt_coef)
    ctx._diff_cache[key] = entry
    return entry


def _solve_diffusion(data: np.ndarray, lu, ctx: SimContext, n_rows: int,
                     dt_coef: np.ndarray) -> np.ndarray:
    """One backward-Euler application on the active block, in zeta = rhobar *
    field; rows past the block are identity to machine precision."""
    grid, a = ctx.grid, ctx.params.alpha
    rho = np.exp(grid.sigma[:n_rows] / a)[:, None]
    zeta = data[:n_rows] * rho
    rhs = zeta.copy()
    if n_rows < grid.n_sigma:
        hi_s = a * a / grid.h_sigma ** 2 - a / (2.0 * grid.h_sigma)
        frozen = data[n_rows] * math.exp(grid.sigma[n_rows] / a)
        rhs[-1] += dt_coef[-1] * hi_s * frozen
    z = lu.solve(rhs.ravel()).reshape(n_rows, grid.n_beta)
    zmax = np.abs(z).max()
    if zmax > 0.0:
        z[np.abs(z) < _ZETA_FLOOR * zmax] = 0.0
    out = data.copy()
    out[:n_rows] = z / rho
    return out


def _check_cfl(rhs: Rhs, ctx: SimContext, dt: float):
    g, params = ctx.grid, ctx.params
    rate = (rhs.terms["max_u"] / g.h_beta
            + (params.alpha * rhs.terms["max_v"] + (1.0 + params.delta)
               + abs(rhs.lam_rate)) / g.h_sigma)
    if dt * rate > ctx.options.cfl_limit:
        raise CflError(f"dt={dt:.3g} violates the advective CFL bound "
                       f"(dt * rate = {dt * rate:.3f})")


def _advance_mod(params: Params, mod: ModulationState, ds: float,
                 int_lam_inc: float, t_inc: float) -> ModulationState:
    return ModulationState.create(params, s=mod.s + ds,
                                  int_lam=mod.int_lam + int_lam_inc,
                                  t_phys=mod.t_phys + t_inc)


def imex_step(state: SimState, ctx: SimContext, dt: float) -> SimState:
    """One step: Heun RK2 (explicit terms) + backward-Euler diffusion +
    constraint re-projection; appends a diagnostics row to the history."""
    params, opts = ctx.params, ctx.options
    mod0 = state.mod

    k1 = rhs_all(state, ctx, include_diffusion=opts.ledger_terms)
    if not opts.freeze_velocity:
        _check_cfl(k1, ctx, dt)

    mid = SimState(
        mod=_advance_mod(params, mod0, dt, dt * k1.lam_rate, 0.0),
        eps=state.eps.like(state.eps.data + dt * k1.d_eps.data),
        xi=state.xi.like(state.xi.data + dt * k1.d_xi.data),
        phi=state.phi.like(state.phi.data + dt * k1.d_phi.data))
    k2 = rhs_all(mid, ctx, include_diffusion=False)

    int_lam_inc = 0.5 * dt * (k1.lam_rate + k2.lam_rate)
    eps1 = state.eps.data + 0.5 * dt * (k1.d_eps.data + k2.d_eps.data)
    xi1 = state.xi.data + 0.5 * dt * (k1.d_xi.data + k2.d_xi.data)
    phi1 = state.phi.data + 0.5 * dt * (k1.d_phi.data + k2.d_phi.data)

    # physical-time increment by Simpson on the closed-form lambda
    lam_a = mod0.lam
    lam_m = ModulationState.create(
        params, s=mod0.s + 0.5 * dt,
        int_lam=mod0.int_lam + 0.5 * dt * k1.lam_rate).lam
    lam_b = ModulationState.create(
        params, s=mod0.s + dt, int_lam=mod0.int_lam + int_lam_inc).lam
    t_inc = dt * (lam_a + 4.0 * lam_m + lam_b) / 6.0

    mod1 = _advance_mod(params, mod0, dt, int_lam_inc, t_inc)

    # implicit diffusion at the end-of-step prefactor
    coeffs1 = modulation_coeffs(mod1, k2.lam_rate, params)
    if opts.freeze_modulation:
        coeffs1 = k1.coeffs
    block = _diffusion_block(ctx, dt, coeffs1)
    if block is not None:
        lu_xi, lu_phi, n_rows, dt_coef = block
        xi1 = _solve_diffusion(xi1, lu_xi, ctx, n_rows, dt_coef)
        phi1 = _solve_diffusion(phi1, lu_phi, ctx, n_rows, dt_coef)

    new = SimState(
        mod=mod1,
        eps=project_constraint(state.eps.like(eps1), ctx),
        xi=state.xi.like(xi1),
        phi=state.phi.like(phi1),
        history=state.history)
    new.phi_eps = decompose_solve(new.eps, ctx.op, params).phi
    new.history.append(_diagnostics_row(new, ctx, k1))
    return new


def _ledger_rates(state: SimState, ctx: SimContext, rhs: Rhs) -> dict:
    """Instantaneous contributions to dX/ds and d|eps|_Hk^2/ds by term."""
    params = ctx.params
    k = params.k

    def wsum(term_xi, term_phi):
        fx = state.xi.like(term_xi)
        fp = state.phi.like(term_phi)
        return 2.0 * (w_inner(fx, state.xi, W1, k, params)
                      + w_inner(fx, state.xi, W2, k, params)
                      + w_inner(fp, state.phi, W3, k, params))

    def hsum(term):
        return 2.0 * hk_inner(state.eps.like(term), state.eps, k, params)

    t = rhs.terms
    return {
        "dX_scaling": wsum(t["xi_scaling"], t["phi_scaling"]),
        "dX_transport": wsum(t["xi_transport"], t["phi_transport"]),
        "dX_diffusion": wsum(t["xi_diffusion"], t["phi_diffusion"]),
        "dE2_scaling": hsum(t["eps_scaling"]),
        "dE2_transport": hsum(t["eps_transport"]),
        "dE2_coupling": hsum(t["eps_coupling"]),
    }


def _diagnostics_row(state: SimState, ctx: SimContext, k1: Rhs) -> dict:
    params = ctx.params
    rep = energy_xye(state.eps, state.xi, state.phi, params.k, params)
    mod = state.mod
    row = {
        "s": mod.s, "t_phys": mod.t_phys, "lambda": mod.lam, "mu": mod.mu,
        "l1": mod.l1, "l2": mod.l2, "lam_rate": k1.lam_rate,
        "eps_hk": rep.hk, "X": rep.X, "Y": rep.Y, "E": rep.E,
        "l12_drift": abs(l12(state.eps, 0.0)),
        "compat_resid": compatibility_residual(state.xi, state.phi, params),
        "diff_pref_ratio": k1.coeffs.pref_ratio,
    }
    if ctx.options.ledger_terms:
        row.update(_ledger_rates(state, ctx, k1))
    else:
        row.update({k: 0.0 for k in ("dX_scaling", "dX_transport",
                                     "dX_diffusion", "dE2_scaling",
                                     "dE2_transport", "dE2_coupling")})
    return row


@dataclass
class PhysicalState:
    """Fields mapped back to the physical frame at one rescaled time."""

    omega: ScalarField
    theta_r: ScalarField
    theta_3: ScalarField
    r_nodes: np.ndarray
    t_phys: float
    t_blowup_est: float
    lam: float


def reconstruct_physical(state: SimState, ctx: SimContext) -> PhysicalState:
    """Undo the rescaling: omega = W/lambda on the R grid, temperature
    gradients scaled by l1/lambda^2 and evaluated at ybar = l2 y.

    The blowup-time estimate t_phys + lambda is exact when lambda decays as
    e^(-s) and first-order accurate in the modulation drift otherwise.
    """
    params, grid, mod = ctx.params, ctx.grid, state.mod
    w = ctx.pack.f_star.data + state.eps.data
    omega = ScalarField(grid, w / mod.lam, Y_FRAME, ODD)
    shift = math.log(mod.l2)
    amp = mod.l1 / mod.lam ** 2
    theta_r = sigma_shift(state.xi, shift, frame=Y_FRAME)
    theta_r = theta_r.like(amp * theta_r.data)
    theta_3 = sigma_shift(state.phi, shift, frame=Y_FRAME)
    theta_3 = theta_3.like(amp * theta_3.data)
    r_nodes = mod.lam ** (1.0 + params.delta) * grid.y / mod.mu
    return PhysicalState(omega=omega, theta_r=theta_r, theta_3=theta_3,
                         r_nodes=r_nodes, t_phys=mod.t_phys,
                         t_blowup_est=mod.t_phys + mod.lam, lam=mod.lam)


def run(state: SimState, ctx: SimContext, s_end: float, dt: float,
        callback=None) -> SimState:
    """Step until the rescaled time reaches s_end (fixed dt, last step
    shortened to land on s_end)."""
    while state.mod.s < s_end - 1e-12:
        step = min(dt, s_end - state.mod.s)
        state = imex_step(state, ctx, step)
        if callback is not None:
            callback(state)
    return state
