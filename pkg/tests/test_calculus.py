"""Oracle and property tests for the derivative operators and functionals.

Expected values come from closed forms, symbolic derivatives, scipy
quadrature, or self-convergence — never from the code path under test.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from bqlab import calculus as C
from bqlab.errors import FrameError, ParityError
from bqlab.grid import (EVEN, ODD, Params, ScalarField, Y_FRAME, YBAR_FRAME,
                        build_grid)
from conftest import even_bump, gaussian_field, odd_bump


def _tile_beta(grid, values, frame, parity):
    return ScalarField(grid, np.tile(values, (grid.n_sigma, 1)), frame, parity)


def _tile_sigma(grid, values, frame, parity):
    return ScalarField(grid, np.tile(values[:, None], (1, grid.n_beta)),
                       frame, parity)


class TestDerivatives:
    def test_constant_has_zero_sigma_derivative(self, grid64):
        f = _tile_beta(grid64, np.ones(grid64.n_beta), Y_FRAME, EVEN)
        assert np.abs(C.apply_derivative(f, C.D_SIGMA).data).max() < 1e-14

    def test_partial_beta_analytic_and_order(self):
        errs = {}
        for n in (64, 128):
            p = Params(alpha=0.1, n_beta=n, n_sigma=17)
            g = build_grid(p)
            f = _tile_beta(g, np.sin(2 * g.beta), Y_FRAME, ODD)
            d = C.apply_derivative(f, C.PARTIAL_BETA)
            errs[n] = np.abs(d.data - 2 * np.cos(2 * g.beta)).max()
        assert errs[64] < 1e-5
        assert errs[64] / errs[128] == pytest.approx(16, rel=0.2)

    def test_d_sigma_analytic_and_order(self):
        errs = {}
        for n in (129, 257):
            p = Params(alpha=0.1, n_beta=16, n_sigma=n)
            g = build_grid(p)
            f = _tile_sigma(g, g.y / (1 + g.y), Y_FRAME, EVEN)
            d = C.apply_derivative(f, C.D_SIGMA)
            ref = (g.y / (1 + g.y) ** 2)[:, None]
            errs[n] = np.abs(d.data - ref).max()
        assert errs[129] < 1e-3
        assert errs[129] / errs[257] == pytest.approx(16, rel=0.25)

    def test_d_rhobar_is_alpha_d_sigma(self, grid64, params64):
        f = odd_bump(grid64, frame=Y_FRAME)
        a = C.apply_derivative(f, C.D_RHOBAR, alpha=params64.alpha)
        b = C.apply_derivative(f, C.D_SIGMA)
        assert np.array_equal(a.data, params64.alpha * b.data)
        with pytest.raises(ValueError):
            C.apply_derivative(f, C.D_RHOBAR)

    def test_unknown_op_rejected(self, grid64):
        with pytest.raises(ValueError):
            C.apply_derivative(grid64.zeros(Y_FRAME, ODD), "D_NOPE")

    def test_parity_none_rejected_for_beta_ops(self, grid64):
        f = grid64.zeros(Y_FRAME, ("none", "none"))
        with pytest.raises(ParityError):
            C.apply_derivative(f, C.PARTIAL_BETA)
        # sigma derivative does not need parity
        C.apply_derivative(f, C.D_SIGMA)

    def test_parity_tag_propagation(self, grid64):
        f = odd_bump(grid64)
        assert C.apply_derivative(f, C.PARTIAL_BETA).parity == EVEN
        assert C.apply_derivative(f, C.D_BETA).parity == ODD
        assert C.apply_derivative(f, C.D_SIGMA).parity == ODD


class TestLaplaceTilde:
    def test_constant_maps_to_zero(self, grid64, params64):
        f = _tile_beta(grid64, np.ones(grid64.n_beta), YBAR_FRAME, EVEN)
        out = C.laplace_tilde(f, params64.alpha)
        assert np.abs(out.data).max() < 1e-12

    def test_cos_beta_symbolic(self, grid64, params64):
        # (1/cos b) d_b(cos b d_b cos b) = -cos(2b)/cos(b); radial terms vanish
        f = _tile_beta(grid64, grid64.cos_b, YBAR_FRAME, ("even", "odd"))
        out = C.laplace_tilde(f, params64.alpha)
        ref = -grid64.cos_2b / grid64.cos_b
        assert np.abs(out.data - ref).max() < 1e-5

    def test_radial_quadratic_closed_form(self):
        # ybar^2 -> alpha^2 * 4 ybar^2 + alpha * 2 ybar^2
        p = Params(alpha=0.1, n_beta=16, n_sigma=129, sigma_min=-4,
                   sigma_max=4)
        g = build_grid(p)
        f = _tile_sigma(g, np.exp(2 * g.sigma), YBAR_FRAME, EVEN)
        out = C.laplace_tilde(f, p.alpha)
        ref = (p.alpha ** 2 * 4 + p.alpha * 2) * np.exp(2 * g.sigma)[:, None]
        rel = np.abs(out.data - ref) / ref
        assert rel.max() < 1e-3

    def test_frame_check(self, grid64, params64):
        with pytest.raises(FrameError):
            C.laplace_tilde(grid64.zeros(Y_FRAME, ODD), params64.alpha)


class TestL12:
    def test_zero(self, grid64):
        assert C.l12(grid64.zeros(Y_FRAME, ODD), 0.0) == 0.0

    def test_separable_beta_identity(self):
        # f = (z/(1+z)^2) sin b cos^2 b, y0=0 -> 3 pi/32
        p = Params(alpha=0.1, n_beta=512, n_sigma=513)
        g = build_grid(p)
        f = ScalarField(g, np.outer(g.y / (1 + g.y) ** 2,
                                    g.sin_b * g.cos_b ** 2), Y_FRAME, ODD)
        assert C.l12(f, 0.0) == pytest.approx(3 * np.pi / 32, rel=1e-7)

    def test_y0_above_truncation_rejected(self, grid64):
        with pytest.raises(ValueError):
            C.l12(odd_bump(grid64, frame=Y_FRAME), 1e12)

    def test_additivity_in_lower_limit(self):
        # L12(f)(y0) - L12(f)(y1) is the strip integral; use the closed-form
        # profile radial factor where the strip has an antiderivative
        p = Params(alpha=0.1, n_beta=256, n_sigma=513)
        g = build_grid(p)
        f = ScalarField(g, np.outer(g.y / (1 + g.y) ** 2,
                                    g.sin_b * g.cos_b ** 2), Y_FRAME, ODD)
        kb = 3 * np.pi / 32 / 1.0   # angular integral of K * sin b cos^2 b
        for y0, y1 in ((0.5, 1.5), (1.0, 4.0)):
            strip = C.l12(f, y0) - C.l12(f, y1)
            exact = kb * (1 / (1 + y0) - 1 / (1 + y1))
            assert strip == pytest.approx(exact, rel=1e-6)


class TestHkNorm:
    def test_zero(self, grid64, params64):
        assert C.hk_norm(grid64.zeros(Y_FRAME, ODD), 2, params64) == 0.0

    def test_f_star_k0_against_independent_assembly(self):
        """k=0 norm of the explicit profile vs an independent-path oracle:
        closed-form radial integral times a directly coded angular sum.

        The angular weight Gamma^2 sin(2b)^(-eta) puts most of its mass in
        the endpoint cells, so the grid value is compared at the same n_beta
        (the continuum limit converges only like h^(1-eta+2a/3))."""
        from bqlab.profiles import build_profile
        p = Params(alpha=0.1, n_beta=512, n_sigma=513)
        g = build_grid(p)
        pack = build_profile(p, g)
        num = C.hk_norm(pack.f_star, 0, p)
        # oracle: (4a/c)^2 * int e^-sigma dsigma * sum Gamma^2 sin(2b)^-eta h
        gam = (np.sin(g.beta) * np.cos(g.beta) ** 2) ** (p.alpha / 3)
        kb = 3 * np.sin(g.beta) * np.cos(g.beta) ** 2
        c = (kb * gam).sum() * g.w_beta
        radial = np.exp(20.0) - np.exp(-20.0)
        angular = (gam ** 2 * np.sin(2 * g.beta) ** (-p.eta)).sum() * g.w_beta
        ref = (4 * p.alpha / c) * np.sqrt(radial * angular)
        assert num == pytest.approx(ref, rel=1e-3)

    def test_smooth_field_self_convergence(self):
        # sin(2b) y^2/(1+y)^4 at k=2: successive differences shrink fast
        vals = {}
        for n in (256, 512, 1024):
            p = Params(alpha=0.1, n_beta=n, n_sigma=n + 1)
            g = build_grid(p)
            f = ScalarField(g, np.outer(g.y ** 2 / (1 + g.y) ** 4, g.sin_2b),
                            Y_FRAME, ODD)
            vals[n] = C.hk_norm(f, 2, p)
        d1 = abs(vals[512] - vals[256])
        d2 = abs(vals[1024] - vals[512])
        assert np.isfinite(vals[1024]) and vals[1024] > 0
        assert d1 / vals[1024] < 1e-4
        assert d1 / d2 > 7.0      # measured ~14 (mixed 4th-order/quadrature)

    def test_monotone_in_k(self, grid128, params128):
        f = odd_bump(grid128, frame=Y_FRAME)
        norms = [C.hk_norm(f, k, params128) for k in range(5)]
        assert all(b >= a for a, b in zip(norms, norms[1:]))

    def test_frame_check(self, grid64, params64):
        with pytest.raises(FrameError):
            C.hk_norm(odd_bump(grid64, frame=YBAR_FRAME), 1, params64)


class TestWInner:
    def test_zero(self, grid64, params64):
        z = grid64.zeros(YBAR_FRAME, ODD)
        for which in (C.W1, C.W2, C.W3):
            assert C.w_inner(z, z, which, 2, params64) == 0.0

    def test_w1_separable_reference(self):
        p = Params(alpha=0.1, n_beta=256, n_sigma=257)
        g = build_grid(p)
        f = odd_bump(g)
        num = C.w_inner(f, f, C.W1, 0, p)
        rad = quad(lambda s: np.exp(-2 * s * s + 3 * s / p.alpha),
                   -20, 20, limit=200)[0] / p.alpha
        ang = quad(lambda b: np.sin(2 * b) ** (4 - p.eta), 0, np.pi / 2)[0]
        assert num == pytest.approx(rad * ang, rel=1e-6)

    def test_w2_smaller_on_right_shifted_support(self):
        p = Params(alpha=0.1, n_beta=128, n_sigma=129)
        g = build_grid(p)
        f = odd_bump(g, center=3.0)
        assert (C.w_inner(f, f, C.W2, 0, p)
                < C.w_inner(f, f, C.W1, 0, p))

    def test_frame_mismatch(self, grid64, params64):
        with pytest.raises(FrameError):
            C.w_inner(odd_bump(grid64, frame=Y_FRAME),
                      odd_bump(grid64), C.W1, 0, params64)

    @given(a=st.floats(-3.0, 3.0, allow_nan=False))
    @settings(max_examples=20, deadline=None)
    def test_bilinearity_and_symmetry(self, a):
        p = Params(alpha=0.1, n_beta=32, n_sigma=33)
        g = build_grid(p)
        f = odd_bump(g)
        h = odd_bump(g, center=0.8, width=1.3)
        combo = f.like(a * f.data + h.data)
        for which in (C.W1, C.W2):
            lhs = C.w_inner(combo, h, which, 1, p)
            rhs = (a * C.w_inner(f, h, which, 1, p)
                   + C.w_inner(h, h, which, 1, p))
            scale = abs(C.w_inner(h, h, which, 1, p)) + abs(lhs)
            assert abs(lhs - rhs) <= 1e-12 * scale
            assert (C.w_inner(f, h, which, 1, p)
                    == pytest.approx(C.w_inner(h, f, which, 1, p),
                                     rel=1e-12))

    def test_hk_inner_symmetry_bilinearity(self):
        p = Params(alpha=0.1, n_beta=32, n_sigma=33)
        g = build_grid(p)
        f = odd_bump(g, frame=Y_FRAME)
        h = odd_bump(g, frame=Y_FRAME, center=-0.5, width=0.7)
        assert (C.hk_inner(f, h, 2, p)
                == pytest.approx(C.hk_inner(h, f, 2, p), rel=1e-12))
        combo = f.like(2.5 * f.data)
        assert (C.hk_inner(combo, h, 2, p)
                == pytest.approx(2.5 * C.hk_inner(f, h, 2, p), rel=1e-12))


class TestEnergy:
    def test_all_zero(self, grid64, params64):
        z_y = grid64.zeros(Y_FRAME, ODD)
        z1 = grid64.zeros(YBAR_FRAME, ODD)
        z2 = grid64.zeros(YBAR_FRAME, EVEN)
        rep = C.energy_xye(z_y, z1, z2, 2, params64)
        assert rep.X == rep.Y == rep.E == 0.0

    def test_eps_zero_energy_is_scaled_x(self, grid64, params64):
        z_y = grid64.zeros(Y_FRAME, ODD)
        xi = odd_bump(grid64)
        ph = even_bump(grid64)
        k = 2
        rep = C.energy_xye(z_y, xi, ph, k, params64, c_embed=1.0)
        assert rep.E == pytest.approx(
            params64.alpha ** (-2 * k + 1) * rep.X, rel=1e-14)
        rep2 = C.energy_xye(z_y, xi, ph, k, params64, c_embed=3.0)
        assert rep2.E == pytest.approx(3 * rep.E, rel=1e-14)

    def test_report_invariant_x_assembly(self, grid64, params64):
        xi = odd_bump(grid64)
        ph = even_bump(grid64)
        eps = odd_bump(grid64, frame=Y_FRAME)
        rep = C.energy_xye(eps, xi, ph, 2, params64)
        assert rep.X == pytest.approx(
            rep.w1 ** 2 + rep.w2 ** 2 + rep.w3 ** 2, rel=1e-14)
        assert rep.Y > 0

    def test_embedding_ratio_bounded(self, grid128, params128):
        """max|g| <= C alpha^(-1/2) |g|_H2 across 50 seeded fields; the grid
        constant 0.02 was recorded from the first run of this oracle
        (observed max 0.0115)."""
        from bqlab.verify import random_admissible
        rng = np.random.default_rng(12345)
        worst = 0.0
        for _ in range(50):
            f = random_admissible(grid128, rng, "odd", Y_FRAME)
            h2 = C.hk_norm(f, 2, params128)
            if h2 > 0:
                worst = max(worst, np.abs(f.data).max()
                            * np.sqrt(params128.alpha) / h2)
        assert worst < 0.02


class TestSigmaShift:
    def test_mass_preserved_to_interpolation_error(self):
        p = Params(alpha=0.1, n_beta=16, n_sigma=513)
        g = build_grid(p)
        f = odd_bump(g, width=4.0)
        shifted = C.sigma_shift(f, 0.37)
        m0 = np.sqrt((f.data ** 2).sum())
        m1 = np.sqrt((shifted.data ** 2).sum())
        assert abs(m1 - m0) / m0 < 1e-6

    def test_zero_shift_identity(self, grid64):
        f = odd_bump(grid64)
        assert np.allclose(C.sigma_shift(f, 0.0).data, f.data, atol=1e-15)

    @given(shift=st.floats(-1.5, 1.5, allow_nan=False))
    @settings(max_examples=15, deadline=None)
    def test_shift_roundtrip(self, shift):
        p = Params(alpha=0.1, n_beta=16, n_sigma=257)
        g = build_grid(p)
        f = odd_bump(g, width=3.0)
        back = C.sigma_shift(C.sigma_shift(f, shift), -shift)
        mask = np.abs(g.sigma) < 10
        assert np.abs(back.data[mask] - f.data[mask]).max() < 1e-4
