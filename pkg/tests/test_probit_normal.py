import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fragfield.errors import (
    DomainError,
    InfeasibleMomentsError,
    InfeasibleSeparationError,
    InvalidInputError,
)
from fragfield.probit_normal import (
    CapacityLaw,
    HazardLaw,
    PnMarginal,
    PnMoments,
    _phi2_correction_gl,
    bivariate_equal_cdf,
    clip_ordinal_probit,
    latent_from_physics,
    pn_from_moments,
    pn_from_moments_vec,
    pn_moments,
    pn_moments_vec,
    std_normal_cdf,
    std_normal_quantile,
)


class TestStdNormal:
    def test_cdf_at_zero(self):
        assert std_normal_cdf(0.0) == 0.5

    def test_cdf_reference_value(self):
        # classic two-sided 95% point
        assert std_normal_cdf(1.959964) == pytest.approx(0.975, abs=1e-6)

    def test_quantile_at_half(self):
        assert std_normal_quantile(0.5) == 0.0

    def test_round_trip(self):
        # Phi(x) stored as a double near 1 carries at best ~eps/2 absolute
        # error, which the quantile amplifies by 1/phi(x); allow that floor
        # on top of the nominal 1e-9 tolerance.
        xs = np.linspace(-6.0, 6.0, 61)
        back = std_normal_quantile(std_normal_cdf(xs))
        phi = np.exp(-0.5 * xs**2) / math.sqrt(2 * math.pi)
        tol = 1e-9 + 0.5 * np.finfo(float).eps / phi
        assert np.all(np.abs(back - xs) < tol)
        inner = np.abs(xs) <= 5.0
        assert np.max(np.abs(back[inner] - xs[inner])) < 1e-9

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.1])
    def test_quantile_domain(self, p):
        with pytest.raises(DomainError):
            std_normal_quantile(p)


def _mc_phi2(h, rho, z1, z2):
    """Monte-Carlo oracle for Phi2(h, h, rho) from shared N(0,1) draws."""
    y = rho * z1 + math.sqrt(1.0 - rho * rho) * z2
    hit = (z1 <= h) & (y <= h)
    p = hit.mean()
    se = math.sqrt(max(p * (1 - p), 1e-12) / len(z1))
    return p, se


class TestBivariateEqualCdf:
    def test_independence(self):
        assert bivariate_equal_cdf(0.0, 0.0) == 0.25

    def test_closed_form_arcsin(self):
        # Phi2(0,0,rho) = 1/4 + arcsin(rho)/(2*pi)
        assert bivariate_equal_cdf(0.0, 0.5) == pytest.approx(1.0 / 3.0, abs=1e-10)
        assert bivariate_equal_cdf(0.0, -0.5) == pytest.approx(
            0.25 - math.asin(0.5) / (2 * math.pi), abs=1e-10
        )

    def test_limits(self):
        assert bivariate_equal_cdf(0.7, 1.0) == pytest.approx(std_normal_cdf(0.7))
        assert bivariate_equal_cdf(0.7, -1.0) == pytest.approx(
            2 * std_normal_cdf(0.7) - 1
        )
        assert bivariate_equal_cdf(-0.7, -1.0) == 0.0

    def test_monotone_in_rho(self):
        rhos = np.linspace(-0.99, 0.99, 41)
        vals = [bivariate_equal_cdf(0.8, r) for r in rhos]
        assert np.all(np.diff(vals) > 0)

    def test_bounds(self):
        for h in (-2.0, -0.3, 0.0, 1.2, 3.0):
            for r in (-0.9, -0.2, 0.0, 0.4, 0.97):
                val = bivariate_equal_cdf(h, r)
                assert 0.0 <= val <= std_normal_cdf(h) + 1e-15

    def test_domain_error(self):
        with pytest.raises(DomainError):
            bivariate_equal_cdf(0.0, 1.5)

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(42)
        z1 = rng.standard_normal(10_000_000)
        z2 = rng.standard_normal(10_000_000)
        for h, rho in [(1.0, 0.25), (1.0, 0.75)]:
            est, _ = _mc_phi2(h, rho, z1, z2)
            assert bivariate_equal_cdf(h, rho) == pytest.approx(est, abs=5e-4)
        # broader sweep: stay within 3 sigma of the MC error
        for _ in range(20):
            h = rng.uniform(-2.5, 2.5)
            rho = rng.uniform(-0.95, 0.95)
            est, se = _mc_phi2(h, rho, z1, z2)
            assert abs(bivariate_equal_cdf(h, rho) - est) < 3 * se + 1e-6

    def test_gauss_legendre_matches_adaptive(self):
        for h in np.linspace(-3, 3, 13):
            for rho in np.linspace(-0.98, 0.98, 9):
                gl = std_normal_cdf(h) ** 2 + _phi2_correction_gl(h, rho)
                assert gl == pytest.approx(bivariate_equal_cdf(h, rho), abs=1e-12)


class TestPnMoments:
    def test_degenerate(self):
        mo = pn_moments(PnMarginal(0.0, 0.0))
        assert mo.m == 0.5 and mo.zeta == 0.0

    def test_unit_variance_is_uniform(self):
        mo = pn_moments(PnMarginal(0.0, 1.0))
        assert mo.m == pytest.approx(0.5, abs=1e-14)
        assert mo.zeta == pytest.approx(1.0 / 12.0, abs=1e-12)

    def test_large_variance_limit(self):
        mo = pn_moments(PnMarginal(0.0, 1e8))
        assert mo.m == 0.5
        assert mo.zeta == pytest.approx(0.25, abs=1e-3)

    @given(
        mu=st.floats(-8, 8),
        sigma2=st.floats(0, 50),
    )
    @settings(max_examples=200)
    def test_feasibility_envelope(self, mu, sigma2):
        mo = pn_moments(PnMarginal(mu, sigma2))
        assert 0.0 < mo.m < 1.0
        assert 0.0 <= mo.zeta <= mo.m * (1.0 - mo.m)
        if sigma2 > 0:
            assert mo.zeta < mo.m * (1.0 - mo.m)

    @given(
        mu=st.floats(-5, 4.9),
        delta=st.floats(0.1, 3),
        sigma2=st.floats(0, 10),
    )
    @settings(max_examples=100)
    def test_mean_monotone_in_mu(self, mu, delta, sigma2):
        lo = pn_moments(PnMarginal(mu, sigma2))
        hi = pn_moments(PnMarginal(mu + delta, sigma2))
        assert hi.m > lo.m

    def test_zeta_vanishes_with_sigma(self):
        zetas = [pn_moments(PnMarginal(0.7, s2)).zeta for s2 in (1.0, 0.1, 0.01, 1e-4)]
        assert all(a > b for a, b in zip(zetas, zetas[1:]))
        assert zetas[-1] < 1e-4


class TestPnFromMoments:
    def test_uniform_case(self):
        p = pn_from_moments(PnMoments(0.5, 1.0 / 12.0))
        assert p.mu == pytest.approx(0.0, abs=1e-9)
        assert p.sigma2 == pytest.approx(1.0, abs=1e-6)

    def test_zero_variance(self):
        p = pn_from_moments(PnMoments(0.5, 0.0))
        assert p == PnMarginal(0.0, 0.0)

    def test_infeasible(self):
        with pytest.raises(InfeasibleMomentsError):
            pn_from_moments(PnMoments(0.5, 0.25))
        with pytest.raises(InfeasibleMomentsError):
            pn_from_moments(PnMoments(0.5, 0.3))
        with pytest.raises(InvalidInputError):
            pn_from_moments(PnMoments(0.0, 0.01))

    def test_round_trip_grid(self):
        for mu in (-2.0, -1.0, 0.0, 1.0, 2.0):
            for s2 in (0.1, 0.5, 1.0, 2.0):
                mo = pn_moments(PnMarginal(mu, s2))
                back = pn_from_moments(mo)
                assert back.mu == pytest.approx(mu, abs=1e-6)
                assert back.sigma2 == pytest.approx(s2, abs=1e-6)

    def test_moment_reproduction(self):
        mo = PnMoments(0.23, 0.04)
        p = pn_from_moments(mo)
        out = pn_moments(p)
        assert out.m == pytest.approx(mo.m, abs=1e-8)
        assert out.zeta == pytest.approx(mo.zeta, abs=1e-8)

    def test_near_bernoulli_cap(self):
        p = pn_from_moments(PnMoments(0.5, 0.25 - 1e-12))
        assert p.sigma2 == pytest.approx(1e6)

    def test_vectorized_matches_scalar(self):
        m = np.array([0.1, 0.4, 0.9])
        zeta = np.array([0.02, 0.1, 0.05])
        mus, s2s = pn_from_moments_vec(m, zeta)
        for i in range(3):
            p = pn_from_moments(PnMoments(m[i], zeta[i]))
            assert mus[i] == pytest.approx(p.mu, abs=1e-10)
            assert s2s[i] == pytest.approx(p.sigma2, abs=1e-8)


class TestLatentFromPhysics:
    def test_equal_medians(self):
        p = latent_from_physics(
            HazardLaw(math.log(50), 0.0), CapacityLaw(math.log(50), 0.0, 0.4)
        )
        assert p == PnMarginal(0.0, 0.0)

    def test_epistemic_variance(self):
        p = latent_from_physics(
            HazardLaw(math.log(50), 0.09), CapacityLaw(math.log(50), 0.40, 0.4)
        )
        assert p.sigma2 == pytest.approx(1.050625, abs=1e-12)

    def test_mean_scaling(self):
        p = latent_from_physics(
            HazardLaw(math.log(100), 0.0), CapacityLaw(math.log(50), 0.0, 0.5)
        )
        assert p.mu == pytest.approx(math.log(2) / 0.5, abs=1e-12)

    def test_invalid(self):
        with pytest.raises(InvalidInputError):
            HazardLaw(math.nan, 0.1)
        with pytest.raises(InvalidInputError):
            CapacityLaw(1.0, 0.1, 0.0)


class TestClipOrdinalProbit:
    def test_upper_cascade(self):
        assert clip_ordinal_probit([5.0, 4.0, 3.5]) == pytest.approx([3.0, 2.95, 2.90])

    def test_untouched(self):
        assert clip_ordinal_probit([1.0, 0.5, -0.2]) == [1.0, 0.5, -0.2]

    def test_lower_cascade(self):
        assert clip_ordinal_probit([-4.0, -4.0, -4.0]) == pytest.approx(
            [-2.90, -2.95, -3.00]
        )

    def test_mixed_bounds(self):
        out = clip_ordinal_probit([5.0, 0.0, -5.0])
        assert out == pytest.approx([3.0, 0.0, -3.0])

    def test_upper_chain_presses_unclipped_value(self):
        # the third value never hits the bound but sits inside the descending
        # clip chain, so it is pressed down with the same separation
        out = clip_ordinal_probit([5.0, 4.0, 2.97])
        assert out == pytest.approx([3.0, 2.95, 2.90])

    def test_lower_chain_pushes_unclipped_value(self):
        out = clip_ordinal_probit([-2.97, -4.0, -4.1])
        assert out == pytest.approx([-2.90, -2.95, -3.00])

    def test_interior_inversion_clamps_without_separation(self):
        # inversions that owe nothing to clipping resolve to a tie
        out = clip_ordinal_probit([-1.0, -1.88, -1.84])
        assert out == pytest.approx([-1.0, -1.88, -1.88])

    def test_infeasible_separation(self):
        with pytest.raises(InfeasibleSeparationError):
            clip_ordinal_probit([1.0, 0.5, 0.0], bound=0.05, separation=0.05)

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=6))
    @settings(max_examples=300)
    def test_ordinality_and_bounds(self, mus):
        out = clip_ordinal_probit(mus)
        assert all(a >= b - 1e-12 for a, b in zip(out, out[1:]))
        assert all(-3.0 - 1e-12 <= x <= 3.0 + 1e-12 for x in out)
        # a moved interior value is always explained by a neighbour: pressed
        # onto the chain below its predecessor or lifted above its successor
        for j, (raw, clipped) in enumerate(zip(mus, out)):
            if -3.0 < raw < 3.0 and clipped != raw:
                explained = (
                    j > 0 and clipped in (out[j - 1], pytest.approx(out[j - 1] - 0.05))
                ) or (j < len(out) - 1 and clipped == pytest.approx(out[j + 1] + 0.05))
                assert explained

    @given(
        st.lists(st.floats(-2.99, 2.99), min_size=1, max_size=6).map(
            lambda xs: sorted(xs, reverse=True)
        )
    )
    @settings(max_examples=200)
    def test_in_band_ordered_input_passes_through(self, mus):
        assert clip_ordinal_probit(mus) == mus
