"""Special functions: Bessel, Marcum/Nuttall, E1 and sector probabilities."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special, stats

from eio_lab import specfun
from eio_lab.rician import PosteriorParams
from eio_lab.specfun import SectorRegion

import oracles


def random_posteriors(n, seed):
    """Posterior mean, variance, region radius/half-angle and axis."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        m = rng.uniform(0.0, 3.0) * np.exp(1j * rng.uniform(-np.pi, np.pi))
        v = rng.uniform(0.1, 2.0)
        out.append((m, v, rng.uniform(0.0, 3.0), rng.uniform(0.01, np.pi), rng.uniform(-np.pi, np.pi)))
    return out


# ---------------------------------------------------------------------------
# Bessel


@pytest.mark.parametrize("order", [0, 1, 2, 7, 30])
def test_bessel_ive_matches_scipy_across_regimes(order):
    x = np.concatenate([np.linspace(0, 50, 201), np.linspace(50.5, 800, 200), np.geomspace(800, 1e7, 50)])
    got = specfun.bessel_ive(order, x)
    ref = special.ive(order, x)
    np.testing.assert_allclose(got, ref, rtol=1e-11, atol=1e-300)


def test_log_bessel_large_argument_is_finite():
    x = np.array([1e3, 1e5, 1e8])
    got = specfun.log_bessel_i(3, x)
    ref = np.log(special.ive(3, x)) + x
    np.testing.assert_allclose(got, ref, rtol=1e-12)


def test_bessel_rejects_bad_order():
    with pytest.raises(ValueError):
        specfun.bessel_i(1.5, 2.0)
    with pytest.raises(ValueError):
        specfun.bessel_i(-1, 2.0)


# ---------------------------------------------------------------------------
# Marcum and Nuttall


def test_marcum_matches_quadrature_oracle():
    rng = np.random.default_rng(11)
    for _ in range(100):
        a, b = rng.uniform(0, 12, size=2)
        assert abs(specfun.marcum_q1(a, b) - oracles.marcum_q1_quad(a, b)) < 1e-8


def test_marcum_matches_noncentral_chi2_tail():
    # Second, independent route: Q_1(a, b) = P(chi'^2_2(a^2) > b^2).
    for a, b in [(0.1, 0.3), (3, 2), (20, 15), (100, 95), (300, 299), (1000, 1001)]:
        assert specfun.marcum_q1(a, b) == pytest.approx(stats.ncx2.sf(b * b, 2, a * a), abs=1e-9)


def test_marcum_boundaries():
    assert specfun.marcum_q1(3.0, 0.0) == 1.0
    assert specfun.marcum_q1(0.0, 2.0) == pytest.approx(math.exp(-2.0), abs=1e-14)
    assert specfun.marcum_q1(1.0, 60.0) < 1e-300 + 1e-15


@pytest.mark.invariant
def test_marcum_non_increasing_in_beta_on_grid():
    grid = np.linspace(0, 8, 20)
    for a in grid:
        vals = [specfun.marcum_q1(a, b) for b in grid]
        assert np.all(np.diff(vals) <= 1e-15)


@given(st.floats(0, 30), st.floats(0, 30))
@settings(max_examples=60, deadline=None)
def test_marcum_is_a_probability_and_increases_in_alpha(a, b):
    q = specfun.marcum_q1(a, b)
    assert 0.0 <= q <= 1.0
    assert specfun.marcum_q1(a + 0.5, b) >= q - 1e-12


@pytest.mark.parametrize("order", [0, 1, 2, 5])
def test_nuttall_matches_quadrature_oracle(order):
    rng = np.random.default_rng(100 + order)
    for _ in range(25):
        a, b = rng.uniform(0, 10, size=2)
        assert abs(specfun.nuttall_q(order, a, b) - oracles.nuttall_quad(order, a, b)) < 1e-8


def test_nuttall_orders_agree_with_single_order():
    for a, b in [(0.5, 0.2), (3.0, 2.5), (8.0, 9.0)]:
        batch = specfun.nuttall_q_orders(6, a, b)
        single = [specfun.nuttall_q(k, a, b) for k in range(7)]
        np.testing.assert_allclose(batch, single, atol=1e-11)


def test_perturbed_bessel_is_detected_by_marcum_oracle():
    a, b = 4.0, 3.5
    clean = specfun.marcum_q1(a, b)
    with specfun.perturbed_bessel(1e-6):
        faulty = specfun.marcum_q1(a, b)
    assert abs(faulty - oracles.marcum_q1_quad(a, b)) > 1e-8
    assert abs(clean - oracles.marcum_q1_quad(a, b)) < 1e-10


# ---------------------------------------------------------------------------
# Exponential integral


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_e1_matches_quadrature_and_scipy():
    for z in np.geomspace(1e-8, 700, 100):
        got = specfun.exp_integral_e1(z)
        assert abs(got - oracles.e1_quad(z)) <= 1e-8 * max(1.0, got)
        assert got == pytest.approx(special.exp1(z), rel=1e-13)


def test_e1_scaled_for_large_argument():
    assert specfun.exp_integral_e1_scaled(10.0) == pytest.approx(special.exp1(10.0) * math.exp(10.0), rel=1e-13)
    for z in [1e3, 1e6]:
        asym = sum((-1) ** k * math.factorial(k) / z ** (k + 1) for k in range(6))
        assert specfun.exp_integral_e1_scaled(z) == pytest.approx(asym, rel=1e-13)


def test_e1_rejects_nonpositive():
    with pytest.raises(ValueError):
        specfun.exp_integral_e1(0.0)


@pytest.mark.invariant
def test_expected_log2_affine_matches_monte_carlo():
    rng = np.random.default_rng(5)
    for _ in range(20):
        A, B, P = rng.uniform(0.1, 3), rng.uniform(0.1, 3), rng.uniform(0.1, 30)
        n = 10**7
        x2 = rng.exponential(P, size=n)  # |x|^2 for x ~ CN(0, P)
        f = np.log2(A + B * x2)
        mean, se = f.mean(), f.std() / math.sqrt(n)
        assert abs(specfun.expected_log2_affine(A, B, P) - mean) < 3 * se + 1e-12


# ---------------------------------------------------------------------------
# Sector mass


@pytest.mark.parametrize("method", ["series", "quadrature", "radial"])
def test_sector_mass_matches_polar_quadrature(method):
    for m, v, r, phi, c in random_posteriors(100, 3):
        region = SectorRegion(r, phi, center=c)
        got = specfun.sector_mass(region, PosteriorParams(m, v, 0.5), method=method)
        assert abs(got - oracles.sector_mass_quad(r, phi, m, v, c)) < 1e-8


@pytest.mark.invariant
def test_sector_series_matches_two_d_quadrature_method():
    for m, v, r, phi, c in random_posteriors(100, 4):
        post = PosteriorParams(m, v, 0.5)
        region = SectorRegion(r, phi, center=c)
        assert abs(specfun.sector_mass(region, post) - specfun.sector_mass(region, post, "quadrature")) < 1e-8


def test_full_circle_sector_reduces_to_marcum():
    for m, v, r, _, _ in random_posteriors(50, 6):
        got = specfun.sector_mass(SectorRegion(r, math.pi), PosteriorParams(m, v, 0.5))
        ref = specfun.marcum_q1(abs(m) * math.sqrt(2 / v), r * math.sqrt(2 / v))
        assert abs(got - ref) < 1e-8


@pytest.mark.invariant
def test_sector_mass_monotone_in_radius_and_angle():
    post = PosteriorParams(1.2 * np.exp(0.4j), 0.5, 0.5)
    radii = np.linspace(0, 3, 13)
    angles = np.linspace(0.05, math.pi, 13)
    M = np.array([[specfun.sector_mass(SectorRegion(r, p, center=0.0), post) for p in angles] for r in radii])
    assert np.all(np.diff(M, axis=0) <= 1e-12)
    assert np.all(np.diff(M, axis=1) >= -1e-12)


@pytest.mark.invariant
def test_two_term_approximation_against_full_series():
    # Same random posteriors as the series/quadrature check.
    worst = 0.0
    for m, v, r, phi, c in random_posteriors(100, 4):
        post = PosteriorParams(m, v, 0.5)
        region = SectorRegion(r, phi, center=c)
        worst = max(worst, abs(specfun.sector_mass_two_term(region, post) - specfun.sector_mass(region, post)))
    assert worst < 2e-2, f"two-term truncation off by up to {worst:.3g}"


def test_two_term_approximation_is_close_for_diffuse_posteriors():
    rng = np.random.default_rng(9)
    for _ in range(100):
        v = 1.0
        m = 0.3 * math.sqrt(v / 2) * np.exp(1j * rng.uniform(-np.pi, np.pi))
        region = SectorRegion(rng.uniform(0, 2), rng.uniform(0.01, np.pi), center=0.0)
        post = PosteriorParams(m, v, 0.5)
        assert abs(specfun.sector_mass_two_term(region, post) - specfun.sector_mass(region, post)) < 2e-2


def test_sector_series_falls_back_with_warning():
    post = PosteriorParams(50.0 + 0j, 0.01, 0.5)
    region = SectorRegion(49.95, 0.002, center=0.0)
    with pytest.warns(specfun.SeriesFallbackWarning):
        got = specfun.sector_mass(region, post)
    assert got == pytest.approx(oracles.sector_mass_quad(49.95, 0.002, 50.0 + 0j, 0.01, 0.0), abs=1e-8)


def test_sector_region_validation():
    with pytest.raises(ValueError):
        SectorRegion(-0.1, 1.0)
    with pytest.raises(ValueError):
        SectorRegion(0.1, 4.0)


def test_radial_form_is_vectorized():
    r = np.array([0.0, 0.5, 1.0])
    out = specfun.sector_mass_radial(r, 1.0, 1.0, 0.2, 0.5)
    assert out.shape == (3,)
    assert np.all(np.diff(out) < 0)
