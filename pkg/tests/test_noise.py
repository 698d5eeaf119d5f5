import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from gtwr import noise
from gtwr.noise import (CovarianceFactorization, FactorizationError, NoiseDomainError, NoiseSpec,
                        build_cov_factorization, fbm_cov, riesz_constant, sample_noise, sigma_sq,
                        sigma_sq_exact, spatial_increment_cov, temporal_increment_cov)
from gtwr.stgrid import RegularDesign, ball_volume


def test_riesz_constant_examples():
    assert riesz_constant(1.0, 2) == pytest.approx(2 * math.pi, rel=1e-14)
    assert riesz_constant(1.0, 3) == pytest.approx(4 * math.pi, rel=1e-14)
    with pytest.raises(NoiseDomainError):
        riesz_constant(2.0, 2)
    with pytest.raises(NoiseDomainError):
        riesz_constant(0.0, 2)


def test_riesz_constant_is_a_fourier_pair():
    # d = 1: ∫ γ |x|^(α-1) φ(x) dx = ∫ |ξ|^-α φ̂(ξ) dξ for φ = e^{-x²/2}, φ̂ = sqrt(2π) e^{-ξ²/2}
    alpha = 0.5
    lhs = riesz_constant(alpha, 1) * 2 * integrate.quad(lambda x: x ** (alpha - 1) * math.exp(-x * x / 2),
                                                        0, np.inf)[0]
    rhs = 2 * integrate.quad(lambda k: k ** (-alpha) * math.exp(-k * k / 2), 0, np.inf)[0] * math.sqrt(2 * math.pi)
    assert lhs == pytest.approx(rhs, rel=1e-8)


def test_fbm_cov_examples():
    for H in (0.3, 0.5, 0.75):
        assert fbm_cov(1.0, 1.0, H) == pytest.approx(1.0)
        assert fbm_cov(1.0, 0.0, H) == 0.0
    assert fbm_cov(2.0, 3.0, 0.5) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        fbm_cov(-1.0, 1.0, 0.7)


def test_temporal_examples():
    assert temporal_increment_cov(0.4, 0.4, 0.5, 0.75) == pytest.approx(1.0, rel=1e-15)
    expected = 0.5 * (0.5 ** 1.5 + 0.1 ** 1.5 - 2 * 0.3 ** 1.5)
    assert temporal_increment_cov(0.0, 0.3, 0.1, 0.75) == pytest.approx(expected, rel=1e-12)
    assert temporal_increment_cov(0.0, 0.3, 0.1, 0.75) == pytest.approx(0.028271, abs=1e-6)


def test_temporal_matches_fbm_increment_covariance():
    # Cov(B(t+δ) - B(t-δ), B(s+δ) - B(s-δ)) from the fBm covariance directly
    H, delta = 0.7, 0.05
    for t, s in [(0.3, 0.3), (0.3, 0.35), (0.3, 0.5), (0.9, 0.2)]:
        direct = (fbm_cov(t + delta, s + delta, H) - fbm_cov(t + delta, s - delta, H)
                  - fbm_cov(t - delta, s + delta, H) + fbm_cov(t - delta, s - delta, H))
        assert temporal_increment_cov(t, s, delta, H) == pytest.approx(direct, rel=1e-10, abs=1e-15)


@settings(max_examples=300)
@given(st.floats(0, 5), st.floats(0, 5), st.floats(1e-3, 1), st.floats(0.5, 0.99))
def test_temporal_symmetric_and_nonnegative(t, s, delta, H):
    a = temporal_increment_cov(t, s, delta, H)
    assert a == temporal_increment_cov(s, t, delta, H)
    assert a >= -1e-12 * (2 * delta) ** (2 * H)


def test_brownian_case_vanishes():
    rng = np.random.default_rng(5)
    delta = rng.uniform(1e-3, 1, 1000)
    dt = 2 * delta * (1 + rng.exponential(1.0, 1000))
    dt[:10] = 2 * delta[:10]
    vals = temporal_increment_cov(np.zeros(1000), dt, delta, 0.5)
    assert np.all(vals == 0.0)


def test_sigma_sq_white_noise_exact():
    assert sigma_sq(0.0, 2) == (math.pi, 0.0)
    assert sigma_sq_exact(0.0, 3) == ball_volume(3)


def _sigma_sq_oracle(alpha, d):
    """γ ∫∫_{B×B} |u-v|^(α-d) via the radial form with the lens volume from 1-D quadrature."""
    def lens(rho):
        # volume of B(0,1) ∩ B(ρe,1) by slicing along e
        if rho >= 2:
            return 0.0
        a = ball_volume(d - 1) if d > 1 else 1.0
        f = lambda x: a * max(0.0, 1 - max(abs(x), abs(x - rho)) ** 2) ** ((d - 1) / 2)
        return integrate.quad(f, rho - 1, 1, limit=200)[0]
    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    val = integrate.quad(lambda r: r ** (alpha - 1) * lens(r), 0, 2, limit=200)[0]
    return riesz_constant(alpha, d) * area * val


@pytest.mark.parametrize("alpha,d", [(1.0, 2), (0.5, 1), (0.5, 2), (1.5, 3)])
def test_sigma_sq_closed_form_vs_quadrature(alpha, d):
    assert sigma_sq_exact(alpha, d) == pytest.approx(_sigma_sq_oracle(alpha, d), rel=1e-6)


def test_sigma_sq_frozen_values():
    assert sigma_sq_exact(1.0, 2) == pytest.approx(105.2758, abs=1e-3)
    assert sigma_sq_exact(0.5, 1) == pytest.approx(18.9062, abs=1e-3)


@pytest.mark.parametrize("alpha,d", [(1.0, 2), (0.5, 2), (-0.2, 2), (-0.5, 2)])
def test_sigma_sq_monte_carlo(alpha, d):
    est, se = sigma_sq(alpha, d, 200_000, seed=3)
    assert abs(est - sigma_sq_exact(alpha, d)) <= 3 * se


def test_sigma_sq_deterministic_and_domain():
    assert sigma_sq(1.0, 2, 20_000, 9) == sigma_sq(1.0, 2, 20_000, 9)
    with pytest.raises(NoiseDomainError):
        sigma_sq(-2.0, 2)
    with pytest.raises(NoiseDomainError):
        sigma_sq(-1.0, 2)
    with pytest.raises(ValueError):
        sigma_sq(1.0, 2, 100)


def test_spatial_diagonal():
    for alpha, d in [(1.0, 2), (0.5, 1), (-0.2, 2), (0.8, 2)]:
        delta = 0.07
        u = np.full(d, 0.3)
        assert spatial_increment_cov(u, u, delta, alpha, d) == pytest.approx(
            sigma_sq_exact(alpha, d) * delta ** (d + alpha), rel=1e-8)


def test_spatial_white_noise():
    d, delta = 2, 0.1
    assert spatial_increment_cov([0, 0], [0.25, 0], delta, 0.0, d) == 0.0
    assert spatial_increment_cov([0, 0], [0, 0], delta, 0.0, d) == pytest.approx(math.pi * delta ** 2)


def test_spatial_far_field():
    alpha, d, delta = 1.0, 2, 0.02
    far = riesz_constant(alpha, d) * (10 * delta) ** (alpha - d) * ball_volume(d) ** 2 * delta ** (2 * d)
    val = spatial_increment_cov([0, 0], [10 * delta, 0], delta, alpha, d)
    assert val == pytest.approx(far, rel=0.05)


def test_spatial_sign():
    # positive for α ≥ 0; the α < 0 Riesz kernel is negative away from the origin
    assert spatial_increment_cov([0, 0], [0.3, 0], 0.1, 0.5, 2) > 0
    assert spatial_increment_cov([0, 0], [0.4, 0], 0.1, -0.2, 2) < 0


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 0.4), st.floats(0, 2 * math.pi), st.floats(-5, 5), st.floats(-5, 5),
       st.sampled_from([0.5, 1.0, -0.2]))
def test_spatial_rigid_motion_invariance(sep, angle, tx, ty, alpha):
    delta = 0.1
    base = spatial_increment_cov([0.0, 0.0], [sep, 0.0], delta, alpha, 2)
    a = np.array([tx, ty])
    b = a + sep * np.array([math.cos(angle), math.sin(angle)])
    assert spatial_increment_cov(a, b, delta, alpha, 2) == pytest.approx(base, rel=1e-9, abs=1e-300)
    assert spatial_increment_cov(b, a, delta, alpha, 2) == pytest.approx(base, rel=1e-9, abs=1e-300)


def test_domain_guards():
    with pytest.raises(NoiseDomainError):
        NoiseSpec(0.3, 0.5, 2, 100)
    with pytest.raises(NoiseDomainError):
        NoiseSpec(0.5, 0.5, 2, 100)
    NoiseSpec(0.5, 0.5, 2, 100, allow_brownian=True)
    with pytest.raises(NoiseDomainError):
        NoiseSpec(0.7, 2.0, 2, 100)
    with pytest.raises(NoiseDomainError):
        spatial_increment_cov([0, 0], [1, 0], 0.1, -1.5, 2)


@pytest.fixture(scope="module")
def small_fact():
    des = RegularDesign(1, 10, 5)
    return des, build_cov_factorization(des, NoiseSpec(0.7, 0.5, 1, des.n))


def test_kronecker_structure(small_fact):
    des, f = small_fact
    joint = f.joint()
    assert joint.shape == (50, 50)
    ref = np.empty((50, 50))
    for a in range(50):
        for b in range(50):
            (k, j), (kp, jp) = divmod(a, 10), divmod(b, 10)
            ref[a, b] = f.temporal[k, kp] * f.spatial[j, jp]
    assert np.max(np.abs(joint - ref)) < 1e-12


def test_separability_against_direct_evaluation():
    des = RegularDesign(2, 4, 6)
    spec = NoiseSpec(0.65, -0.2, 2, des.n)
    f = build_cov_factorization(des, spec)
    t, u = des.observation_coords()
    rng = np.random.default_rng(1)
    for a, b in rng.integers(0, des.n, (120, 2)):
        direct = (temporal_increment_cov(t[a], t[b], spec.delta, spec.H)
                  * spatial_increment_cov(u[a], u[b], spec.delta, spec.alpha, 2))
        (k, j), (kp, jp) = divmod(a, des.n_sites), divmod(b, des.n_sites)
        assert f.cov(j, k, jp, kp) == pytest.approx(direct, rel=1e-9, abs=1e-18)


def test_variance_identity(small_fact):
    des, f = small_fact
    spec = NoiseSpec(0.7, 0.5, 1, des.n)
    np.testing.assert_allclose(np.diag(f.joint()), spec.variance(), rtol=1e-8)


@pytest.mark.parametrize("H", [0.65, 0.9])
def test_study_factors_are_psd_before_jitter(H):
    des = RegularDesign(2, 10, 100)
    spec = NoiseSpec(H, -0.2, 2, des.n)
    for m in (noise.temporal_matrix(des.time_points, spec.delta, H),
              noise.spatial_matrix(des.sites(), spec.delta, spec.alpha)):
        w = np.linalg.eigvalsh(m)
        assert w[0] >= -1e-8 * w[-1]


def test_design_mismatch_rejected():
    with pytest.raises(ValueError):
        build_cov_factorization(RegularDesign(2, 3, 3), NoiseSpec(0.7, 0.5, 2, 10))


def test_sampler_marginal_variance(small_fact):
    des, f = small_fact
    draws = sample_noise(f, 5000, seed=4)
    target = NoiseSpec(0.7, 0.5, 1, des.n).variance()
    band = 3 * math.sqrt(2) / math.sqrt(5000) * target
    # one cell per time slice keeps the number of simultaneous checks small
    for c in [0, 13, 27, 49]:
        assert abs(draws[:, c].var() - target) <= band


def test_sampler_zero_factors():
    f = CovarianceFactorization(np.zeros((3, 3)), np.zeros((2, 2)), 1.0)
    assert np.all(sample_noise(f, 4, 0) == 0)


def test_sampler_brownian_disjoint_times():
    des = RegularDesign(1, 3, 4, time_points=[0.1, 0.4, 0.7, 1.0])
    spec = NoiseSpec(0.5, 0.5, 1, des.n, allow_brownian=True)
    assert 2 * spec.delta < 0.3
    f = build_cov_factorization(des, spec)
    n_draws = 4000
    x = sample_noise(f, n_draws, 2).reshape(n_draws, 4, 3)
    r = np.corrcoef(x[:, :, 1].T)
    off = r[~np.eye(4, dtype=bool)]
    assert np.all(np.abs(off) < 4 / math.sqrt(n_draws))


def test_sampler_deterministic(small_fact):
    _, f = small_fact
    assert np.array_equal(sample_noise(f, 3, 8), sample_noise(f, 3, 8))
    # draw i does not depend on how many draws were requested
    assert np.array_equal(sample_noise(f, 5, 8)[:3], sample_noise(f, 3, 8))


def test_factorization_error_reports_eigenvalue():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(FactorizationError) as info:
        sample_noise(CovarianceFactorization(bad, np.eye(1), 1.0), 1, 0)
    assert info.value.min_eig == pytest.approx(-1.0)


def test_noise_csv(tmp_path, small_fact):
    _, f = small_fact
    p = tmp_path / "noise.csv"
    draws = sample_noise(f, 2, 0)
    noise.write_noise_csv(p, draws, f.nt, f.ns)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["draw_id", "time_index", "site_id", "value"]
    assert len(rows) == 1 + 2 * 50
    assert rows[1 + 50 + 12][:3] == ["1", "1", "2"]
    assert float(rows[1 + 50 + 12][3]) == draws[1, 12]
