import json
import math

import numpy as np
import pytest

from gtwr import covariates, estimator, noise
from gtwr.stgrid import ball_volume
from gtwr.validate import (REGIME_TABLE, ConsistencyRegime, dense_wls_oracle, lemma2_probe,
                           mc_ball_pair_integral, rate_probe, run_validation, write_reports)


def test_ball_pair_identical_balls_white():
    est, se = mc_ball_pair_integral(0.0, 0.1, 0.0, 2, 100_000, 0)
    assert est == pytest.approx(ball_volume(2) * 0.01, rel=1e-14) and se <= 1e-15 * est


def test_ball_pair_identical_balls_riesz():
    delta = 0.1
    est, se = mc_ball_pair_integral(0.0, delta, 1.0, 2, 1_000_000, 1)
    assert abs(est - noise.sigma_sq_exact(1.0, 2) * delta ** 3) <= 3 * se


def test_ball_pair_far_field():
    delta, alpha, d = 0.05, 1.0, 2
    sep = 20 * delta
    far = noise.riesz_constant(alpha, d) * sep ** (alpha - d) * (ball_volume(d) * delta ** d) ** 2
    est, _ = mc_ball_pair_integral(sep, delta, alpha, d, 200_000, 2)
    assert est == pytest.approx(far, rel=0.02)


def test_ball_pair_seed_consistency():
    a, sa = mc_ball_pair_integral(0.12, 0.1, 0.5, 2, 200_000, 3)
    b, sb = mc_ball_pair_integral(0.12, 0.1, 0.5, 2, 200_000, 4)
    assert abs(a - b) <= 4 * math.hypot(sa, sb)
    assert mc_ball_pair_integral(0.12, 0.1, 0.5, 2, 10_000, 3) == mc_ball_pair_integral(0.12, 0.1, 0.5, 2, 10_000, 3)


@pytest.mark.parametrize("r,alpha,d", [(4.99, 0.5, 2), (0.17, 0.0, 2), (1.2, 1.0, 2), (0.6, 0.5, 1)])
def test_ball_pair_unbiased_across_seeds(r, alpha, d):
    delta = 0.05
    u_lp = np.zeros(d)
    u_lp[0] = r * delta
    exact = noise.spatial_increment_cov(np.zeros(d), u_lp, delta, alpha, d)
    z = []
    for seed in range(200, 230):
        est, se = mc_ball_pair_integral(r * delta, delta, alpha, d, 200_000, seed)
        z.append((exact - est) / se)
    z = np.array(z)
    assert abs(z.mean()) <= 3 / math.sqrt(len(z)) * max(1.0, z.std())
    assert 0.6 <= z.std(ddof=1) <= 1.5


def test_ball_pair_domain():
    with pytest.raises(ValueError):
        mc_ball_pair_integral(0.05, 0.1, -0.2, 2)
    with pytest.raises(ValueError):
        mc_ball_pair_integral(-1.0, 0.1, 0.5, 2)


def test_dense_oracle_examples():
    X = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])
    Y = np.array([1.0, 2.0, 4.0])
    # OLS by hand: slope 1.5, intercept 5/6
    np.testing.assert_allclose(dense_wls_oracle(X, Y, np.ones(3)), [5 / 6, 1.5], rtol=1e-14)
    assert dense_wls_oracle(np.ones(3), Y, [0.0, 2.5, 0.0])[0] == pytest.approx(2.0)
    with pytest.raises(np.linalg.LinAlgError):
        dense_wls_oracle(np.column_stack([X[:, 1], X[:, 1]]), Y, np.ones(3))


def test_regime_example_and_guards():
    reg = ConsistencyRegime(0.75, 0.5, 2, 0.5, 0.5)
    assert reg.strong and reg.in_probability
    assert reg.nu_prime == pytest.approx(1 / 3) and reg.nu == pytest.approx(1 / 6)
    assert reg.bandwidth(1000) ** 3 == pytest.approx(1000 ** -(0.5 - 1 / 6))
    with pytest.raises(ValueError):
        ConsistencyRegime(0.3, 0.5, 2, 0.5, 0.5)


def test_regime_table_is_complete():
    assert len(REGIME_TABLE) == 20
    assert {s for _, s, _ in REGIME_TABLE} == {True, False}
    assert {p for _, _, p in REGIME_TABLE} == {True, False}


def test_design_moment_zero_covariates():
    res = lemma2_probe(star=covariates.StarSpec(innovation_sd=0.0), replications=5, chi_draws=100)
    assert all(r["deviation"] == 0.0 and r["chi"] == 0.0 for r in res)


def test_design_moment_clt_scaling():
    res = lemma2_probe(star=covariates.StarSpec(0.0, 0.0), replications=200, seed=1,
                       bandwidth=1e6, chi="exact")
    for r in res:
        clt = 2.0 / math.sqrt(math.pi * r["n"])  # E|mean(X²) - 1| for n i.i.d. N(0,1)
        assert clt / 3 <= r["deviation"] <= 3 * clt


def test_design_moment_shrinks():
    res = lemma2_probe(replications=40, seed=2, chi="exact")
    assert res[2]["deviation"] < res[0]["deviation"]


def test_rate_probe_decreasing():
    out = rate_probe(ConsistencyRegime(0.75, 0.5, 2, 0.5, 0.5), replications=60, seed=0)
    assert out["slope"] < 0 and abs(out["z"]) > 3
    assert out["reference"] == pytest.approx(-4 / 3)
    with pytest.raises(ValueError):
        rate_probe(ConsistencyRegime(0.75, 0.5, 2, 0.0, 0.5))


def test_default_suite_passes(tmp_path):
    reports = run_validation(seed=0)
    assert all(r.passed for r in reports), [r for r in reports if not r.passed]
    write_reports(reports, tmp_path / "v.csv", tmp_path / "v.json")
    rows = json.loads((tmp_path / "v.json").read_text())
    assert len(rows) == len(reports) and rows[0]["name"] == reports[0].name
    assert (tmp_path / "v.csv").read_text().splitlines()[0].startswith("name,oracle,oracle_se")
