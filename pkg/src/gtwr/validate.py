"""Independent oracles and empirical convergence checks.

Nothing here reuses the code path it checks: the ball-pair integral is
estimated by sampling points in balls (no lens volumes, no quadrature), the
solver oracle forms the normal equations and uses a Cholesky factorisation,
and the stationary STAR covariance comes from a Lyapunov solve.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from . import covariates, estimator, kernels, noise
from ._rng import rng_for
from .stgrid import RegularDesign, ball_volume


@dataclass(frozen=True)
class OracleReport:
    name: str
    oracle: float
    oracle_se: float
    value: float
    z: float
    passed: bool
    kind: str = "statistical"


def statistical_report(name, oracle, se, value, threshold=3.0) -> OracleReport:
    z = (value - oracle) / se if se > 0 else (0.0 if value == oracle else math.inf)
    return OracleReport(name, float(oracle), float(se), float(value), float(z), abs(z) <= threshold)


def algebraic_report(name, oracle, value, rtol=1e-10) -> OracleReport:
    err = abs(value - oracle) / max(abs(oracle), 1e-300)
    return OracleReport(name, float(oracle), 0.0, float(value), float(err), err <= rtol, "algebraic")


# ---------------------------------------------------------------------------
# Monte-Carlo ball-pair integral

def _uniform_ball(gen, m: int, d: int) -> np.ndarray:
    g = gen.standard_normal((m, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * gen.random((m, 1)) ** (1.0 / d)


def mc_ball_pair_integral(separation: float, delta: float, alpha: float, d: int,
                          samples: int = 1_000_000, seed: int = 0) -> tuple[float, float]:
    """Estimate ∫∫ 1_{B(0,δ)}(u) f(u - v) 1_{B(s e, δ)}(v) du dv and its standard error.

    ``f = γ |x|^(α-d)``, or the Dirac mass (overlap volume) when α = 0.
    Disjoint balls are sampled uniformly; overlapping balls with α > 0 sample
    the difference v - u from a density ∝ |w|^(α-d) so the estimator is bounded.
    """
    if separation < 0 or delta <= 0:
        raise ValueError("need separation >= 0 and delta > 0")
    if not -d < alpha < d:
        raise ValueError(f"need -d < alpha < d, got {alpha}")
    gen = rng_for(seed, "mc-ball-pair", d)
    r = separation / delta
    vol = ball_volume(d)
    e = np.zeros(d)
    e[0] = r
    u = _uniform_ball(gen, samples, d)
    if alpha == 0:
        hit = np.linalg.norm(u - e, axis=1) <= 1.0
        vals = vol * hit
        scale = delta ** d
    elif r >= 2.5 or (alpha < 0 and r >= 2.0):
        v = _uniform_ball(gen, samples, d) + e
        vals = vol * vol * noise.riesz_constant(alpha, d) * np.linalg.norm(u - v, axis=1) ** (alpha - d)
        scale = delta ** (d + alpha)
    elif alpha > 0:
        R = r + 2.0
        direction = gen.standard_normal((samples, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        w = direction * (R * gen.random((samples, 1)) ** (1.0 / alpha))
        z_norm = 2.0 * math.pi ** (d / 2) / math.gamma(d / 2) * R ** alpha / alpha
        hit = np.linalg.norm(u + w - e, axis=1) <= 1.0
        vals = vol * z_norm * noise.riesz_constant(alpha, d) * hit
        scale = delta ** (d + alpha)
    else:
        raise ValueError("overlapping balls with alpha < 0: the direct-space integral diverges")
    est = float(vals.mean()) * scale
    se = float(vals.std(ddof=1)) / math.sqrt(samples) * scale
    return est, se


# ---------------------------------------------------------------------------
# Dense WLS oracle

def dense_wls_oracle(X, Y, weights) -> np.ndarray:
    """β from explicitly formed normal equations, solved by Cholesky."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    Y = np.asarray(Y, dtype=float)
    w = np.asarray(weights, dtype=float)
    xtw = X.T * w
    g = xtw @ X
    try:
        c = linalg.cho_factor(g)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular normal equations: {exc}") from exc
    return linalg.cho_solve(c, xtw @ Y)


# ---------------------------------------------------------------------------
# Consistency regimes

@dataclass(frozen=True)
class ConsistencyRegime:
    H: float
    alpha: float
    d: int
    theta: float
    gamma: float

    def __post_init__(self):
        if not 0.5 < self.H < 1:
            raise ValueError(f"H must lie in (1/2, 1), got {self.H}")
        if not -self.d < self.alpha < self.d:
            raise ValueError(f"alpha must lie in (-d, d), got {self.alpha}")

    @property
    def nu_prime(self) -> float:
        return (2 * self.H + self.alpha - 1) / (self.d + 1)

    @property
    def nu(self) -> float:
        return self.theta / (self.d + 1)

    @property
    def strong(self) -> bool:
        return (2 * self.H + self.alpha > 1 and self.theta > 0
                and self.nu < self.gamma < 1 + self.nu)

    @property
    def in_probability(self) -> bool:
        return 2 * self.H + self.d + self.alpha > 0 and self.d + 1 + self.theta > 0

    def bandwidth(self, n: int) -> float:
        """h(n) with h^(d+1) = n^-(γ - θ/(d+1)), slowly varying part set to 1."""
        return n ** (-(self.gamma - self.nu) / (self.d + 1))


# ---------------------------------------------------------------------------
# Design-moment probe: normalised local moment vs χ(z_i, z_i)

def _centre_index(design: RegularDesign) -> int:
    t, u = design.observation_coords()
    dist = np.maximum(np.abs(t - 0.5), np.linalg.norm(u - 0.5, axis=1))
    return int(np.argmin(dist))


def lemma2_probe(ns=(100, 400, 1600), star: covariates.StarSpec | None = None,
                 replications: int = 40, seed: int = 0, theta: float = 0.5, gamma: float = 0.5,
                 bandwidth=None, kernel_family: str = "gaussian", chi_draws: int = 4000,
                 chi: str = "empirical") -> list[dict]:
    """Mean |M_n - χ(z_i, z_i)| per n on a refining d = 1 design with nx = nt = sqrt(n).

    ``M_n = Σ X_l² K_h(z_l - z_i) / Σ K_h(z_l - z_i)``: the design moment
    ``(1/(n h^(d+1))) X^T W X`` divided by the matching discrete kernel mass, so
    the limit is χ itself whatever the kernel's integral or the boundary
    truncation.  ``bandwidth`` overrides the h(n) schedule (number or callable).
    """
    star = star or covariates.StarSpec()
    d = 1
    out = []
    for n in ns:
        m = int(round(math.sqrt(n)))
        if m * m != n:
            raise ValueError(f"n={n} is not a perfect square")
        design = RegularDesign(d, m, m)
        W = covariates.build_contiguity(design, "queen")
        if bandwidth is None:
            h = n ** (-(gamma - theta / (d + 1)) / (d + 1))
        else:
            h = bandwidth(n) if callable(bandwidth) else float(bandwidth)
        kern = kernels.KernelSpec(kernel_family, h)
        i = _centre_index(design)
        k_i, j_i = divmod(i, design.n_sites)
        t, u = design.observation_coords()
        w = kernels.weight_matrix([t[i]], [u[i]], t, u, kern)[0]
        reps = covariates.simulate_replicates(star, W, design.nt, seed, replications,
                                              tag=f"lemma2-{n}").reshape(replications, -1)
        moment = (reps ** 2 * w).sum(axis=1) / (n * h ** (d + 1))
        mass = w.sum() / (n * h ** (d + 1))
        stat = moment / mass
        if chi == "exact":
            chi_val = float(covariates.stationary_covariance(star, W)[j_i, j_i])
            chi_se = 0.0
        else:
            field = covariates.CovariateField(np.zeros((design.nt, design.n_sites)), star, W, seed)
            chi_val, chi_se = covariates.empirical_chi(field, (k_i, j_i), (k_i, j_i),
                                                       chi_draws, seed + n)
            if star.innovation_sd == 0:
                chi_se = 0.0
        dev = np.abs(stat - chi_val)
        out.append(dict(n=n, h=h, chi=chi_val, chi_se=chi_se, deviation=float(dev.mean()),
                        deviation_se=float(dev.std(ddof=1) / math.sqrt(replications))))
    return out


# ---------------------------------------------------------------------------
# Rate probe

def rate_probe(regime: ConsistencyRegime, sides=(4, 6, 8, 10), replications: int = 60,
               seed: int = 0, star: covariates.StarSpec | None = None,
               noise_scale: float = 1.0) -> dict:
    """Log-log slope of E|β̂(z_i) - β|² against n for a constant coefficient.

    Designs are nx = nt = side, so n = side^(d+1); h follows ``regime.bandwidth``.
    The slope's standard error comes from the replication spread (delta method).
    """
    if not regime.strong:
        raise ValueError("rate probe needs a strong-consistency regime")
    star = star or covariates.StarSpec()
    d = regime.d
    log_n, log_mse, var_log = [], [], []
    for side in sides:
        design = RegularDesign(d, side, side)
        spec = noise.NoiseSpec(regime.H, regime.alpha, d, design.n)
        fact = noise.build_cov_factorization(design, spec)
        eps = noise_scale * noise.sample_noise(fact, replications, rng_seed(seed, "rate-noise", side))
        W = covariates.build_contiguity(design, "queen")
        xs = covariates.simulate_replicates(star, W, design.nt, seed, replications,
                                            tag=f"rate-x-{side}").reshape(replications, -1)
        kern = kernels.KernelSpec("gaussian", regime.bandwidth(design.n))
        i = _centre_index(design)
        t, u = design.observation_coords()
        w = kernels.weight_matrix([t[i]], [u[i]], t, u, kern)[0]
        sq = np.empty(replications)
        for rep in range(replications):
            x = xs[rep]
            fit = estimator.fit_local(None, x, x + eps[rep], w)
            sq[rep] = (fit.beta_hat[0] - 1.0) ** 2
        mse = sq.mean()
        log_n.append(math.log(design.n))
        log_mse.append(math.log(mse))
        var_log.append(sq.var(ddof=1) / (replications * mse * mse))
    x = np.array(log_n)
    y = np.array(log_mse)
    wts = 1.0 / np.array(var_log)
    xm = np.sum(wts * x) / wts.sum()
    sxx = np.sum(wts * (x - xm) ** 2)
    slope = float(np.sum(wts * (x - xm) * (y - np.sum(wts * y) / wts.sum())) / sxx)
    se = float(math.sqrt(1.0 / sxx))
    return dict(slope=slope, se=se, z=slope / se, reference=-(1 + regime.nu_prime),
                log_n=log_n, log_mse=log_mse)


def rng_seed(seed: int, *keys) -> int:
    """Derive a child integer seed."""
    return int(rng_for(seed, *keys).integers(0, 2 ** 63))


# ---------------------------------------------------------------------------
# Default validation suite

def run_validation(seed: int = 0, mc_samples: int = 1_000_000) -> list[OracleReport]:
    reports = []
    for alpha, d in [(0.5, 1), (1.0, 2), (-0.2, 2)]:
        est, se = noise.sigma_sq(alpha, d, mc_samples, rng_seed(seed, "sigma", d, int(alpha * 10)))
        exact = noise.sigma_sq_exact(alpha, d)
        reports.append(statistical_report(f"sigma_sq(alpha={alpha},d={d})", est, se, exact))

    delta = 0.1
    for i, (r, alpha, d) in enumerate([(0.0, 1.0, 2), (0.7, 0.5, 2), (1.5, 1.0, 2), (3.0, 0.5, 1),
                                       (1.0, 0.0, 2), (4.0, -0.2, 2)]):
        sep = r * delta
        est, se = mc_ball_pair_integral(sep, delta, alpha, d, mc_samples, rng_seed(seed, "ball", i))
        u_l = np.zeros(d)
        u_lp = np.zeros(d)
        u_lp[0] = sep
        val = noise.spatial_increment_cov(u_l, u_lp, delta, alpha, d)
        reports.append(statistical_report(f"ball_pair(r={r},alpha={alpha},d={d})", est, se, val))

    gen = rng_for(seed, "wls")
    for i in range(5):
        n, q = 30 + 10 * i, 1 + i % 3
        X = gen.standard_normal((n, q))
        Y = gen.standard_normal(n)
        w = gen.random(n) + 0.01
        ref = dense_wls_oracle(X, Y, w)
        fit = estimator.fit_local(None, X, Y, w)
        err_idx = int(np.argmax(np.abs(fit.beta_hat - ref)))
        reports.append(algebraic_report(f"wls_oracle[{i}]", ref[err_idx], fit.beta_hat[err_idx]))

    design = RegularDesign(2, 5, 1)
    star = covariates.StarSpec()
    W = covariates.build_contiguity(design, "queen")
    sigma = covariates.stationary_covariance(star, W)
    field = covariates.CovariateField(np.zeros((1, design.n_sites)), star, W, seed)
    est, se = covariates.empirical_chi(field, (50, 12), (50, 12), 4000, rng_seed(seed, "chi"))
    reports.append(statistical_report("star_variance(site=12)", est, se, sigma[12, 12]))

    for i, (tup, strong, prob) in enumerate(REGIME_TABLE):
        reg = ConsistencyRegime(*tup)
        ok = reg.strong == strong and reg.in_probability == prob
        reports.append(OracleReport(f"regime{tup}", float(strong), 0.0, float(reg.strong),
                                    0.0 if ok else math.inf, ok, "exact"))
    return reports


# (H, alpha, d, theta, gamma) -> (strong, in probability), evaluated by hand
REGIME_TABLE = [
    ((0.75, 0.5, 2, 0.5, 0.5), True, True),     # 2H+α=2; 1/6 < 0.5 < 7/6
    ((0.75, 0.5, 2, 0.5, 0.1), False, True),    # γ below θ/3
    ((0.75, 0.5, 2, 0.5, 1.2), False, True),    # γ above 1+θ/3
    ((0.75, 0.5, 2, 0.0, 0.5), False, True),    # θ = 0
    ((0.75, 0.5, 2, -0.5, 0.5), False, True),   # θ < 0
    ((0.6, -0.5, 2, 0.5, 0.5), False, True),    # 2H+α = 0.7
    ((0.6, -0.2, 2, 0.5, 0.5), False, True),    # 2H+α = 1 exactly
    ((0.6, -0.1, 2, 0.5, 0.5), True, True),     # 2H+α = 1.1
    ((0.9, 0.0, 1, 1.0, 1.0), True, True),      # 1/2 < 1 < 3/2
    ((0.9, 0.0, 1, 1.0, 0.5), False, True),     # γ = θ/2 boundary
    ((0.9, 0.0, 1, 1.0, 1.5), False, True),     # γ = 1+θ/2 boundary
    ((0.55, -0.9, 1, 0.5, 0.5), False, True),   # 2H+α = 0.2; 2H+d+α = 1.2
    ((0.55, -0.99, 1, -1.9, 0.5), False, True),  # d+1+θ = 0.1
    ((0.55, -0.99, 1, -2.5, 0.5), False, False),  # d+1+θ < 0
    ((0.7, -1.5, 2, 0.3, 0.5), False, True),    # 2H+d+α = 1.9
    ((0.7, -2.9, 3, 0.3, 0.5), False, True),    # 2H+d+α = 1.5
    ((0.6, 1.5, 3, 2.0, 0.6), True, True),      # 0.5 < 0.6 < 1.5
    ((0.6, 1.5, 3, 2.0, 0.4), False, True),     # γ < θ/4
    ((0.95, 1.9, 2, 2.9, 1.9), True, True),     # 0.967 < 1.9 < 1.967
    ((0.95, 1.9, 2, -3.5, 0.5), False, False),  # d+1+θ = -0.5
]


def write_reports(reports: list[OracleReport], csv_path=None, json_path=None) -> None:
    rows = [asdict(r) for r in reports]
    if csv_path:
        with open(Path(csv_path), "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    if json_path:
        Path(json_path).write_text(json.dumps(rows, indent=2, default=float), encoding="utf-8")
