"""Fractional-coloured space-time noise.

The noise at an observation cell is the increment of a Gaussian field over
the cylinder (t - δ, t + δ] x B(u, δ).  Its covariance separates into a
temporal factor (increments of fractional Brownian motion over two time
windows) and a spatial factor (a Riesz-kernel double integral over two balls),

    E[e_l e_l'] = T(t_l - t_l') * S(|u_l - u_l'|),

so the joint covariance on a regular design is ``kron(temporal, spatial)``
and exact samples are ``L_t G L_s^T`` with ``G`` standard normal.

The spatial integral for unit balls at centre distance ``r`` is reduced to

    C(r) = ∫ f(w) κ(|w - r e|) dw,

where ``κ`` is the volume of the intersection of two unit balls and
``f = γ |w|^(α-d)``.  For ``α < 0`` the kernel is not locally integrable and
the finite part (subtracting ``κ(r)``) is used, which is the analytic
continuation of the spectral form with μ(dξ) = |ξ|^(-α) dξ.  ``α = 0`` is
white noise in space: the spatial factor is the Lebesgue overlap volume.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import integrate, special
from scipy.spatial.distance import pdist, squareform

from ._rng import rng_for
from .stgrid import RegularDesign, ball_volume, delta_n


class NoiseDomainError(ValueError):
    """Noise parameters outside the range where the field is defined."""


class FactorizationError(np.linalg.LinAlgError):
    """A covariance factor could not be factorised even after jitter."""

    def __init__(self, which: str, min_eig: float):
        super().__init__(f"{which} factor is not positive semi-definite "
                         f"(smallest eigenvalue {min_eig:.3e})")
        self.which = which
        self.min_eig = min_eig


def hs_to_alpha(hs: float) -> float:
    """Convention mapping a 'spatial Hurst' index to a Riesz order: α = 2 Hs - 1."""
    return 2.0 * hs - 1.0


def _sphere_area(k: int) -> float:
    """Surface measure of the unit sphere S^k in R^(k+1)."""
    return 2.0 * math.pi ** ((k + 1) / 2) / math.gamma((k + 1) / 2)


def riesz_constant(alpha: float, d: int) -> float:
    """γ_{α,d} = 2^(d-α) π^(d/2) Γ((d-α)/2) / Γ(α/2).

    Positive for 0 < α < d.  Negative orders (-d < α < 0, α ≠ -2, -4, ...)
    give a negative constant, used for anti-correlated spatial noise.
    ``α = 0`` is white noise and has no Riesz kernel.
    """
    if alpha == 0:
        raise NoiseDomainError("alpha = 0 is white noise in space; "
                               "use the Lebesgue overlap instead of a Riesz kernel")
    if not -d < alpha < d:
        raise NoiseDomainError(f"Riesz order must satisfy -d < alpha < d, got alpha={alpha}, d={d}")
    if alpha < 0 and float(alpha / 2).is_integer():
        raise NoiseDomainError(f"Riesz constant has a pole at alpha={alpha}")
    return (2.0 ** (d - alpha) * math.pi ** (d / 2) * math.gamma((d - alpha) / 2)
            / math.gamma(alpha / 2))


def fbm_cov(t: float, s: float, H: float) -> float:
    """Covariance of fractional Brownian motion, ½(t^2H + s^2H - |t-s|^2H)."""
    if t < 0 or s < 0:
        raise ValueError("fBm covariance needs nonnegative times")
    if not 0 < H < 1:
        raise ValueError(f"H must lie in (0, 1), got {H}")
    return 0.5 * (t ** (2 * H) + s ** (2 * H) - abs(t - s) ** (2 * H))


def temporal_increment_cov(t_l, t_lp, delta: float, H: float):
    """Covariance of fBm increments over (t_l-δ, t_l+δ] and (t_lp-δ, t_lp+δ].

    Vectorised over ``t_l`` and ``t_lp``.
    """
    dt = np.abs(np.asarray(t_l, dtype=float) - np.asarray(t_lp, dtype=float))
    h2 = 2.0 * H
    # |dt - 2δ| == 2δ - dt exactly at dt=0 keeps the H=1/2 case exact
    out = 0.5 * ((dt + 2 * delta) ** h2 + np.abs(dt - 2 * delta) ** h2 - 2.0 * dt ** h2)
    if H == 0.5:
        out = np.where(dt >= 2 * delta, 0.0, out)
    return out if out.ndim else float(out)


def lens_volume(r, d: int):
    """Volume of the intersection of two unit balls in R^d at centre distance r."""
    r = np.asarray(r, dtype=float)
    x = np.clip(1.0 - r * r / 4.0, 0.0, 1.0)
    out = ball_volume(d) * special.betainc((d + 1) / 2, 0.5, x)
    out = np.where(r >= 2.0, 0.0, out)
    return out if out.ndim else float(out)


def sigma_sq_exact(alpha: float, d: int) -> float:
    """Var of the field integrated over the unit ball, in closed form.

    Uses the Weber-Schafheitlin integral of J_{d/2}^2 against |ξ|^(-α-1).
    Finite for -1 < α < d; α = 0 returns the ball volume (white noise).
    """
    if alpha == 0:
        return ball_volume(d)
    if not -1 < alpha < d:
        raise NoiseDomainError(f"unit-ball variance is infinite unless -1 < alpha < d (alpha={alpha})")
    lam, nu = alpha + 1.0, d / 2.0
    log_w = (special.gammaln(lam) + special.gammaln(nu + (1 - lam) / 2)
             - lam * math.log(2) - 2 * special.gammaln((1 + lam) / 2)
             - special.gammaln(nu + (1 + lam) / 2))
    return _sphere_area(d - 1) * (2 * math.pi) ** d * math.exp(log_w)


def sigma_sq(alpha: float, d: int, mc_samples: int = 100_000, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo estimate of σ² = Var(W(1_{|u|<=1})) and its standard error.

    The double ball integral reduces to γ |S^{d-1}| ∫_0^2 ρ^(α-1) κ(ρ) dρ,
    which is sampled with the radial density ∝ ρ^(α-1) (α > 0) or, for the
    finite-part form when α < 0, ∝ ρ^α.
    """
    if alpha <= -d:
        raise NoiseDomainError(f"kernel |u|^(alpha-d) is not integrable for alpha={alpha} <= -d")
    if alpha == 0:
        return ball_volume(d), 0.0
    if alpha <= -1 or alpha >= d:
        raise NoiseDomainError(f"unit-ball variance is infinite unless -1 < alpha < d (alpha={alpha})")
    if mc_samples < 10_000:
        raise ValueError("mc_samples must be at least 1e4")
    gen = rng_for(seed, "sigma_sq", d)
    u = gen.random(mc_samples)
    scale = riesz_constant(alpha, d) * _sphere_area(d - 1)
    if alpha > 0:
        rho = 2.0 * u ** (1.0 / alpha)
        vals = (2.0 ** alpha / alpha) * lens_volume(rho, d)
    else:
        rho = 2.0 * u ** (1.0 / (alpha + 1.0))
        k0 = ball_volume(d)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = (2.0 ** (alpha + 1) / (alpha + 1)) * (lens_volume(rho, d) - k0) / rho
        vals = np.where(rho > 0, vals, 0.0) + k0 * 2.0 ** alpha / alpha
    vals = scale * vals
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(mc_samples))


def _lens_scalar(x: float, d: int) -> float:
    if x >= 2.0:
        return 0.0
    if d == 1:
        return 2.0 - x
    if d == 2:
        return 2.0 * math.acos(x / 2.0) - 0.5 * x * math.sqrt(4.0 - x * x)
    if d == 3:
        return math.pi * (4.0 + x) * (2.0 - x) ** 2 / 12.0
    return float(lens_volume(x, d))


def _lens3_moment(x: float) -> float:
    # antiderivative of x * lens_volume(x, 3) on [0, 2]
    return math.pi / 12.0 * (8.0 * x * x - 4.0 * x ** 3 + x ** 5 / 5.0)


def _angular_profile(rho: float, r: float, d: int) -> float:
    """∫ κ(|w - r e|) sin^{d-2}θ dθ over the polar angle of w, |w| = rho."""
    if d == 1:
        return _lens_scalar(abs(rho - r), 1) + _lens_scalar(rho + r, 1)
    if rho == 0.0 or r == 0.0:
        return _lens_scalar(max(rho, r), d) * _sin_power_integral(d - 2, math.pi)
    lo = abs(rho - r)
    if lo >= 2.0:
        return 0.0
    if d == 3:
        hi = min(rho + r, 2.0)
        return (_lens3_moment(hi) - _lens3_moment(lo)) / (rho * r)
    c = (rho * rho + r * r - 4.0) / (2.0 * rho * r)
    theta_max = math.pi if c <= -1.0 else math.acos(c)
    k = d - 2

    def f(theta):
        dist = math.sqrt(max(rho * rho + r * r - 2.0 * rho * r * math.cos(theta), 0.0))
        return _lens_scalar(dist, d) * (math.sin(theta) ** k if k else 1.0)

    val, _ = integrate.quad(f, 0.0, theta_max, epsabs=1e-13, epsrel=1e-10, limit=100)
    return val


@lru_cache(maxsize=None)
def _sin_power_integral(k: int, upper: float) -> float:
    if k == 0:
        return upper
    val, _ = integrate.quad(lambda th: math.sin(th) ** k, 0.0, upper, epsabs=0.0, epsrel=1e-13)
    return val


@lru_cache(maxsize=None)
def unit_ball_pair_integral(r: float, alpha: float, d: int) -> float:
    """C(r): Riesz double integral over two unit balls with centres r apart."""
    if r < 0:
        raise ValueError("separation must be nonnegative")
    if alpha == 0:
        return float(lens_volume(r, d))
    if r == 0.0:
        return sigma_sq_exact(alpha, d)
    gamma_ad = riesz_constant(alpha, d)
    outer = 1.0 if d == 1 else _sphere_area(d - 2)
    total_angle = 2.0 if d == 1 else _sin_power_integral(d - 2, math.pi)
    lo, hi = max(0.0, r - 2.0), r + 2.0
    kinks = sorted({abs(2.0 - r), min(r, 2.0)} - {lo, hi})
    kinks = [k for k in kinks if lo < k < hi]
    opts = dict(epsabs=0.0, epsrel=1e-9, limit=200)

    if r >= 2.0:
        val, _ = integrate.quad(lambda p: p ** (alpha - 1) * _angular_profile(p, r, d),
                                lo, hi, points=kinks or None, **opts)
    elif alpha > 0:
        # s = rho^alpha removes the rho^(alpha-1) singularity at the origin
        pts = [k ** alpha for k in kinks] or None
        val, _ = integrate.quad(lambda s: _angular_profile(s ** (1.0 / alpha), r, d) / alpha,
                                0.0, hi ** alpha, points=pts, **opts)
    else:
        if alpha <= -1:
            raise NoiseDomainError("overlapping balls need alpha > -1")
        k_r = float(lens_volume(r, d)) * total_angle
        val, _ = integrate.quad(lambda p: p ** (alpha - 1) * (_angular_profile(p, r, d) - k_r),
                                0.0, hi, points=kinks or None, **opts)
        val += k_r * hi ** alpha / alpha
    return gamma_ad * outer * val


def spatial_increment_cov(u_l, u_lp, delta: float, alpha: float, d: int) -> float:
    """Riesz double integral over the balls B(u_l, δ) and B(u_lp, δ)."""
    u_l = np.atleast_1d(np.asarray(u_l, dtype=float))
    u_lp = np.atleast_1d(np.asarray(u_lp, dtype=float))
    if u_l.shape != (d,) or u_lp.shape != (d,):
        raise ValueError(f"coordinates must have length d={d}")
    if delta <= 0:
        raise ValueError("delta must be positive")
    _check_alpha(alpha, d)
    r = float(np.linalg.norm(u_l - u_lp)) / delta
    if alpha == 0:
        return delta ** d * float(lens_volume(r, d))
    return delta ** (d + alpha) * unit_ball_pair_integral(_key(r), alpha, d)


def _key(r: float) -> float:
    return round(r, 12)


def _check_alpha(alpha: float, d: int) -> None:
    if not -d < alpha < d:
        raise NoiseDomainError(f"need -d < alpha < d, got alpha={alpha}, d={d}")
    if alpha <= -1:
        raise NoiseDomainError(f"alpha={alpha} <= -1: the noise over a ball has infinite variance")


@dataclass(frozen=True)
class NoiseSpec:
    H: float
    alpha: float
    d: int
    n: int
    allow_brownian: bool = field(default=False, repr=False)

    def __post_init__(self):
        lo_ok = self.H >= 0.5 if self.allow_brownian else self.H > 0.5
        if not (lo_ok and self.H < 1):
            raise NoiseDomainError(f"H must lie in (1/2, 1), got {self.H}")
        if self.n < 1:
            raise NoiseDomainError("n must be positive")
        _check_alpha(self.alpha, self.d)

    @property
    def delta(self) -> float:
        return delta_n(self.n, self.d)

    def variance(self, sigma2: float | None = None) -> float:
        """Marginal variance σ² 2^(2H) δ^(2H+d+α)."""
        s2 = sigma_sq_exact(self.alpha, self.d) if sigma2 is None else sigma2
        return s2 * 2 ** (2 * self.H) * self.delta ** (2 * self.H + self.d + self.alpha)


@dataclass(frozen=True)
class CovarianceFactorization:
    temporal: np.ndarray
    spatial: np.ndarray
    sigma_sq: float
    jitter: tuple[float, float] = (0.0, 0.0)

    @property
    def nt(self) -> int:
        return self.temporal.shape[0]

    @property
    def ns(self) -> int:
        return self.spatial.shape[0]

    def joint(self) -> np.ndarray:
        """Dense joint covariance, cells ordered time-major (k * ns + j)."""
        return np.kron(self.temporal, self.spatial)

    def cov(self, j: int, k: int, jp: int, kp: int) -> float:
        return float(self.temporal[k, kp] * self.spatial[j, jp])


def _psd_repair(m: np.ndarray) -> tuple[np.ndarray, float]:
    m = 0.5 * (m + m.T)
    n = m.shape[0]
    tr = float(np.trace(m))
    if n == 0 or tr <= 0:
        return m, 0.0
    thresh = 1e-10 * tr / n
    eps = thresh
    added = 0.0
    for _ in range(4):
        if np.linalg.eigvalsh(m)[0] >= -thresh:
            return m, added
        m = m + eps * np.eye(n)
        added += eps
        eps *= 2
    return m, added


def spatial_matrix(sites: np.ndarray, delta: float, alpha: float) -> np.ndarray:
    """Spatial factor over sites; one quadrature per distinct distance."""
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    d = sites.shape[1]
    _check_alpha(alpha, d)
    dist = squareform(pdist(sites)) / delta if len(sites) > 1 else np.zeros((1, 1))
    keys = np.round(dist, 12)
    uniq, inv = np.unique(keys, return_inverse=True)
    if alpha == 0:
        vals = delta ** d * lens_volume(uniq, d)
    else:
        vals = np.array([delta ** (d + alpha) * unit_ball_pair_integral(float(r), alpha, d)
                         for r in uniq])
    out = np.asarray(vals)[inv].reshape(keys.shape)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite spatial covariance entry")
    return out


def temporal_matrix(times: np.ndarray, delta: float, H: float) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    out = temporal_increment_cov(times[:, None], times[None, :], delta, H)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite temporal covariance entry")
    return out


def build_cov_factorization(design: RegularDesign, spec: NoiseSpec) -> CovarianceFactorization:
    if design.d != spec.d or design.n != spec.n:
        raise ValueError(f"design (d={design.d}, n={design.n}) does not match "
                         f"noise spec (d={spec.d}, n={spec.n})")
    delta = spec.delta
    tm, jt = _psd_repair(temporal_matrix(design.time_points, delta, spec.H))
    sm, js = _psd_repair(spatial_matrix(design.sites(), delta, spec.alpha))
    return CovarianceFactorization(tm, sm, sigma_sq_exact(spec.alpha, spec.d), (jt, js))


def _lower_factor(m: np.ndarray, which: str) -> np.ndarray:
    if not np.any(m):
        return np.zeros_like(m)
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(m)
        if w[0] < -1e-8 * max(w[-1], 0.0):
            raise FactorizationError(which, float(w[0])) from None
        # symmetric root of a singular PSD matrix, same covariance as a Cholesky factor
        return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def sample_noise(fact: CovarianceFactorization, n_draws: int, seed: int) -> np.ndarray:
    """Exact draws, shape (n_draws, nt * ns), columns time-major."""
    if n_draws < 1:
        raise ValueError("n_draws must be positive")
    lt = _lower_factor(fact.temporal, "temporal")
    ls = _lower_factor(fact.spatial, "spatial")
    g = np.stack([rng_for(seed, "noise", i).standard_normal((fact.nt, fact.ns))
                  for i in range(n_draws)])
    e = lt @ g @ ls.T
    return e.reshape(n_draws, -1)


def write_noise_csv(path, draws: np.ndarray, nt: int, ns: int) -> None:
    draws = np.atleast_2d(draws)
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["draw_id", "time_index", "site_id", "value"])
        for i, row in enumerate(draws):
            for c, v in enumerate(row):
                k, j = divmod(c, ns)
                w.writerow([i, k, j, repr(float(v))])


def write_matrix_csv(path, m: np.ndarray) -> None:
    np.savetxt(Path(path), m, delimiter=",", fmt="%.17g")
