"""STAR(1,1) covariate fields on the site lattice.

The recursion is ``X_t = phi10 X_{t-1} + phi11 W X_{t-1} + a_t`` with a
row-normalised contiguity matrix ``W`` and Gaussian innovations ``a_t``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_discrete_lyapunov
from scipy.spatial.distance import cdist

from ._rng import rng_for
from .stgrid import RegularDesign


class NonStationaryError(ValueError):
    """STAR coefficients outside the stationary region."""


@dataclass(frozen=True)
class NeighborWeights:
    matrix: np.ndarray
    scheme: str

    @property
    def n_sites(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class StarSpec:
    phi10: float = 0.4
    phi11: float = 0.25
    innovation_sd: float = 1.0
    burn_in: int = 200

    def __post_init__(self):
        if abs(self.phi10) + abs(self.phi11) >= 1:
            raise NonStationaryError(
                f"|phi10| + |phi11| = {abs(self.phi10) + abs(self.phi11)} must be < 1")
        if self.innovation_sd < 0:
            raise ValueError("innovation_sd must be nonnegative")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")


@dataclass(frozen=True)
class CovariateField:
    values: np.ndarray  # (nt, ns)
    spec: StarSpec
    weights: NeighborWeights
    seed: int

    @property
    def nt(self) -> int:
        return self.values.shape[0]

    def flat(self) -> np.ndarray:
        """Values in time-major observation order."""
        return self.values.reshape(-1)


def build_contiguity(design: RegularDesign, scheme: str = "queen") -> NeighborWeights:
    """Row-normalised rook (axis) or queen (Chebyshev ring) adjacency."""
    idx = np.array(np.unravel_index(np.arange(design.n_sites), (design.nx,) * design.d)).T
    if scheme == "rook":
        adj = cdist(idx, idx, "cityblock") == 1
    elif scheme == "queen":
        adj = cdist(idx, idx, "chebyshev") == 1
    else:
        raise ValueError(f"unknown contiguity scheme {scheme!r}")
    adj = adj.astype(float)
    deg = adj.sum(axis=1, keepdims=True)
    m = np.divide(adj, deg, out=np.zeros_like(adj), where=deg > 0)
    return NeighborWeights(m, scheme)


def transition_matrix(spec: StarSpec, W: NeighborWeights) -> np.ndarray:
    return spec.phi10 * np.eye(W.n_sites) + spec.phi11 * W.matrix


def spectral_radius(spec: StarSpec, W: NeighborWeights) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(transition_matrix(spec, W)))))


def _check_stationary(spec: StarSpec, W: NeighborWeights) -> np.ndarray:
    a = transition_matrix(spec, W)
    rad = float(np.max(np.abs(np.linalg.eigvals(a))))
    if rad >= 1:
        raise NonStationaryError(f"spectral radius {rad:.4f} of the STAR transition is >= 1")
    return a


def _run(a: np.ndarray, sd: float, steps: int, keep: int, gens) -> np.ndarray:
    """Iterate the recursion for each generator; returns (len(gens), keep, ns)."""
    ns = a.shape[0]
    x = np.zeros((len(gens), ns))
    out = np.empty((len(gens), keep, ns))
    start = steps - keep
    for step in range(steps):
        noise = np.stack([g.standard_normal(ns) for g in gens])
        x = x @ a.T + sd * noise
        if step >= start:
            out[:, step - start] = x
    return out


def simulate_star(spec: StarSpec, W: NeighborWeights, nt: int, seed: int) -> CovariateField:
    if nt < 1:
        raise ValueError("nt must be positive")
    a = _check_stationary(spec, W)
    vals = _run(a, spec.innovation_sd, spec.burn_in + nt, nt, [rng_for(seed, "star")])[0]
    return CovariateField(vals, spec, W, seed)


def simulate_replicates(spec: StarSpec, W: NeighborWeights, nt: int, seed: int,
                        n_draws: int, tag: str = "star-rep") -> np.ndarray:
    """Independent fields, shape (n_draws, nt, ns); draw i uses stream (seed, tag, i)."""
    a = _check_stationary(spec, W)
    gens = [rng_for(seed, tag, i) for i in range(n_draws)]
    return _run(a, spec.innovation_sd, spec.burn_in + nt, nt, gens)


def empirical_chi(field: CovariateField, z: tuple[int, int], zp: tuple[int, int],
                  n_draws: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo E[X(z) X(z')] over independent replications, with standard error.

    ``z`` and ``zp`` are ``(time_index, site_index)`` pairs.
    """
    (k, j), (kp, jp) = z, zp
    nt = max(k, kp) + 1
    if not (0 <= j < field.weights.n_sites and 0 <= jp < field.weights.n_sites):
        raise IndexError("site index out of range")
    reps = simulate_replicates(field.spec, field.weights, nt, seed, n_draws, tag="chi")
    prod = reps[:, k, j] * reps[:, kp, jp]
    se = float(prod.std(ddof=1) / math.sqrt(n_draws)) if n_draws > 1 else float("nan")
    return float(prod.mean()), se


def stationary_covariance(spec: StarSpec, W: NeighborWeights) -> np.ndarray:
    """Stationary site covariance Σ solving Σ = A Σ A^T + s^2 I."""
    a = _check_stationary(spec, W)
    return solve_discrete_lyapunov(a, spec.innovation_sd ** 2 * np.eye(W.n_sites))


def write_covariates_csv(path, field: CovariateField) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time_index", "site_id", "value"])
        for k, row in enumerate(field.values):
            for j, v in enumerate(row):
                w.writerow([k, j, repr(float(v))])
