"""Space-time weighting kernels and the diagonal weight matrix of a local fit."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .stgrid import SpaceTimePoint

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
FAMILIES = ("gaussian", "bisquare")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family, bandwidth and the temporal/spatial scale factors.

    The squared space-time distance is ``mu_t * dt**2 + mu_s * |du|**2``.
    """

    family: str = "gaussian"
    h: float = 1.0
    mu_t: float = 1.0
    mu_s: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if not self.h > 0:
            raise ValueError(f"bandwidth must be positive, got {self.h}")
        if self.mu_t < 0 or self.mu_s < 0 or self.mu_t + self.mu_s <= 0:
            raise ValueError("scale factors must be nonnegative and not both zero")

    def with_bandwidth(self, h: float) -> "KernelSpec":
        return KernelSpec(self.family, h, self.mu_t, self.mu_s)


@dataclass(frozen=True)
class WeightVector:
    target: SpaceTimePoint
    weights: np.ndarray

    @property
    def degenerate(self) -> bool:
        """True when every weight is zero (empty kernel support)."""
        return not np.any(self.weights > 0)


def _profile(dist2, family: str):
    dist2 = np.asarray(dist2, dtype=float)
    if family == "gaussian":
        return INV_SQRT_2PI * np.exp(-0.5 * dist2)
    return np.where(dist2 < 1.0, (1.0 - dist2) ** 2, 0.0)


def _split(z):
    z = np.asarray(z, dtype=float)
    if z.shape[-1] < 2:
        raise ValueError("displacement must have a time and at least one space component")
    return z[..., 0], z[..., 1:]


def st_kernel(z, spec: KernelSpec):
    """K(z) for displacement(s) ``z = (dt, du_1, ..., du_d)`` along the last axis."""
    dt, du = _split(z)
    dist2 = spec.mu_t * dt * dt + spec.mu_s * np.sum(du * du, axis=-1)
    out = _profile(dist2, spec.family)
    return out if out.ndim else float(out)


def k_h(z, spec: KernelSpec):
    """Scaled kernel K_h(z) = K(z / h)."""
    return st_kernel(np.asarray(z, dtype=float) / spec.h, spec)


def weight_matrix(target_t, target_u, t, u, spec: KernelSpec) -> np.ndarray:
    """Weights of observations (t, u) for each target, shape (n_targets, n_obs)."""
    target_t = np.atleast_1d(np.asarray(target_t, dtype=float))
    target_u = np.asarray(target_u, dtype=float).reshape(len(target_t), -1)
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float).reshape(len(t), -1)
    dt = t[None, :] - target_t[:, None]
    du2 = np.zeros_like(dt)
    for k in range(u.shape[1]):
        diff = u[None, :, k] - target_u[:, None, k]
        du2 += diff * diff
    dist2 = (spec.mu_t * dt * dt + spec.mu_s * du2) / (spec.h * spec.h)
    return _profile(dist2, spec.family)


def weight_vector(target: SpaceTimePoint, points, spec: KernelSpec) -> WeightVector:
    """Diagonal of the weight matrix centred at ``target``.

    ``points`` is a sequence of SpaceTimePoint or a ``(t, u)`` pair of arrays.
    """
    if isinstance(points, tuple) and len(points) == 2 and not isinstance(points[0], SpaceTimePoint):
        t, u = points
    else:
        if len(points) == 0:
            raise ValueError("need at least one observation point")
        t = np.array([p.t for p in points])
        u = np.array([p.u for p in points])
    w = weight_matrix([target.t], [target.u], t, u, spec)[0]
    return WeightVector(target, w)
