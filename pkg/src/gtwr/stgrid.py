"""Space-time geometry: pixel-centre grids, the cell radius and distances."""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def ball_volume(d: int) -> float:
    """Volume of the closed unit Euclidean ball in R^d."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


@dataclass(frozen=True)
class SpaceTimePoint:
    t: float
    u: tuple[float, ...]

    def __post_init__(self):
        if not self.t >= 0:
            raise ValueError(f"time must be nonnegative, got {self.t}")
        object.__setattr__(self, "u", tuple(float(v) for v in self.u))

    @property
    def d(self) -> int:
        return len(self.u)


def make_pixel_grid(nx: int, d: int) -> np.ndarray:
    """Centres of an equal partition of [0,1]^d, shape (nx**d, d).

    Rows are in lexicographic order: the last coordinate varies fastest.
    """
    if nx < 1 or d < 1:
        raise ValueError("nx and d must be positive")
    axis = (np.arange(nx) + 0.5) / nx
    return np.array(list(itertools.product(axis, repeat=d)), dtype=float).reshape(-1, d)


def delta_n(n: int, d: int) -> float:
    """Radius making the space-time cell [t-δ, t+δ] x B(u, δ) have volume 1/n."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    return (1.0 / (2.0 * n * ball_volume(d))) ** (1.0 / (d + 1))


def chebyshev_distance(z: SpaceTimePoint, zp: SpaceTimePoint) -> float:
    """max(|t - t'|, ||u - u'||)."""
    if z.d != zp.d:
        raise ValueError(f"dimension mismatch: {z.d} vs {zp.d}")
    du = math.sqrt(sum((a - b) ** 2 for a, b in zip(z.u, zp.u)))
    return max(abs(z.t - zp.t), du)


@dataclass(frozen=True)
class RegularDesign:
    """Pixel-centre sites crossed with equally spaced time slices.

    Observations are stored time-major: observation ``k * n_sites + j`` is
    site ``j`` at time slice ``k``.
    """

    d: int
    nx: int
    nt: int
    time_points: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.d < 1 or self.nx < 1 or self.nt < 1:
            raise ValueError("d, nx and nt must be positive")
        if self.time_points is None:
            tp = np.arange(1, self.nt + 1) / self.nt
        else:
            tp = np.asarray(self.time_points, dtype=float)
            if tp.shape != (self.nt,):
                raise ValueError("time_points must have length nt")
            if np.any(np.diff(tp) <= 0) or tp[0] < 0:
                raise ValueError("time_points must be nonnegative and strictly increasing")
        object.__setattr__(self, "time_points", tp)

    @property
    def spatial_step(self) -> float:
        return 1.0 / self.nx

    @property
    def n_sites(self) -> int:
        return self.nx ** self.d

    @property
    def n(self) -> int:
        return self.n_sites * self.nt

    @property
    def delta(self) -> float:
        return delta_n(self.n, self.d)

    def sites(self) -> np.ndarray:
        return make_pixel_grid(self.nx, self.d)

    def observation_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-observation times (n,) and spatial coordinates (n, d)."""
        sites = self.sites()
        t = np.repeat(self.time_points, self.n_sites)
        u = np.tile(sites, (self.nt, 1))
        return t, u

    def points(self) -> list[SpaceTimePoint]:
        t, u = self.observation_coords()
        return [SpaceTimePoint(float(ti), tuple(ui)) for ti, ui in zip(t, u)]


def write_grid_csv(path, sites: np.ndarray) -> None:
    sites = np.atleast_2d(sites)
    d = sites.shape[1]
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["site_id"] + [f"x_{i + 1}" for i in range(d)])
        for j, row in enumerate(sites):
            w.writerow([j] + [repr(float(v)) for v in row])
