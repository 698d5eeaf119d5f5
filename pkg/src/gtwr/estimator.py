"""Local weighted least squares, field fits and goodness-of-fit summaries."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kernels import KernelSpec, WeightVector, weight_matrix
from .stgrid import SpaceTimePoint

# Linear interpolation between order statistics (Hyndman-Fan type 7).
QUANTILE_METHOD = "linear"


class DegenerateFitError(np.linalg.LinAlgError):
    """Weighted design is rank deficient or carries no weight."""

    def __init__(self, msg: str, rank: int = 0):
        super().__init__(msg)
        self.rank = rank


@dataclass(frozen=True)
class LocalFit:
    target: SpaceTimePoint | None
    beta_hat: np.ndarray
    condition_number: float
    effective_weight_mass: float


@dataclass
class FitDiagnostics:
    fitted: np.ndarray
    residuals: np.ndarray
    adjusted_r2: float
    beta_field_summary: list[dict]
    n_degenerate: int


@dataclass
class FieldFit:
    """Per-target coefficients; rows of ``beta`` are NaN for degenerate targets."""

    target_index: np.ndarray
    beta: np.ndarray
    condition_number: np.ndarray
    weight_mass: np.ndarray
    degenerate: np.ndarray
    diagnostics: FitDiagnostics | None = None

    @property
    def fits(self) -> list[LocalFit]:
        return [LocalFit(None, b, c, m) for b, c, m, bad in
                zip(self.beta, self.condition_number, self.weight_mass, self.degenerate) if not bad]


def design_matrix(covariates, intercept: bool = False) -> np.ndarray:
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if intercept:
        x = np.column_stack([np.ones(len(x)), x])
    if x.shape[1] < 1 or not np.all(np.isfinite(x)):
        raise ValueError("design matrix needs at least one finite column")
    return x


def solve_weighted(W: np.ndarray, X: np.ndarray, Y: np.ndarray):
    """Batched WLS through QR of sqrt(w) X.

    Returns ``beta (B, q)``, ``cond (B,)`` and ``rank (B,)``; rank-deficient
    rows are left as NaN.
    """
    W = np.atleast_2d(W)
    n, q = X.shape
    sw = np.sqrt(W)
    a = sw[:, :, None] * X[None, :, :]
    b = sw * Y[None, :]
    qm, r = np.linalg.qr(a)
    qtb = np.einsum("bnq,bn->bq", qm, b)
    s = np.linalg.svd(r, compute_uv=False)
    npos = np.count_nonzero(W > 0, axis=1)
    tol = s[:, :1] * max(n, q) * np.finfo(float).eps
    rank = np.where(npos >= q, np.count_nonzero(s > tol, axis=1), np.minimum(npos, q))
    rank = np.where(s[:, 0] > 0, rank, 0)
    ok = rank == q
    beta = np.full((len(W), q), np.nan)
    cond = np.full(len(W), np.inf)
    if np.any(ok):
        beta[ok] = np.linalg.solve(r[ok], qtb[ok][:, :, None])[:, :, 0]
        cond[ok] = s[ok, 0] / s[ok, -1]
    return beta, cond, rank


def fit_local(target, X, Y, weights) -> LocalFit:
    """β̂ = argmin Σ w_l (Y_l - X_l β)^2 at one target."""
    X = design_matrix(X)
    Y = np.asarray(Y, dtype=float)
    w = weights.weights if isinstance(weights, WeightVector) else np.asarray(weights, dtype=float)
    if w.shape != Y.shape or X.shape[0] != Y.shape[0]:
        raise ValueError("X, Y and weights must have matching lengths")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    mass = float(w.sum())
    if mass <= 0:
        raise DegenerateFitError("zero total weight", rank=0)
    beta, cond, rank = solve_weighted(w[None, :], X, Y)
    if rank[0] < X.shape[1]:
        raise DegenerateFitError(f"weighted design has rank {rank[0]} < {X.shape[1]}", int(rank[0]))
    return LocalFit(target, beta[0], float(cond[0]), mass)


def _chunks(m: int, n: int, q: int, budget: int = 4_000_000):
    size = max(1, budget // max(1, n * q))
    return [np.arange(i, min(i + size, m)) for i in range(0, m, size)]


def fit_field(t, u, X, Y, kernel: KernelSpec, target_index=None, obs_index=None,
              threads: int = 1, time_window: float | None = None) -> FieldFit:
    """Fit at each target observation using the (optionally restricted) sample.

    ``target_index`` selects which observations act as targets (default all);
    ``obs_index`` restricts the sample used by every fit (default all).
    A positive ``time_window`` zeroes weights with |t_l - t_i| > time_window.
    Diagnostics are assembled over the targeted observations.
    """
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float).reshape(len(t), -1)
    X = design_matrix(X)
    Y = np.asarray(Y, dtype=float)
    tgt = np.arange(len(t)) if target_index is None else np.asarray(target_index)
    obs = np.arange(len(t)) if obs_index is None else np.asarray(obs_index)
    to, uo, xo, yo = t[obs], u[obs], X[obs], Y[obs]
    q = X.shape[1]

    def work(rows):
        idx = tgt[rows]
        w = weight_matrix(t[idx], u[idx], to, uo, kernel)
        if time_window:
            w = w * (np.abs(to[None, :] - t[idx][:, None]) <= time_window)
        beta, cond, rank = solve_weighted(w, xo, yo)
        return rows, beta, cond, rank, w.sum(axis=1)

    beta = np.full((len(tgt), q), np.nan)
    cond = np.full(len(tgt), np.inf)
    mass = np.zeros(len(tgt))
    rank = np.zeros(len(tgt), dtype=int)
    parts = _chunks(len(tgt), len(obs), q)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(work, parts))
    else:
        results = map(work, parts)
    for rows, b, c, r, m in results:
        beta[rows], cond[rows], rank[rows], mass[rows] = b, c, r, m
    degenerate = rank < q
    out = FieldFit(tgt, beta, cond, mass, degenerate)
    out.diagnostics = _diagnostics(X[tgt], Y[tgt], beta, degenerate)
    return out


def _diagnostics(X, Y, beta, degenerate) -> FitDiagnostics:
    fitted = np.einsum("nq,nq->n", X, beta)
    residuals = Y - fitted
    good = ~degenerate
    p = X.shape[1] - (1 if np.all(X[:, 0] == 1.0) else 0)
    try:
        r2 = adjusted_r2(Y[good], fitted[good], p)
    except ValueError:
        r2 = float("nan")
    return FitDiagnostics(fitted, residuals, r2, summarize_beta(beta[good]), int(degenerate.sum()))


def summarize_beta(beta: np.ndarray) -> list[dict]:
    """min / Q1 / median / Q3 / max of each coefficient column."""
    beta = np.atleast_2d(beta)
    out = []
    for j in range(beta.shape[1]):
        col = np.sort(beta[:, j])
        if col.size == 0:
            out.append(dict(min=np.nan, q1=np.nan, median=np.nan, q3=np.nan, max=np.nan))
            continue
        q1, med, q3 = np.quantile(col, [0.25, 0.5, 0.75], method=QUANTILE_METHOD)
        out.append(dict(min=float(col[0]), q1=float(q1), median=float(med),
                        q3=float(q3), max=float(col[-1])))
    return out


def adjusted_r2(Y, fitted, p: int) -> float:
    """1 - (1 - R^2)(n - 1)/(n - p - 1) with pooled sums of squares."""
    Y = np.asarray(Y, dtype=float)
    fitted = np.asarray(fitted, dtype=float)
    n = len(Y)
    if n <= p + 1:
        raise ValueError(f"need n > p + 1 (n={n}, p={p})")
    sst = float(np.sum((Y - Y.mean()) ** 2))
    if sst == 0:
        raise ValueError("response is constant; R^2 is undefined")
    sse = float(np.sum((Y - fitted) ** 2))
    return 1.0 - (sse / sst) * (n - 1) / (n - p - 1)


def qme_curve(t, u, nt: int, X, Y, kernel: KernelSpec, true_beta, component: int = -1,
              threads: int = 1, time_window: float | None = None) -> list[tuple[int, float]]:
    """Quadratic mean error as time slices accumulate.

    Observations are time-major with ``n_sites = len(t) // nt`` per slice.  At
    step k the sample is slices 1..k and the targets are the sites of slice k;
    the recorded value is the mean of (β̂ - β)^2 for the chosen coefficient.
    """
    t = np.asarray(t, dtype=float)
    ns = len(t) // nt
    true_beta = np.asarray(true_beta, dtype=float)
    if true_beta.ndim > 1:
        true_beta = true_beta[:, component]
    out = []
    for k in range(1, nt + 1):
        obs = np.arange(k * ns)
        tgt = np.arange((k - 1) * ns, k * ns)
        ff = fit_field(t, u, X, Y, kernel, target_index=tgt, obs_index=obs, threads=threads,
                       time_window=time_window)
        good = ~ff.degenerate
        err = ff.beta[good, component] - true_beta[tgt][good]
        out.append((k * ns, float(np.mean(err ** 2)) if good.any() else float("nan")))
    return out


def select_bandwidth(t, u, nt: int, X, Y, kernel: KernelSpec, grid=None, max_folds: int = 20,
                     threads: int = 1, time_window: float | None = None) -> tuple[float, list[tuple[float, float]]]:
    """Leave-one-time-slice-out choice of h over a coarse log grid.

    At most ``max_folds`` evenly spaced slices are held out.  Returns the best
    bandwidth and the (h, RSS) table; folds with a degenerate fit score inf.
    """
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float).reshape(len(t), -1)
    X = design_matrix(X)
    Y = np.asarray(Y, dtype=float)
    ns = len(t) // nt
    if grid is None:
        step = max(1.0 / nt, 1.0 / max(1, round(ns ** (1.0 / u.shape[1]))))
        grid = np.geomspace(step, 2.0, 10)
    folds = np.unique(np.linspace(0, nt - 1, min(nt, max_folds)).round().astype(int))
    table = []
    for h in grid:
        spec = kernel.with_bandwidth(float(h))
        rss = 0.0
        for k in folds:
            tgt = np.arange(k * ns, (k + 1) * ns)
            obs = np.setdiff1d(np.arange(len(t)), tgt) if nt > 1 else tgt
            ff = fit_field(t, u, X, Y, spec, target_index=tgt, obs_index=obs, threads=threads,
                           time_window=time_window)
            if ff.degenerate.any():
                rss = math.inf
                break
            rss += float(np.sum(ff.diagnostics.residuals ** 2))
        table.append((float(h), rss))
    best = min(table, key=lambda hr: (hr[1], hr[0]))
    if not math.isfinite(best[1]):
        raise DegenerateFitError("every bandwidth on the grid produced degenerate fits")
    return best[0], table


def write_fits_csv(path, fit: FieldFit, nt_ns: tuple[int, int]) -> None:
    _, ns = nt_ns
    diag = fit.diagnostics
    q = fit.beta.shape[1]
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time_index", "site_id"] + [f"beta_{j}" for j in range(q)]
                   + ["fitted", "residual", "condition_number"])
        for i, obs in enumerate(fit.target_index):
            k, j = divmod(int(obs), ns)
            w.writerow([k, j] + [repr(float(b)) for b in fit.beta[i]]
                       + [repr(float(diag.fitted[i])), repr(float(diag.residuals[i])),
                          repr(float(fit.condition_number[i]))])


def write_summary_csv(path, diag: FitDiagnostics, names=None) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["coefficient", "min", "q1", "median", "q3", "max", "adjusted_r2"])
        for j, s in enumerate(diag.beta_field_summary):
            name = names[j] if names else f"beta_{j}"
            w.writerow([name] + [repr(s[k]) for k in ("min", "q1", "median", "q3", "max")]
                       + [repr(diag.adjusted_r2)])
