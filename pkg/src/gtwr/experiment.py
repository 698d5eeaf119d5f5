"""Config-driven simulation experiments and external data ingestion."""
from __future__ import annotations

import configparser
import copy
import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, covariates, estimator, noise
from ._rng import rng_for
from .kernels import KernelSpec, weight_matrix
from .stgrid import RegularDesign, write_grid_csv


class ExperimentError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


class IngestError(ValueError):
    pass


DEFAULTS: dict[str, dict[str, str]] = {
    "experiment": {"model_id": "custom", "seed": "20240611", "replications": "1",
                   "qme": "true", "threads": "1"},
    "design": {"d": "2", "nx": "10", "nt": "100"},
    "noise": {"H": "0.65", "H_s": "0.40", "noise_scale": "1.0"},
    "covariate": {"phi10": "0.4", "phi11": "0.25", "innovation_sd": "1.0",
                  "burn_in": "200", "contiguity": "queen"},
    "model": {"beta_surface": "plane", "intercept": "false"},
    "kernel": {"family": "gaussian", "h": "auto", "mu_t": "1.0", "mu_s": "1.0",
               "cv_folds": "20", "time_window": "0"},
}

# The four study models differ only in the coefficient surface and H_t.
PRESETS = {
    "model1": {"model": {"beta_surface": "plane"}, "noise": {"H": "0.65"}},
    "model2": {"model": {"beta_surface": "plane"}, "noise": {"H": "0.90"}},
    "model3": {"model": {"beta_surface": "curved"}, "noise": {"H": "0.65"}},
    "model4": {"model": {"beta_surface": "curved"}, "noise": {"H": "0.90"}},
}


def beta_surface(kind: str, x: float, y: float) -> float:
    """Coefficient surfaces on the unit square: an inclined plane or a curved dome."""
    if kind == "plane":
        return 1.0 + 4.0 * (x + y) / 12.0
    if kind == "curved":
        return 1.0 + (36.0 - (6.0 - 25.0 * x / 2.0) ** 2) * (36.0 - (6.0 - 25.0 * y / 2.0) ** 2) / (324.0 * 8.0)
    raise ValueError(f"unknown surface {kind!r}")


def _surface_values(kind: str, sites: np.ndarray) -> np.ndarray:
    if kind.startswith("constant"):
        _, _, c = kind.partition(":")
        return np.full(len(sites), float(c or 1.0))
    if kind.startswith("csv:"):
        path = kind[4:]
        vals = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if vals.shape[0] != len(sites):
            raise ValueError(f"{path}: expected {len(sites)} rows, got {vals.shape[0]}")
        return vals[:, -1]
    if sites.shape[1] != 2:
        raise ValueError(f"surface {kind!r} is defined on the unit square (d = 2)")
    return np.array([beta_surface(kind, x, y) for x, y in sites])


@dataclass
class ExperimentConfig:
    """Sectioned key/value settings, all stored as strings like the INI file."""

    sections: dict[str, dict[str, str]]

    @classmethod
    def from_sections(cls, sections: dict | None = None, preset: str | None = None) -> "ExperimentConfig":
        merged = copy.deepcopy(DEFAULTS)
        if preset:
            if preset not in PRESETS:
                raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
            _merge(merged, PRESETS[preset])
            merged["experiment"]["model_id"] = preset
        _merge(merged, sections or {})
        cfg = cls(merged)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        cp.optionxform = str
        if not cp.read(path, encoding="utf-8"):
            raise FileNotFoundError(path)
        sections = {s: dict(cp[s]) for s in cp.sections()}
        preset = sections.get("experiment", {}).get("preset")
        if preset:
            sections["experiment"].pop("preset")
            sections["experiment"].setdefault("model_id", preset)
        return cls.from_sections(sections, preset)

    def get(self, section: str, key: str) -> str:
        return self.sections[section][key]

    def getf(self, section: str, key: str) -> float:
        return float(self.sections[section][key])

    def geti(self, section: str, key: str) -> int:
        return int(self.sections[section][key])

    def getb(self, section: str, key: str) -> bool:
        return self.sections[section][key].strip().lower() in ("1", "true", "yes", "on")

    def override(self, section: str, key: str, value) -> None:
        self.sections.setdefault(section, {})[key] = str(value)
        self.validate()

    @property
    def design(self) -> RegularDesign:
        return RegularDesign(self.geti("design", "d"), self.geti("design", "nx"), self.geti("design", "nt"))

    @property
    def alpha(self) -> float:
        nz = self.sections["noise"]
        if "alpha" in nz:
            return float(nz["alpha"])
        return noise.hs_to_alpha(float(nz["H_s"]))

    @property
    def alpha_from_hs(self) -> bool:
        return "alpha" not in self.sections["noise"]

    @property
    def time_window(self) -> float | None:
        w = float(self.sections["kernel"].get("time_window", "0"))
        return w if w > 0 else None

    @property
    def star(self) -> covariates.StarSpec:
        c = self.sections["covariate"]
        return covariates.StarSpec(float(c["phi10"]), float(c["phi11"]),
                                   float(c["innovation_sd"]), int(c["burn_in"]))

    def noise_spec(self) -> noise.NoiseSpec:
        d = self.design
        return noise.NoiseSpec(self.getf("noise", "H"), self.alpha, d.d, d.n)

    def kernel(self, h: float | None = None) -> KernelSpec:
        k = self.sections["kernel"]
        hv = h if h is not None else (1.0 if k["h"] == "auto" else float(k["h"]))
        return KernelSpec(k["family"], hv, float(k["mu_t"]), float(k["mu_s"]))

    def validate(self) -> None:
        self.design
        self.noise_spec()
        self.star
        self.kernel()
        if self.geti("experiment", "replications") < 1:
            raise ValueError("replications must be >= 1")
        if self.getf("noise", "noise_scale") < 0:
            raise ValueError("noise_scale must be nonnegative")
        if self.getf("kernel", "time_window") < 0:
            raise ValueError("time_window must be nonnegative (0 disables it)")
        if self.get("covariate", "contiguity") not in ("rook", "queen"):
            raise ValueError("contiguity must be rook or queen")
        h = self.get("kernel", "h")
        if h != "auto" and not float(h) > 0:
            raise ValueError("kernel h must be positive or 'auto'")

    def to_ini(self) -> str:
        lines = []
        for s, kv in self.sections.items():
            lines.append(f"[{s}]")
            lines += [f"{k} = {v}" for k, v in kv.items()]
            lines.append("")
        return "\n".join(lines)


def _merge(base: dict, extra: dict) -> None:
    for s, kv in extra.items():
        base.setdefault(s, {}).update({k: str(v) for k, v in kv.items()})


def child_seed(seed: int, *keys) -> int:
    return int(rng_for(seed, *keys).integers(0, 2 ** 63))


@dataclass
class SimulatedData:
    design: RegularDesign
    t: np.ndarray
    u: np.ndarray
    x: np.ndarray          # (reps, n)
    noise: np.ndarray      # (reps, n), scaled
    beta: np.ndarray       # (n,)
    y: np.ndarray          # (reps, n)
    factorization: noise.CovarianceFactorization


def simulate(cfg: ExperimentConfig, replications: int | None = None, fixed_x: bool = False) -> SimulatedData:
    """Draw covariates and noise and assemble Y = β X + ε (no intercept)."""
    seed = cfg.geti("experiment", "seed")
    reps = replications or cfg.geti("experiment", "replications")
    design = cfg.design
    t, u = design.observation_coords()
    fact = noise.build_cov_factorization(design, cfg.noise_spec())
    eps = cfg.getf("noise", "noise_scale") * noise.sample_noise(fact, reps, child_seed(seed, "noise"))
    W = covariates.build_contiguity(design, cfg.get("covariate", "contiguity"))
    star = cfg.star
    xs = np.stack([covariates.simulate_star(star, W, design.nt,
                                            child_seed(seed, "covariate", 0 if fixed_x else r)).flat()
                   for r in range(reps)])
    beta = np.tile(_surface_values(cfg.get("model", "beta_surface"), design.sites()), design.nt)
    y = beta * xs + eps
    return SimulatedData(design, t, u, xs, eps, beta, y, fact)


def _design_x(cfg: ExperimentConfig, x: np.ndarray) -> np.ndarray:
    return estimator.design_matrix(x, intercept=cfg.getb("model", "intercept"))


def resolve_bandwidth(cfg: ExperimentConfig, data: SimulatedData, threads: int = 1):
    if cfg.get("kernel", "h") != "auto":
        return float(cfg.get("kernel", "h")), []
    return estimator.select_bandwidth(data.t, data.u, data.design.nt, _design_x(cfg, data.x[0]),
                                      data.y[0], cfg.kernel(), max_folds=cfg.geti("kernel", "cv_folds"),
                                      threads=threads, time_window=cfg.time_window)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_experiment(cfg: ExperimentConfig, out_dir, threads: int | None = None) -> dict:
    """Simulate, fit and write every artefact; returns the manifest dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = threads or int(os.environ.get("GTWR_THREADS", cfg.get("experiment", "threads")))
    written: list[Path] = []
    stage = "setup"

    def path(name):
        p = out / name
        written.append(p)
        return p

    try:
        stage = "simulate"
        data = simulate(cfg)
        design = data.design
        ns, nt = design.n_sites, design.nt
        gap = np.abs(data.y - data.beta * data.x - data.noise)
        if np.any(gap > 8 * np.finfo(float).eps * (np.abs(data.y) + np.abs(data.beta * data.x))):
            raise AssertionError("Y - beta * X does not reproduce the stored noise")

        stage = "bandwidth"
        h, table = resolve_bandwidth(cfg, data, threads)
        kern = cfg.kernel(h)

        stage = "fit"
        X0 = _design_x(cfg, data.x[0])
        ff = estimator.fit_field(data.t, data.u, X0, data.y[0], kern, threads=threads,
                                 time_window=cfg.time_window)

        stage = "qme"
        qme_rows = []
        if cfg.getb("experiment", "qme"):
            for r in range(data.y.shape[0]):
                curve = estimator.qme_curve(data.t, data.u, nt, _design_x(cfg, data.x[r]), data.y[r],
                                            kern, data.beta, threads=threads,
                                            time_window=cfg.time_window)
                qme_rows += [(r, k + 1, m, v) for k, (m, v) in enumerate(curve)]

        stage = "write"
        write_grid_csv(path("grid.csv"), design.sites())
        noise.write_noise_csv(path("noise.csv"), data.noise, nt, ns)
        _write_long(path("covariates.csv"), ["replication", "time_index", "site_id", "value"],
                    data.x, ns)
        _write_frames(path("frames.csv"), data, ff)
        estimator.write_fits_csv(path("fits.csv"), ff, (nt, ns))
        names = [f"beta_{j}" for j in range(X0.shape[1])] if X0.shape[1] > 1 else ["beta_1"]
        estimator.write_summary_csv(path("summary.csv"), ff.diagnostics, names)
        if qme_rows:
            with open(path("qme.csv"), "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["replication", "time_index", "cumulative_obs", "qme"])
                w.writerows([(r, k, m, repr(v)) for r, k, m, v in qme_rows])
        if table:
            with open(path("bandwidth.csv"), "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["h", "rss"])
                w.writerows([(repr(a), repr(b)) for a, b in table])

        stage = "manifest"
        manifest = {
            "library_version": __version__,
            "config": cfg.sections,
            "resolved": {"h": h, "alpha": cfg.alpha, "alpha_from_H_s": cfg.alpha_from_hs,
                         "alpha_convention": "alpha = 2*H_s - 1" if cfg.alpha_from_hs else None,
                         "delta": design.delta, "n": design.n,
                         "sigma_sq": data.factorization.sigma_sq,
                         "jitter": list(data.factorization.jitter),
                         "degenerate_targets": int(ff.degenerate.sum())},
            "seeds": {"root": cfg.geti("experiment", "seed"),
                      "noise": child_seed(cfg.geti("experiment", "seed"), "noise"),
                      "covariate": [child_seed(cfg.geti("experiment", "seed"), "covariate", r)
                                    for r in range(data.y.shape[0])]},
            "files": {p.name: _sha256(p) for p in written},
        }
        mpath = out / "manifest.json"
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
        written.append(mpath)
        return manifest
    except Exception as exc:
        for p in written:
            if p.exists():
                p.unlink()
        raise ExperimentError(stage, exc) from exc


def config_from_manifest(path) -> ExperimentConfig:
    m = json.loads(Path(path).read_text(encoding="utf-8"))
    return ExperimentConfig.from_sections(m["config"])


def _write_long(p: Path, header, mat: np.ndarray, ns: int) -> None:
    with open(p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r, row in enumerate(np.atleast_2d(mat)):
            for c, v in enumerate(row):
                k, j = divmod(c, ns)
                w.writerow([r, k, j, repr(float(v))])


def _write_frames(p: Path, data: SimulatedData, ff: estimator.FieldFit) -> None:
    """Plot-ready long format: one row per (time, site) of replication 0."""
    ns = data.design.n_sites
    sites = data.design.sites()
    with open(p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time_index", "site_id"] + [f"x_{i + 1}" for i in range(sites.shape[1])]
                   + ["covariate", "beta_true", "y", "beta_hat", "y_hat"])
        for i in range(data.design.n):
            k, j = divmod(i, ns)
            w.writerow([k, j] + [repr(float(c)) for c in sites[j]]
                       + [repr(float(v)) for v in (data.x[0, i], data.beta[i], data.y[0, i],
                                                   ff.beta[i, -1], ff.diagnostics.fitted[i])])


def unbiasedness_probe(cfg: ExperimentConfig, h: float, replications: int = 200,
                       n_targets: int = 5) -> dict:
    """Mean and standard error of β̂ - β at random targets, X fixed, noise redrawn."""
    data = simulate(cfg, replications, fixed_x=True)
    gen = rng_for(cfg.geti("experiment", "seed"), "unbiased-targets")
    targets = np.sort(gen.choice(data.design.n, n_targets, replace=False))
    X = _design_x(cfg, data.x[0])
    kern = cfg.kernel(h)
    W = weight_matrix(data.t[targets], data.u[targets], data.t, data.u, kern)
    diffs = np.empty((replications, n_targets))
    for r in range(replications):
        beta, _, rank = estimator.solve_weighted(W, X, data.y[r])
        diffs[r] = beta[:, -1] - data.beta[targets]
    mean = diffs.mean(axis=0)
    se = diffs.std(axis=0, ddof=1) / math.sqrt(replications)
    return dict(targets=targets, mean=mean, se=se, z=mean / se)


# ---------------------------------------------------------------------------
# External observations

@dataclass
class Dataset:
    t: np.ndarray
    u: np.ndarray
    X: np.ndarray
    Y: np.ndarray


def write_observations_csv(path, t, u, X, Y) -> None:
    u = np.asarray(u).reshape(len(t), -1)
    X = np.asarray(X).reshape(len(t), -1)
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(u.shape[1])]
                   + [f"covariate_{j + 1}" for j in range(X.shape[1])] + ["y"])
        for i in range(len(t)):
            w.writerow([repr(float(t[i]))] + [repr(float(v)) for v in u[i]]
                       + [repr(float(v)) for v in X[i]] + [repr(float(Y[i]))])


def ingest_observations(path) -> Dataset:
    """Read ``t, x_1..x_d, covariate_1..covariate_p, y`` rows into arrays."""
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        for col in ("t", "x_1", "covariate_1", "y"):
            if col not in header:
                raise IngestError(f"{path}: missing required column {col!r}")
        xcols = [i for i, h in enumerate(header) if h.startswith("x_")]
        ccols = [i for i, h in enumerate(header) if h.startswith("covariate_")]
        ti, yi = header.index("t"), header.index("y")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise IngestError(f"{path}:{line_no}: non-numeric field") from None
            if not all(math.isfinite(v) for v in vals):
                raise IngestError(f"{path}:{line_no}: non-finite value")
            rows.append(vals)
    if not rows:
        raise IngestError(f"{path}: no observations")
    a = np.array(rows)
    t, u, X, Y = a[:, ti], a[:, xcols], a[:, ccols], a[:, yi]
    if np.any(t < 0):
        raise IngestError(f"{path}: negative time at line {int(np.argmax(t < 0)) + 2}")
    keys = [tuple(r) for r in np.column_stack([t, u])]
    seen: dict[tuple, int] = {}
    dups = []
    for i, k in enumerate(keys):
        if k in seen:
            dups.append((seen[k] + 2, i + 2))
        else:
            seen[k] = i
    if dups:
        listing = ", ".join(f"lines {a} and {b}" for a, b in dups[:10])
        raise IngestError(f"{path}: duplicate space-time points ({listing})")
    return Dataset(t, u, X, Y)
