"""Command-line entry point: ``gtwr <subcommand> [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, covariates, estimator, noise, validate
from .experiment import (ExperimentConfig, ExperimentError, IngestError, PRESETS,
                         child_seed, config_from_manifest, ingest_observations, run_experiment)
from .kernels import KernelSpec


def _threads(args) -> int:
    env = os.environ.get("GTWR_THREADS")
    if env:
        return max(1, int(env))
    return max(1, args.threads or 1)


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "manifest", None):
        cfg = config_from_manifest(args.manifest)
    elif args.config:
        cfg = ExperimentConfig.from_file(args.config)
    else:
        cfg = ExperimentConfig.from_sections(preset=args.preset)
    if args.seed is not None:
        cfg.override("experiment", "seed", args.seed)
    if getattr(args, "replications", None):
        cfg.override("experiment", "replications", args.replications)
    return cfg


def _note_alpha(cfg: ExperimentConfig) -> None:
    if cfg.alpha_from_hs:
        hs = cfg.get("noise", "H_s")
        print(f"note: spatial exponent alpha = 2*H_s - 1 = {cfg.alpha:g} (H_s = {hs})",
              file=sys.stderr)


def _common(p, replications=True):
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in model preset")
    p.add_argument("--seed", type=int, help="root seed (overrides the config)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads (GTWR_THREADS overrides)")
    if replications:
        p.add_argument("--replications", type=int, help="number of independent draws")


def cmd_simulate_noise(args) -> int:
    cfg = _load_config(args)
    _note_alpha(cfg)
    design = cfg.design
    fact = noise.build_cov_factorization(design, cfg.noise_spec())
    reps = cfg.geti("experiment", "replications")
    draws = cfg.getf("noise", "noise_scale") * noise.sample_noise(
        fact, reps, child_seed(cfg.geti("experiment", "seed"), "noise"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    noise.write_noise_csv(out / "noise.csv", draws, design.nt, design.n_sites)
    noise.write_matrix_csv(out / "temporal_cov.csv", fact.temporal)
    noise.write_matrix_csv(out / "spatial_cov.csv", fact.spatial)
    print(f"wrote {reps} draw(s) of {design.n} cells to {out}")
    return 0


def cmd_simulate_covariates(args) -> int:
    cfg = _load_config(args)
    design = cfg.design
    W = covariates.build_contiguity(design, cfg.get("covariate", "contiguity"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.geti("experiment", "seed")
    for r in range(cfg.geti("experiment", "replications")):
        field = covariates.simulate_star(cfg.star, W, design.nt, child_seed(seed, "covariate", r))
        covariates.write_covariates_csv(out / f"covariates_{r}.csv", field)
    print(f"wrote covariate field(s) to {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    if args.no_qme:
        cfg.override("experiment", "qme", "false")
    _note_alpha(cfg)
    try:
        manifest = run_experiment(cfg, args.out, threads=_threads(args))
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    res = manifest["resolved"]
    print(f"{cfg.get('experiment', 'model_id')}: h = {res['h']:.6g}, "
          f"degenerate targets = {res['degenerate_targets']}, outputs in {args.out}")
    return 0


def cmd_qme(args) -> int:
    path = Path(args.run_dir) / "qme.csv"
    if not path.exists():
        print(f"error: {path} not found (run without --no-qme first)", file=sys.stderr)
        return 2
    curve = qme_mean_curve(path)
    out = Path(args.out) if args.out else Path(args.run_dir) / "qme_mean.csv"
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time_index", "cumulative_obs", "mean_qme"])
        w.writerows([(k, m, repr(v)) for k, m, v in curve])
    vals = np.array([v for _, _, v in curve])
    print(f"first {vals[0]:.6g}  terminal {vals[-1]:.6g}  min {vals.min():.6g}  max {vals.max():.6g}")
    return 0


def qme_mean_curve(path) -> list[tuple[int, int, float]]:
    """Average the per-replication QME rows by time index."""
    acc: dict[int, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            acc.setdefault(int(row["time_index"]), [int(row["cumulative_obs"]), []])[1].append(
                float(row["qme"]))
    return [(k, m, float(np.mean(v))) for k, (m, v) in sorted(acc.items())]


def cmd_validate(args) -> int:
    reports = validate.run_validation(args.seed or 0, args.mc_samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    validate.write_reports(reports, out / "validation.csv", out / "validation.json")
    failed = [r for r in reports if not r.passed]
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  ({r.kind}, score {r.z:.3g})")
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    return 1 if failed else 0


def cmd_summarize(args) -> int:
    run = Path(args.run_dir)
    manifest = json.loads((run / "manifest.json").read_text(encoding="utf-8"))
    print(f"model {manifest['config']['experiment']['model_id']}  "
          f"h = {manifest['resolved']['h']:.6g}  alpha = {manifest['resolved']['alpha']:g}")
    with open(run / "summary.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    print(f"{'coef':8s}" + "".join(f"{k:>10s}" for k in ("min", "q1", "median", "q3", "max")))
    for r in rows:
        print(f"{r['coefficient']:8s}" + "".join(f"{float(r[k]):10.4f}"
                                                 for k in ("min", "q1", "median", "q3", "max")))
    if rows:
        print(f"adjusted R^2 = {float(rows[0]['adjusted_r2']):.4f}")
    return 0


def cmd_fit(args) -> int:
    try:
        data = ingest_observations(args.data)
    except IngestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    X = estimator.design_matrix(data.X, intercept=args.intercept)
    kern = KernelSpec(args.kernel, 1.0, args.mu_t, args.mu_s)
    if args.h is not None:
        h = args.h
    else:
        nt = len(np.unique(data.t))
        if len(data.t) % nt:
            print("error: automatic bandwidth needs a complete space-time grid; pass --h",
                  file=sys.stderr)
            return 2
        order = np.lexsort(tuple(data.u.T[::-1]) + (data.t,))
        if not np.array_equal(order, np.arange(len(order))):
            print("error: automatic bandwidth needs time-major ordered rows; pass --h",
                  file=sys.stderr)
            return 2
        h, _ = estimator.select_bandwidth(data.t, data.u, nt, X, data.Y, kern, threads=_threads(args))
    ff = estimator.fit_field(data.t, data.u, X, data.Y, kern.with_bandwidth(h), threads=_threads(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_external_fits(out / "fits.csv", data, ff)
    names = (["beta_0"] if args.intercept else []) + [f"beta_{j + 1}" for j in range(data.X.shape[1])]
    estimator.write_summary_csv(out / "summary.csv", ff.diagnostics, names)
    print(f"fitted {len(data.t)} observations with h = {h:.6g}; "
          f"adjusted R^2 = {ff.diagnostics.adjusted_r2:.4f}; degenerate = {ff.diagnostics.n_degenerate}")
    return 0


def write_external_fits(path, data, ff) -> None:
    q = ff.beta.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["obs_id", "t"] + [f"x_{i + 1}" for i in range(data.u.shape[1])]
                   + [f"beta_{j}" for j in range(q)] + ["fitted", "residual", "condition_number"])
        for i in range(len(data.t)):
            w.writerow([i, repr(float(data.t[i]))] + [repr(float(v)) for v in data.u[i]]
                       + [repr(float(b)) for b in ff.beta[i]]
                       + [repr(float(ff.diagnostics.fitted[i])), repr(float(ff.diagnostics.residuals[i])),
                          repr(float(ff.condition_number[i]))])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gtwr", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-noise", help="draw fractional-coloured noise fields")
    _common(p)
    p.set_defaults(func=cmd_simulate_noise)

    p = sub.add_parser("simulate-covariates", help="draw STAR(1,1) covariate fields")
    _common(p)
    p.set_defaults(func=cmd_simulate_covariates)

    p = sub.add_parser("run", help="run a full simulation experiment")
    _common(p)
    p.add_argument("--manifest", help="rerun exactly from an earlier manifest.json")
    p.add_argument("--no-qme", action="store_true", help="skip the QME curves")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("qme", help="average the QME curves of a run directory")
    p.add_argument("run_dir")
    p.add_argument("--out", help="output CSV (default <run_dir>/qme_mean.csv)")
    p.set_defaults(func=cmd_qme)

    p = sub.add_parser("validate", help="run the oracle checks; exit 1 on failure")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mc-samples", type=int, default=1_000_000)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("summarize", help="print the coefficient summary of a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("fit", help="fit observations from a CSV file")
    p.add_argument("--data", required=True, help="CSV with t, x_1..x_d, covariate_1..p, y")
    p.add_argument("--out", required=True)
    p.add_argument("--h", type=float, help="bandwidth (default: leave-one-slice-out search)")
    p.add_argument("--kernel", default="gaussian", choices=["gaussian", "bisquare"])
    p.add_argument("--mu-t", type=float, default=1.0)
    p.add_argument("--mu-s", type=float, default=1.0)
    p.add_argument("--intercept", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_fit)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
