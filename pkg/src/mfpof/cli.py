"""Command-line interface.

Every subcommand writes its outputs under ``--out-dir`` and exits 0; on
failure it prints a JSON error object to stderr and exits 1.
"""
import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import oscillator as osc
from .amh import PosteriorSample, write_trace_csv
from .design import generate_nlhs, maximin_improve, write_design_csv
from .experiment import (VARIANTS, ExperimentConfig, _write_thetas, dumps_report, fit_variant,
                         kde_density, make_dataset, pof_config, read_dataset_csv, reference_pof,
                         run_experiment, variant_data, variant_prior, write_dataset_csv)
from .pof import sample_pof, summarize, write_summary_json


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "variant", None):
        overrides["variant"] = args.variant
    if getattr(args, "replications", None) is not None:
        overrides["replications"] = args.replications
    return cfg.replace(**overrides) if overrides else cfg


def _out(args) -> Path:
    p = Path(args.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _dataset(args, cfg):
    if args.data:
        data = read_dataset_csv(args.data, cfg.levels, cfg.bounds)
    else:
        data = make_dataset(cfg, 0)
    return variant_data(cfg, data)


def cmd_design(args):
    cfg = _config(args)
    rng = np.random.default_rng(cfg.master_seed)
    des = maximin_improve(generate_nlhs(cfg.d, cfg.design_sizes, rng), cfg.maximin_iterations, rng)
    write_design_csv(_out(args) / "design.csv", des)


def cmd_simulate(args):
    out = _out(args)
    with open(args.input, newline="") as fh:
        rows = list(csv.DictReader(fh))
    with open(out / "simulate.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["omega0", "zeta", "dt", "seed", "output", "cost_ms"])
        total = 0.0
        for row in rows:
            inp = osc.OscillatorInput(float(row["omega0"]), float(row["zeta"]), float(row["dt"]))
            z = osc.simulate(inp, np.random.default_rng(int(row["seed"])), scheme=args.scheme)
            c = osc.cost(inp.dt)
            total += c
            w.writerow([row["omega0"], row["zeta"], row["dt"], row["seed"], repr(z), repr(c)])
    print(json.dumps({"runs": len(rows), "total_cost_ms": total}))


def cmd_fit(args):
    cfg = _config(args)
    out = _out(args)
    data = _dataset(args, cfg)
    if not args.data:
        write_dataset_csv(out / "data.csv", data)
    thetas, info = fit_variant(cfg, data, 0)
    _write_thetas(out / "thetas.csv", thetas if cfg.fully_bayesian else thetas[:1])
    meta = {"variant": cfg.variant, "n_observations": data.n, "names": thetas[0].names}
    if cfg.fully_bayesian:
        post: PosteriorSample = info["posterior"]
        write_trace_csv(out / "trace.csv", post)
        meta["acceptance_rate"] = post.acceptance_rate
        meta["n_retained"] = len(post.thetas)
    else:
        meta["map_log_theta"] = thetas[0].log_theta.tolist()
    _dump(out / "fit.json", meta)


def _read_thetas(path, prior):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [prior.point([float(v) for v in r]) for r in rows]


def cmd_pof(args):
    cfg = _config(args)
    out = _out(args)
    data = _dataset(args, cfg)
    if args.thetas:
        thetas = _read_thetas(args.thetas, variant_prior(cfg))
        if not cfg.fully_bayesian and len(thetas) == 1:
            thetas = thetas * cfg.amh.p
    else:
        thetas, _ = fit_variant(cfg, data, 0)
    samples = sample_pof(data, thetas, pof_config(cfg, 0))
    samples.write_csv(out / "pof_samples.csv")
    write_summary_json(out / "pof_summary.json", summarize(samples, cfg.interval_levels),
                       {"variant": cfg.variant, "config": samples.config})


def cmd_experiment(args):
    cfg = _config(args)
    out = _out(args)
    report = run_experiment(cfg, out_dir=out, workers=args.workers)
    (out / "report.json").write_text(dumps_report(report))
    agg = report["aggregate"]
    print(json.dumps({"success_95": agg["success_95"], "replications": len(report["replications"]),
                      "reference": report["reference"]["value"]}))


def cmd_reference(args):
    cfg = _config(args)
    n = args.runs if args.runs is not None else cfg.reference_runs
    p, se = reference_pof(cfg, n)
    obj = {"estimate": p, "se": se, "n_runs": n, "z_crit": cfg.z_crit, "t_ref": cfg.t_ref,
           "scheme": cfg.scheme, "master_seed": cfg.master_seed}
    _dump(_out(args) / "reference.json", obj)
    print(json.dumps(obj))


def cmd_kde(args):
    with open(args.input, newline="") as fh:
        reader = csv.DictReader(fh)
        column = args.column or reader.fieldnames[-1]
        values = np.array([float(r[column]) for r in reader])
    lo, hi = (args.grid_min, args.grid_max)
    if lo is None or hi is None:
        pad = 4 * (values.max() - values.min() + 1e-12) / max(len(values), 1) ** 0.2
        lo = values.min() - pad if lo is None else lo
        hi = values.max() + pad if hi is None else hi
    grid = np.linspace(lo, hi, args.grid_points)
    dens = kde_density(values, grid)
    with open(_out(args) / "kde.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "density"])
        for g, v in zip(grid, dens):
            w.writerow([repr(float(g)), repr(float(v))])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfpof", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, variant=False, replications=False):
        p.add_argument("--config", help="experiment configuration (JSON)")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out-dir", default=".", help="output directory")
        if variant:
            p.add_argument("--variant", choices=VARIANTS)
        if replications:
            p.add_argument("--replications", type=int)
        return p

    p = common(sub.add_parser("design", help="emit a nested maximin LHS design"))
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("simulate", help="run the oscillator on (omega0, zeta, dt, seed) rows")
    p.add_argument("--input", required=True, help="CSV with columns omega0, zeta, dt, seed")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--scheme", choices=osc.SCHEMES, default="euler")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("fit", help="sample or maximize the hyper-parameter posterior"), variant=True)
    p.add_argument("--data", help="dataset CSV (x_1..x_d, t, z); default: simulate replication 0")
    p.set_defaults(func=cmd_fit)

    p = common(sub.add_parser("pof", help="sample the posterior of the probability of failure"), variant=True)
    p.add_argument("--data", help="dataset CSV; default: simulate replication 0")
    p.add_argument("--thetas", help="log-parameter CSV written by 'fit'; default: fit first")
    p.set_defaults(func=cmd_pof)

    p = common(sub.add_parser("experiment", help="replicated study"), variant=True, replications=True)
    p.add_argument("--workers", type=int, default=1, help="worker processes (does not change results)")
    p.set_defaults(func=cmd_experiment)

    p = common(sub.add_parser("reference", help="direct Monte Carlo reference probability"))
    p.add_argument("--runs", type=int)
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("kde", help="Gaussian kernel density of a CSV column")
    p.add_argument("--input", required=True)
    p.add_argument("--column")
    p.add_argument("--grid-min", type=float)
    p.add_argument("--grid-max", type=float)
    p.add_argument("--grid-points", type=int, default=200)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_kde)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                     "command": args.command}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
