"""Command-line entry point.

Exit status is 0 on success, 2 for invalid input (bad flags, config or data)
and 1 for failures during computation. Errors go to standard error as a
single ``error code=<code> [row=<n>] message=<text>`` line.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import io
from .conjugate import CandidateGrid, ConjugatePriors, fit_all
from .errors import RNNCError, ValidationError
from .metrics import PredictionRecords, all_metrics
from .priors import InverseGammaPrior, NormalPrior
from .recursive import predict_recursive
from .sampler import ChainConfig, run_chain
from .simulate import four_level_spec, simulate, table1_spec

log = logging.getLogger("rnnc")


class UsageError(ValidationError):
    code = "usage-error"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p, data=True):
    p.add_argument("--config", help="YAML run configuration")
    if data:
        p.add_argument("--data", required=True, help="observation file (x, y, value, level)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--threads", type=int, help="worker threads for cross-validation")
    p.add_argument("--delimiter", choices=["comma", "tab"], default="comma")


def build_parser():
    parser = _Parser(prog="rnnc", description="Recursive nearest-neighbour co-kriging")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("simulate", help="write a synthetic multi-fidelity data set"), data=False)
    _common(sub.add_parser("fit-conjugate", help="grid-selected conjugate fit of every level"))
    _common(sub.add_parser("fit-mcmc", help="collapsed MCMC fit of every level"))
    p = sub.add_parser("predict", help="predict the top level at new locations")
    _common(p)
    p.add_argument("--fit", required=True, help="posterior file from fit-conjugate or fit-mcmc")
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--targets", help="file with x, y columns (value optional)")
    target.add_argument("--grid-out", help="pixel grid x0:x1:nx,y0:y1:ny")
    p.add_argument("--level", type=int, help="level to predict (default: top)")
    p = sub.add_parser("evaluate", help="metrics for a prediction file with an obs column")
    p.add_argument("--data", required=True, help="predictions with obs, mean, sd, lo95, hi95")
    p.add_argument("--out", required=True)
    p.add_argument("--delimiter", choices=["comma", "tab"], default="comma")
    return parser


def _setup(args):
    cfg = config_mod.load(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise UsageError("--seed must be non-negative")
        cfg["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            raise UsageError("--threads must be positive")
        cfg["threads"] = args.threads
    meta = {"config_hash": config_mod.config_hash(cfg), "seed": cfg["seed"]}
    return cfg, meta


def _delim(args):
    return "\t" if args.delimiter == "tab" else ","


def _conjugate_priors(cfg, T):
    pr = cfg["priors"]

    def per_level(block):
        return block if isinstance(block, list) else [block] * T

    betas, gammas = per_level(pr["beta"]), per_level(pr["gamma"])
    if len(betas) != T:
        raise ValidationError(f"config priors/beta lists {len(betas)} levels, data has {T}")
    dims = {"constant": 1, "linear": 3}
    pb, pg = dims[cfg["model"]["trend"]], dims[cfg["model"]["scale"]]
    sig = InverseGammaPrior(pr["sigma2"]["a"], pr["sigma2"]["b"])
    out = []
    for t in range(T):
        b = betas[t]
        g = gammas[min(t, len(gammas) - 1)]
        beta = NormalPrior.isotropic(pb, b.get("mean", 0.0), b.get("var", 1000.0))
        gamma = NormalPrior.isotropic(pg, g.get("mean", 0.0), g.get("var", 1000.0)) if t else None
        out.append(ConjugatePriors(beta, sig, gamma))
    return out


def cmd_simulate(args, cfg, meta):
    s = cfg["simulate"]
    make = table1_spec if s["preset"] == "two-level" else four_level_spec
    sim = simulate(make(s["n"], design=s["design"], seed=cfg["seed"]))
    out = Path(args.out)
    d = _delim(args)
    io.write_table(out / "train.csv", ["x", "y", "value", "level"], io.observation_rows(sim.coords, sim.z), meta, d)
    T = len(sim.coords)
    rows = [(float(a), float(b), float(v), T, float(yl)) for (a, b), v, yl in zip(sim.test_coords, sim.test_z, sim.test_y)]
    io.write_table(out / "test.csv", ["x", "y", "value", "level", "latent"], rows, meta, d)
    truth = []
    for t, p in enumerate(sim.spec.params, start=1):
        truth += [(t, f"beta_{k}", float(v)) for k, v in enumerate(p.beta, start=1)]
        if p.gamma is not None:
            truth += [(t, f"gamma_{k}", float(v)) for k, v in enumerate(p.gamma, start=1)]
        truth += [(t, "sigma2", p.cov.sigma2), (t, "decay", float(p.cov.decay)), (t, "tau2", float(p.tau2))]
    io.write_table(out / "truth.csv", ["level", "parameter", "value"], truth, meta, d)
    return 0


def _ingest(args, cfg):
    datasets, (label, shared), lat0 = io.ingest(args.data, cfg, _delim(args))
    log.info("nesting: %s (shared locations %s)", label, shared)
    print(f"nesting: {label}; shared locations between consecutive levels: {shared}", file=sys.stderr)
    return datasets, lat0


def cmd_fit_conjugate(args, cfg, meta):
    datasets, _ = _ingest(args, cfg)
    g = cfg["grid"]
    grid = CandidateGrid.log_spaced(tuple(g["decay"]), g["n_decay"], tuple(g["tau2_rel"]), g["n_tau"])
    fit = fit_all(
        datasets, grid, _conjugate_priors(cfg, len(datasets)), K=g["folds"], m=cfg["model"]["m"],
        seed=cfg["seed"], ordering=cfg["model"]["ordering"], anisotropic=cfg["model"]["anisotropic"],
        threads=cfg["threads"], trend=_basis(cfg, "trend"), scale=_basis(cfg, "scale"),
    )
    out, d = Path(args.out), _delim(args)
    io.write_table(out / "posterior.csv", ["level", "parameter", "value"], io.posterior_rows(fit.posteriors), meta, d)
    cv = []
    for t, p in enumerate(fit.posteriors, start=1):
        for decay, tau, score, *_ in p.cv_table:
            decay = ";".join(repr(float(v)) for v in np.atleast_1d(decay))
            cv.append((t, decay, tau, score))
    io.write_table(out / "cv_table.csv", ["level", "decay", "tau2_rel", "rmspe"], cv, meta, d)
    kn = []
    for t, f in enumerate(fit.knots, start=1):
        kn += [(t, float(a), float(b), float(mu), float(v)) for (a, b), mu, v in zip(f.at, f.mean, f.var)]
    io.write_table(out / "knots.csv", ["level", "x", "y", "mean", "var"], kn, meta, d)
    return 0


def _basis(cfg, key):
    from .recursive import Basis

    return Basis(cfg["model"][key])


def cmd_fit_mcmc(args, cfg, meta):
    datasets, _ = _ingest(args, cfg)
    mc, pr = cfg["mcmc"], cfg["priors"]
    beta = pr["beta"][0] if isinstance(pr["beta"], list) else pr["beta"]
    gamma = pr["gamma"][0] if isinstance(pr["gamma"], list) else pr["gamma"]
    if beta.get("mean", 0.0) != 0.0 or gamma.get("mean", 0.0) != 0.0:
        raise ValidationError("the MCMC path supports zero-mean coefficient priors only")
    chain = ChainConfig(
        iterations=mc["iterations"], burn_in=mc["burn_in"], thin=mc["thin"], scales=tuple(mc["scales"]),
        adapt=mc["adapt"], target_accept=mc["target_accept"], seed=cfg["seed"], kappa_max=pr["kappa_max"],
        sigma2_prior=InverseGammaPrior(pr["sigma2"]["a"], pr["sigma2"]["b"]),
        tau2_prior=InverseGammaPrior(pr["tau2"]["a"], pr["tau2"]["b"]),
        beta_var=beta.get("var", 1000.0), gamma_var=gamma.get("var", 1000.0), init_decay=mc["init_decay"],
        m=cfg["model"]["m"], ordering=cfg["model"]["ordering"],
    )
    res = run_chain(datasets, chain, trend=_basis(cfg, "trend"), scale=_basis(cfg, "scale"))
    out, d = Path(args.out), _delim(args)
    for t, draws in enumerate(res.draws, start=1):
        names = list(draws)
        rows = zip(*(draws[n] for n in names))
        io.write_table(out / f"samples_level{t}.csv", names, rows, meta, d)
    summary = [(t, n, mu, lo, hi) for t, n, mu, lo, hi in res.summary()]
    summary += [(t, "accept_rate", r, r, r) for t, r in enumerate(res.accept_rate, start=1)]
    io.write_table(out / "summary.csv", ["level", "parameter", "mean", "lo95", "hi95"], summary, meta, d)
    io.write_table(out / "posterior.csv", ["level", "parameter", "value"], io.mcmc_posterior_rows(res), meta, d)
    return 0


def cmd_predict(args, cfg, meta):
    datasets, lat0 = _ingest(args, cfg)
    d = _delim(args)
    levels = io.levels_from_posterior(datasets, io.read_posterior(args.fit, d), cfg)
    obs = None
    if args.targets:
        cols = io.read_table(args.targets, ("x", "y"), d)
        raw = np.column_stack([cols["x"], cols["y"]])
        obs = cols.get("value")
    else:
        raw = io.parse_grid_spec(args.grid_out)
    targets = io.project_equirectangular(raw[:, 0], raw[:, 1], lat0) if lat0 is not None else raw
    level = args.level or len(levels)
    pred = predict_recursive(levels, targets, upto=level, include_nugget=obs is not None)
    lo, hi = pred.interval(0.95)
    cols = ["x", "y", "level", "mean", "sd", "lo95", "hi95"]
    rows = [list(r) for r in zip(raw[:, 0], raw[:, 1], [level] * len(raw), pred.mean, pred.sd, lo, hi)]
    if obs is not None:
        cols.append("obs")
        for r, v in zip(rows, obs):
            r.append(float(v))
    io.write_table(Path(args.out) / "predictions.csv", cols, rows, meta, d)
    return 0


def cmd_evaluate(args):
    d = _delim(args)
    cols = io.read_table(args.data, ("mean", "sd"), d)
    obs = cols.get("obs", cols.get("value"))
    if obs is None:
        raise ValidationError(f"{args.data}: needs an obs (or value) column")
    rec = PredictionRecords(obs, cols["mean"], cols["sd"], cols.get("lo95"), cols.get("hi95"))
    meta = {"config_hash": "-", "seed": "-"}
    with open(args.data, encoding="utf-8") as fh:
        first = fh.readline()
    if first.startswith("# config_hash="):
        parts = dict(p.split("=", 1) for p in first[2:].split())
        meta = {"config_hash": parts.get("config_hash", "-"), "seed": parts.get("seed", "-")}
    rows = list(all_metrics(rec).items())
    io.write_table(Path(args.out) / "metrics.csv", ["metric", "value"], rows, meta, d)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "fit-conjugate": cmd_fit_conjugate,
    "fit-mcmc": cmd_fit_mcmc,
    "predict": cmd_predict,
}


def _report(exc):
    row = f" row={exc.row}" if getattr(exc, "row", None) is not None else ""
    code = getattr(exc, "code", "runtime-error")
    print(f"error code={code}{row} message={exc}", file=sys.stderr)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
        if args.command == "evaluate":
            return cmd_evaluate(args)
        cfg, meta = _setup(args)
        return COMMANDS[args.command](args, cfg, meta)
    except ValidationError as exc:
        _report(exc)
        return 2
    except RNNCError as exc:
        _report(exc)
        return 1
    except Exception as exc:  # anything else is a runtime failure, still reported on one line
        print(f"error code=runtime-error message={type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
