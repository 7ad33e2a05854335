"""Command-line interface: ``bilevel-lasso {simulate,fit,mcem,waic,mlsurface,map}``.

Inputs are ``X.csv`` (n x d genotype counts), ``Y.csv`` (n x c phenotypes) and
``groups.csv`` (``snp_index,group_id``, 1-based SNP indices). Every run writes
its CSV outputs plus one ``manifest.json`` into ``--out``. A relative ``--out``
is resolved under ``$BILEVEL_LASSO_OUTPUT_ROOT`` when that variable is set.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, svg
from .core import BilevelLassoError, Dataset, GroupStructure, PriorConfig
from .gibbs import GibbsConfig, Mode, posterior_summary, run_chain, run_chains
from .io import read_groups, read_matrix, sha256, write_csv, write_dataset, write_json, write_matrix
from .map_solver import PenaltyWeights, solve_map, verify_map_equivalence
from .mcem import McemConfig, geometric_schedule, run_mcem_multi
from .rng import SeededStream
from .selection import LambdaGrid, ml_surface, waic_grid_search
from .sim import SimConfig, simulate

OUTPUT_ROOT_ENV = "BILEVEL_LASSO_OUTPUT_ROOT"


# --------------------------------------------------------------------------- parsing helpers

def _positive_float(s: str) -> float:
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {s}")
    return v


def _nonneg_float(s: str) -> float:
    v = float(s)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {s}")
    return v


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _nonneg_int(s: str) -> int:
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {s}")
    return v


def _lambda_pair(s: str) -> tuple[float, float]:
    parts = [p for p in s.replace(";", ",").split(",") if p.strip()]
    if len(parts) not in (1, 2):
        raise argparse.ArgumentTypeError(f"expected 'l' or 'l1,l2', got {s!r}")
    vals = [_positive_float(p) for p in parts]
    return (vals[0], vals[-1])


def _float_list(s: str) -> tuple[float, ...]:
    return tuple(_positive_float(p) for p in s.split(",") if p.strip())


def read_config_file(path: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; keys use flag names with or without dashes."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BilevelLassoError(f"{path}:{lineno}: expected key = value")
        k, v = (p.strip() for p in line.split("=", 1))
        out[k.lstrip("-").replace("-", "_")] = v
    return out


def _add_common(p: argparse.ArgumentParser, stochastic: bool):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="key = value file; command-line flags take precedence")
    if stochastic:
        p.add_argument("--seed", type=_nonneg_int, required=True)
        p.add_argument("--jobs", type=_positive_int, default=1, help="worker threads (results do not depend on it)")
    p.add_argument("--svg", action="store_true", help="also write simple SVG plots")


def _add_data(p: argparse.ArgumentParser):
    p.add_argument("--data", help="directory holding X.csv, Y.csv, groups.csv (and optionally W_true.csv)")
    p.add_argument("--x", help="genotype CSV (overrides --data)")
    p.add_argument("--y", help="phenotype CSV (overrides --data)")
    p.add_argument("--groups", help="groups CSV (overrides --data); default: one group per SNP")
    p.add_argument("--truth", help="W_true.csv for truth-vs-estimate output")
    p.add_argument("--relaxed-genotypes", action="store_true", help="accept covariates outside {0,1,2}")
    p.add_argument("--standardize", action="store_true", help="center and scale the columns of X")


def _add_prior(p: argparse.ArgumentParser):
    d = PriorConfig()
    p.add_argument("--a-sigma", type=_positive_float, default=d.a_sigma)
    p.add_argument("--b-sigma", type=_positive_float, default=d.b_sigma)
    p.add_argument("--r1", type=_positive_float, default=d.r1)
    p.add_argument("--delta1", type=_positive_float, default=d.delta1)
    p.add_argument("--r2", type=_positive_float, default=d.r2)
    p.add_argument("--delta2", type=_positive_float, default=d.delta2)


def _add_gibbs(p: argparse.ArgumentParser):
    d = GibbsConfig()
    p.add_argument("--iters", type=_positive_int, default=d.n_iter)
    p.add_argument("--burn-in", type=_nonneg_int, default=d.burn_in)
    p.add_argument("--thin", type=_positive_int, default=d.thin)
    p.add_argument("--save-draws", action="store_true", help="write W draws as .npy")


def _add_grid(p: argparse.ArgumentParser):
    p.add_argument("--grid-min", type=_positive_float, default=1e-2)
    p.add_argument("--grid-max", type=_positive_float, default=1e3)
    p.add_argument("--grid-num", type=_positive_int, default=15)
    p.add_argument("--grid1", type=_float_list, help="explicit lambda1_sq values (comma separated)")
    p.add_argument("--grid2", type=_float_list, help="explicit lambda2_sq values (comma separated)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bilevel-lasso", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a dataset with ground truth")
    _add_common(p, stochastic=True)
    s = SimConfig()
    p.add_argument("--n", type=_positive_int, default=s.n)
    p.add_argument("--d", type=_positive_int, default=s.d)
    p.add_argument("--K", type=_positive_int, default=s.K)
    p.add_argument("--c", type=_positive_int, default=s.c)
    p.add_argument("--lambda1-sq", type=_positive_float, default=s.lambda1_sq)
    p.add_argument("--lambda2-sq", type=_positive_float, default=s.lambda2_sq)
    p.add_argument("--sigma2", type=_positive_float, default=s.sigma2)
    p.add_argument("--groups", help="explicit groups CSV instead of d/K equal groups")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run Gibbs chains (fixed or fully Bayes lambdas)")
    _add_common(p, stochastic=True)
    _add_data(p)
    _add_prior(p)
    _add_gibbs(p)
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.FIXED.value)
    p.add_argument("--lambda1-sq", type=_positive_float, default=1.0)
    p.add_argument("--lambda2-sq", type=_positive_float, default=1.0)
    p.add_argument("--chains", type=_positive_int, default=1)
    p.add_argument("--init-lambda", type=_lambda_pair, action="append",
                   help="starting lambdas for one chain (fully Bayes); repeat per chain")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("mcem", help="empirical Bayes lambdas by Monte Carlo EM")
    _add_common(p, stochastic=True)
    _add_data(p)
    _add_prior(p)
    m = McemConfig()
    p.add_argument("--init", type=_lambda_pair, action="append", help="starting lambdas; repeat for multi-start")
    p.add_argument("--max-iters", type=_nonneg_int, default=m.max_iters)
    p.add_argument("--samples-start", type=_positive_int, default=500)
    p.add_argument("--samples-growth", type=float, default=1.2)
    p.add_argument("--samples-cap", type=_positive_int, default=5000)
    p.add_argument("--cap", type=_positive_float, default=m.divergence_cap)
    p.add_argument("--tol", type=_positive_float, default=m.convergence_tol)
    p.add_argument("--patience", type=_positive_int, default=m.patience)
    p.add_argument("--e-burn-in", type=_nonneg_int, default=m.burn_in)
    p.set_defaults(func=cmd_mcem)

    p = sub.add_parser("waic", help="WAIC grid search plus a fit at the argmin")
    _add_common(p, stochastic=True)
    _add_data(p)
    _add_prior(p)
    _add_gibbs(p)
    _add_grid(p)
    p.set_defaults(func=cmd_waic)

    p = sub.add_parser("mlsurface", help="approximate log marginal likelihood over a grid")
    _add_common(p, stochastic=False)
    _add_data(p)
    _add_prior(p)
    _add_grid(p)
    p.set_defaults(func=cmd_mlsurface)

    p = sub.add_parser("map", help="penalized (posterior mode) estimate")
    _add_common(p, stochastic=False)
    _add_data(p)
    p.add_argument("--gamma1", type=_nonneg_float, default=0.0)
    p.add_argument("--gamma2", type=_nonneg_float, default=0.0)
    p.add_argument("--from-lambda", action="store_true", help="use gamma_i = 2 sigma lambda_i")
    p.add_argument("--sigma2", type=_positive_float, default=1.0)
    p.add_argument("--lambda1-sq", type=_nonneg_float, default=1.0)
    p.add_argument("--lambda2-sq", type=_nonneg_float, default=1.0)
    p.add_argument("--verify", action="store_true", help="check the solution is the posterior mode")
    p.add_argument("--tol", type=_positive_float, default=1e-9)
    p.add_argument("--max-iters", type=_positive_int, default=50_000)
    p.set_defaults(func=cmd_map)
    return parser


# --------------------------------------------------------------------------- shared steps

def _out_dir(args) -> Path:
    out = Path(args.out)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    base = Path(args.data) if args.data else None

    def pick(flag, name):
        if flag:
            return Path(flag)
        if base is not None and (base / name).exists():
            return base / name
        return None

    xp, yp, gp = pick(args.x, "X.csv"), pick(args.y, "Y.csv"), pick(args.groups, "groups.csv")
    if xp is None or yp is None:
        raise BilevelLassoError("X and Y are required (use --data or --x/--y)")
    data = Dataset.create(read_matrix(xp), read_matrix(yp),
                          strict_genotypes=not args.relaxed_genotypes, standardize=args.standardize)
    groups = read_groups(gp, data.d) if gp else GroupStructure.singletons(data.d)
    checksums = {str(p): sha256(p) for p in (xp, yp, gp) if p is not None}
    tp = pick(args.truth, "W_true.csv")
    truth = None
    if tp is not None:
        truth = read_matrix(tp, index_column=True)
        if truth.shape != (data.d, data.c):
            raise BilevelLassoError(f"{tp}: W_true has shape {truth.shape}, expected {(data.d, data.c)}")
        checksums[str(tp)] = sha256(tp)
    return data, groups, truth, checksums


def _prior(args) -> PriorConfig:
    return PriorConfig(args.a_sigma, args.b_sigma, args.r1, args.delta1, args.r2, args.delta2)


def _grid(args) -> LambdaGrid:
    default = LambdaGrid.logspace(args.grid_min, args.grid_max, args.grid_num)
    return LambdaGrid(args.grid1 or default.values1, args.grid2 or default.values2)


def _manifest(out: Path, args, started: float, checksums: dict | None = None, **results):
    config = {k: v for k, v in vars(args).items() if k not in ("func",)}
    write_json(out / "manifest.json", {
        "subcommand": args.command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "data_checksums": checksums or {},
        "software_version": __version__,
        "duration_seconds": time.time() - started,
        "results": results,
    })


def _write_posterior(out: Path, summary, truth, prefix: str = "", make_svg: bool = False, title: str = ""):
    d, c = summary.W_mean.shape
    write_matrix(out / f"{prefix}W_mean.csv", summary.W_mean, "pheno", index_name="snp_index")
    write_csv(out / f"{prefix}W_intervals.csv", ["snp_index", "pheno", "mean", "lower", "upper"],
              ((i + 1, j + 1, summary.W_mean[i, j], summary.W_lower[i, j], summary.W_upper[i, j])
               for i in range(d) for j in range(c)))
    result = {"scalars": summary.scalars}
    if truth is not None:
        write_csv(out / f"{prefix}scatter.csv", ["snp_index", "pheno", "w_true", "w_estimate"],
                  ((i + 1, j + 1, truth[i, j], summary.W_mean[i, j]) for i in range(d) for j in range(c)))
        result["correlation_with_truth"] = float(np.corrcoef(truth.ravel(), summary.W_mean.ravel())[0, 1])
        result["sd_ratio"] = float(summary.W_mean.std() / truth.std()) if truth.std() > 0 else None
        if make_svg:
            svg.scatter(out / f"{prefix}scatter.svg", truth, summary.W_mean, title=title)
    return result


def _write_chain_traces(out: Path, chains, make_svg: bool):
    for k, ch in enumerate(chains):
        write_csv(out / f"chain_{k + 1}.csv",
                  ["iteration", "retained", "sigma2", "lambda1_sq", "lambda2_sq", "loglik"],
                  ((t + 1, int(t >= ch.burn_in and (t + 1 - ch.burn_in) % ch.thin == 0),
                    ch.sigma2_trace[t], ch.lambda1_trace[t], ch.lambda2_trace[t], ch.loglik_trace[t])
                   for t in range(ch.n_iter)))
    if make_svg:
        svg.traces(out / "lambda1_traces.svg", [ch.lambda1_trace for ch in chains], ylabel="lambda1_sq")
        svg.traces(out / "lambda2_traces.svg", [ch.lambda2_trace for ch in chains], ylabel="lambda2_sq")


# --------------------------------------------------------------------------- subcommands

def cmd_simulate(args) -> None:
    started = time.time()
    out = _out_dir(args)
    cfg = SimConfig(args.n, args.d, args.K, args.c, args.lambda1_sq, args.lambda2_sq, args.sigma2, args.seed)
    groups = read_groups(Path(args.groups), args.d) if args.groups else None
    res = simulate(cfg, groups)
    paths = write_dataset(out, res.data, res.groups)
    write_matrix(out / "W_true.csv", res.W_true, "pheno", index_name="snp_index")
    write_csv(out / "scales.csv", ["kind", "index", "value"],
              [("tau2", k + 1, v) for k, v in enumerate(res.tau2_true)]
              + [("omega2", i + 1, v) for i, v in enumerate(res.omega2_true)])
    _manifest(out, args, started, {str(p): sha256(p) for p in paths.values()}, sim_config=cfg.to_dict())


def cmd_fit(args) -> None:
    started = time.time()
    out = _out_dir(args)
    data, groups, truth, checksums = _load(args)
    cfg = GibbsConfig(args.iters, args.burn_in, args.thin, Mode(args.mode), args.lambda1_sq, args.lambda2_sq)
    inits = args.init_lambda
    if inits is not None and len(inits) != args.chains:
        raise BilevelLassoError(f"--init-lambda given {len(inits)} times for {args.chains} chains")
    chains = run_chains(data, groups, _prior(args), cfg, args.seed, args.chains, args.jobs, inits)
    _write_chain_traces(out, chains, args.svg)
    if args.save_draws:
        for k, ch in enumerate(chains):
            np.save(out / f"W_draws_chain_{k + 1}.npy", ch.W)
    summary = posterior_summary(chains)
    result = _write_posterior(out, summary, truth, make_svg=args.svg, title=f"{args.mode} posterior mean")
    result["chains"] = [{"chain": k + 1, "stream_id": ch.stream_id, "lambda1_sq_mean": float(ch.lambda1_sq.mean()),
                         "lambda2_sq_mean": float(ch.lambda2_sq.mean())} for k, ch in enumerate(chains)]
    write_json(out / "summary.json", result)
    _manifest(out, args, started, checksums, **result)


def cmd_mcem(args) -> None:
    started = time.time()
    out = _out_dir(args)
    data, groups, _, checksums = _load(args)
    inits = args.init or [(1.0, 1.0)]
    sched = geometric_schedule(args.max_iters, args.samples_start, args.samples_growth, args.samples_cap)
    cfg = McemConfig(args.max_iters, sched, inits[0], args.cap, args.tol, args.patience, args.e_burn_in)
    traces = run_mcem_multi(data, groups, _prior(args), cfg, inits, args.seed, args.jobs)
    runs = []
    for k, tr in enumerate(traces):
        write_csv(out / f"mcem_trace_{k + 1}.csv", ["iteration", "lambda1_sq", "lambda2_sq", "n_samples", "status"],
                  tr.rows())
        runs.append({"run": k + 1, "init": list(inits[k]), "status": tr.status.value,
                     "iterations": tr.n_iterations, "final": list(tr.final)})
    if args.svg:
        svg.traces(out / "mcem_lambda1.svg", [tr.lambda1_sq for tr in traces], ylabel="lambda1_sq")
        svg.traces(out / "mcem_lambda2.svg", [tr.lambda2_sq for tr in traces], ylabel="lambda2_sq")
    write_json(out / "mcem_summary.json", {"runs": runs})
    _manifest(out, args, started, checksums, runs=runs)


def cmd_waic(args) -> None:
    started = time.time()
    out = _out_dir(args)
    data, groups, truth, checksums = _load(args)
    grid = _grid(args)
    prior = _prior(args)
    cfg = GibbsConfig(args.iters, args.burn_in, args.thin, Mode.FIXED, store_W=False)
    table = waic_grid_search(data, groups, prior, grid, cfg, args.seed, args.jobs)
    write_csv(out / "waic_table.csv", ["lambda1_sq", "lambda2_sq", "lppd", "p_waic", "waic", "error"],
              ((r.lambda1_sq, r.lambda2_sq, r.lppd, r.p_waic, r.waic, r.error) for r in table.rows))
    best = table.argmin
    fit_cfg = GibbsConfig(args.iters, args.burn_in, args.thin, Mode.FIXED, best.lambda1_sq, best.lambda2_sq)
    # The follow-up chain uses the first stream id after the grid's.
    chain = run_chain(data, groups, prior, fit_cfg, SeededStream(args.seed, len(table.rows)))
    result = _write_posterior(out, posterior_summary(chain), truth, prefix="argmin_", make_svg=args.svg,
                              title="WAIC argmin posterior mean")
    summary = {"argmin": asdict(best), "failures": [asdict(r) for r in table.failures], "argmin_fit": result}
    write_json(out / "waic_summary.json", summary)
    _manifest(out, args, started, checksums, **summary)


def cmd_mlsurface(args) -> None:
    started = time.time()
    out = _out_dir(args)
    data, groups, _, checksums = _load(args)
    surf = ml_surface(data, groups, _prior(args), _grid(args))
    write_csv(out / "ml_surface.csv", ["lambda1_sq", "lambda2_sq", "log_ml"], surf.rows())
    summary = {"argmax": {"lambda1_sq": surf.argmax[0], "lambda2_sq": surf.argmax[1]},
               "location": surf.location, "range": surf.range,
               "errors": [{"lambda1_sq": a, "lambda2_sq": b, "error": e} for (a, b), e in surf.errors.items()]}
    write_json(out / "ml_summary.json", summary)
    _manifest(out, args, started, checksums, **summary)


def cmd_map(args) -> None:
    started = time.time()
    out = _out_dir(args)
    data, groups, _, checksums = _load(args)
    if args.from_lambda:
        w = PenaltyWeights.from_lambdas(args.sigma2, args.lambda1_sq, args.lambda2_sq)
    else:
        w = PenaltyWeights(args.gamma1, args.gamma2)
    res = solve_map(data, w.gamma1, w.gamma2, groups, tol=args.tol, max_iters=args.max_iters)
    write_matrix(out / "W_hat.csv", res.W, "pheno", index_name="snp_index")
    write_csv(out / "objective_trace.csv", ["iteration", "objective"], enumerate(res.objective_trace))
    report = {"gamma1": w.gamma1, "gamma2": w.gamma2, "converged": res.converged, "iterations": res.n_iter,
              "objective": res.objective, "lipschitz": res.lipschitz, "restarts": len(res.restarts)}
    if args.verify:
        eq = verify_map_equivalence(data, groups, args.sigma2, args.lambda1_sq, args.lambda2_sq)
        report["equivalence"] = eq.to_dict()
        write_json(out / "equivalence.json", eq.to_dict())
    write_json(out / "map_report.json", report)
    _manifest(out, args, started, checksums, **report)


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = read_config_file(args.config)
        except (OSError, BilevelLassoError) as exc:
            parser.error(str(exc))
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        for a in sub._actions:
            if a.dest in cfg and a.nargs == 0:
                cfg[a.dest] = cfg[a.dest].lower() in ("1", "true", "yes", "on")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    try:
        args.func(args)
    except (BilevelLassoError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
