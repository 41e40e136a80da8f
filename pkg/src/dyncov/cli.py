"""Command-line interface.

Subcommands:

* ``simulate``   generate one scenario dataset (and optionally its truth)
* ``estimate``   sliding-window or latent-GP covariance estimation
* ``test``       frequentist or Bayesian dynamics test on a CSV series
* ``experiment`` run / resume / report a full simulation sweep
"""

import argparse
import json
import sys

import numpy as np

from . import experiments
from .bayes import BayesTestConfig, bayesian_test
from .kernels import PRESETS, preset
from .rng import substream
from .sliding_window import WindowConfig, estimate
from .statistics import STAT_KINDS
from .surrogate import SurrogateConfig, frequentist_test
from .timeseries import SimSpec, generate, load_csv, save_csv, save_trajectory_csv
from .wishart import (
    SmcConfig,
    WishartModel,
    ensemble_mean_trajectory,
    save_ensemble,
    smc_infer,
)


def _add_simulate(sub):
    p = sub.add_parser("simulate", help="generate a simulated dataset")
    p.add_argument("--scenario", required=True, choices=["periodic", "state_switching", "static"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--amplitude", type=float, default=None)
    p.add_argument("--frequency", type=int, default=None)
    p.add_argument("--phase", type=float, default=None)
    p.add_argument("--static-value", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path for the observations")
    p.add_argument("--truth-out", default=None, help="CSV path for the true trajectory")


def _add_estimate(sub):
    p = sub.add_parser("estimate", help="estimate covariance over time")
    p.add_argument("--method", required=True, choices=["sliding", "wishart"])
    p.add_argument("--input", required=True, help="CSV time series")
    p.add_argument("--no-header", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--window-frac", type=float, default=0.1)
    p.add_argument("--window-points", type=int, default=None)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--uncentered", action="store_true")
    p.add_argument("--kernel", default="periodic", help=f"one of {sorted(PRESETS)}")
    p.add_argument("--particles", type=int, default=200)
    p.add_argument("--chains", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mean-out", default=None, help="CSV for the posterior-mean trajectory")


def _add_test(sub):
    p = sub.add_parser("test", help="test whether connectivity is dynamic")
    p.add_argument("--framework", required=True, choices=["frequentist", "bayesian"])
    p.add_argument("--input", required=True)
    p.add_argument("--no-header", action="store_true")
    p.add_argument("--stat", default="variance", choices=list(STAT_KINDS))
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--surrogates", type=int, default=1000)
    p.add_argument("--window-frac", type=float, default=0.1)
    p.add_argument("--kernel", default="periodic")
    p.add_argument("--particles", type=int, default=200)
    p.add_argument("--chains", type=int, default=3)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write the results JSON here as well")


def _add_experiment(sub):
    p = sub.add_parser("experiment", help="run the simulation sweep")
    p.add_argument("action", choices=["run", "resume", "report"])
    p.add_argument("--plan", default=None, help="JSON plan file")
    p.add_argument("--preset", default=None, choices=["desk", "paper"],
                   help="use a built-in plan instead of --plan")
    p.add_argument("--out", required=True, help="output/archive directory")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--format", default="csv,json,long")


def _load_plan(args) -> experiments.ExperimentPlan:
    if args.plan:
        with open(args.plan) as fh:
            return experiments.ExperimentPlan.from_json(json.load(fh))
    if args.preset == "desk":
        return experiments.ExperimentPlan.desk()
    if args.preset == "paper":
        return experiments.ExperimentPlan()
    raise SystemExit("experiment needs --plan FILE or --preset desk|paper")


def _cmd_simulate(args) -> int:
    spec = SimSpec(
        scenario=args.scenario,
        n=args.n,
        amplitude=args.amplitude,
        frequency=args.frequency,
        phase=args.phase,
        static_value=args.static_value,
        replicate_seed=args.seed,
    )
    traj, ts = generate(spec, substream(args.seed, "simulation"))
    save_csv(ts, args.out)
    if args.truth_out:
        save_trajectory_csv(traj, args.truth_out)
    print(f"wrote {args.out} ({ts.n} rows, {ts.d} channels)")
    return 0


def _cmd_estimate(args) -> int:
    ts = load_csv(args.input, has_header=not args.no_header)
    if args.method == "sliding":
        cfg = WindowConfig(
            window_fraction=None if args.window_points else args.window_frac,
            window_points=args.window_points,
            stride=args.stride,
            center=not args.uncentered,
        )
        traj = estimate(ts, cfg)
        save_trajectory_csv(traj, args.out)
        print(f"wrote {args.out} ({traj.n} estimates)")
        return 0
    model = WishartModel(d=ts.d, kernel=preset(args.kernel))
    cfg = SmcConfig(particles=args.particles, chains=args.chains)
    ensemble = smc_infer(model, ts, cfg, substream(args.seed, "smc"))
    save_ensemble(args.out, ensemble)
    if args.mean_out:
        save_trajectory_csv(ensemble_mean_trajectory(ensemble), args.mean_out)
    flag = "" if ensemble.converged else " (NOT converged)"
    print(f"wrote {args.out} ({ensemble.size} particles){flag}")
    return 0 if ensemble.converged else 3


def _edge_key(pair) -> str:
    return f"{pair[0]}-{pair[1]}"


def _cmd_test(args) -> int:
    ts = load_csv(args.input, has_header=not args.no_header)
    if args.framework == "frequentist":
        result = frequentist_test(
            ts,
            WindowConfig(window_fraction=args.window_frac),
            SurrogateConfig(
                num_surrogates=args.surrogates, alpha=args.alpha, statistic=args.stat
            ),
            substream(args.seed, "surrogates"),
        )
        payload = {
            "framework": "frequentist",
            "statistic": args.stat,
            "alpha": args.alpha,
            "edges": {
                _edge_key(pair): {
                    "stat": edge.observed,
                    "p": edge.p_value,
                    "dynamic": bool(edge.is_dynamic),
                }
                for pair, edge in result.edges.items()
            },
        }
    else:
        model = WishartModel(d=ts.d, kernel=preset(args.kernel))
        cfg = BayesTestConfig(
            num_draws=args.draws,
            smc=SmcConfig(particles=args.particles, chains=args.chains),
        )
        result = bayesian_test(model, ts, args.stat, cfg, substream(args.seed, "bayes"))
        payload = {
            "framework": "bayesian",
            "statistic": args.stat,
            "kernel": args.kernel,
            "converged": result.converged,
            "edges": {
                _edge_key(pair): {
                    "log_bf10": edge.log_bf10,
                    "label": edge.label,
                    "densities": {
                        "prior_at_zero": edge.prior_density_at_zero,
                        "posterior_at_zero": edge.posterior_density_at_zero,
                    },
                }
                for pair, edge in result.edges.items()
            },
        }
    text = json.dumps(payload, indent=2)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return 0


def _cmd_experiment(args) -> int:
    plan = _load_plan(args)
    formats = tuple(f.strip() for f in args.format.split(",") if f.strip())
    if args.action in ("run", "resume"):
        table, failures = experiments.run_plan(plan, args.out, workers=args.workers)
        experiments.report(table, args.out, formats)
        print(f"{len(table.rows)} table rows, {len(failures)} failed cells")
        return 1 if failures else 0
    table = experiments.aggregate_records(experiments.load_records(plan, args.out))
    paths = experiments.report(table, args.out, formats)
    for path in paths:
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dyncov",
        description="Estimate time-varying covariance and test whether it is dynamic.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_simulate(sub)
    _add_estimate(sub)
    _add_test(sub)
    _add_experiment(sub)
    args = parser.parse_args(argv)
    np.seterr(all="ignore")
    commands = {
        "simulate": _cmd_simulate,
        "estimate": _cmd_estimate,
        "test": _cmd_test,
        "experiment": _cmd_experiment,
    }
    return commands[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
