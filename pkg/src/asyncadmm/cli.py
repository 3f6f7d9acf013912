"""Command line front end.

Subcommands: ``run`` (replicated experiment), ``sweep`` (one parameter,
several values, paired seeds), ``check-params`` (per-node descent-margin
report), ``gen-graph`` (write a localization instance file).

Exit codes: 0 on success, 1 for configuration errors, 2 for runtime
failures.
"""

import argparse
import sys

import numpy as np

from .diagnostics import check_parameters, min_feasible_rho
from .errors import ConfigurationError
from .problems import save_instance
from .runner import (SWEEP_PARAMS, build_config, build_problem, run_experiment,
                     run_sweep)

_OVERRIDE_FLAGS = [
    ("--problem", str, "problem type: localization or quadratic"),
    ("--topology", str, "graph family: geometric or ring"),
    ("--n-nodes", int, "number of nodes"),
    ("--radius", float, "connection radius of the geometric graph"),
    ("--anchors", int, "number of anchor nodes (5 uses the fixed layout)"),
    ("--noise-sigma", float, "range measurement noise level"),
    ("--epsilon", float, "distance smoothing constant"),
    ("--weight", float, "measurement weight"),
    ("--block-dim", int, "block dimension of the quadratic problem"),
    ("--variant", str, "local step: proximal or majorized"),
    ("--rho", str, "penalty parameter value, or 'auto'"),
    ("--update-freq", float, "fraction of rounds each node is awake"),
    ("--max-staleness", int, "oldest admissible gradient age in rounds"),
    ("--schedule", str, "synchronous, bernoulli, or cyclic"),
    ("--message-mode", str, "sleep-gated or always-on"),
    ("--max-iter", int, "round budget per replicate"),
    ("--tol", float, "movement threshold for convergence"),
    ("--threshold", float, "consensus step threshold for the iteration count metric"),
    ("--replicates", int, "number of independent replicates"),
    ("--record", str, "trace detail: light, lagrangian, or full"),
]


def _add_common(parser):
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--preset", help="named parameter preset")
    parser.add_argument("--seed", type=int, help="root seed")
    parser.add_argument("--out", help="output directory (file for gen-graph)")
    parser.add_argument("--workers", type=int, help="parallel replicate workers")
    for flag, typ, help_text in _OVERRIDE_FLAGS:
        parser.add_argument(flag, type=typ, help=help_text)
    parser.add_argument("--check-reference", action=argparse.BooleanOptionalAction,
                        default=None,
                        help="compare the engine against the plain synchronous solver")


def _overrides(args):
    skip = {"command", "config", "preset", "param", "values"}
    out = {}
    for key, value in vars(args).items():
        if key in skip or value is None:
            continue
        out[key] = value
    return out


def _config_from(args):
    return build_config(preset=args.preset, config_path=args.config,
                        overrides=_overrides(args))


def _fmt(value, digits=6):
    if value is None:
        return "NA"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.{digits}g}"
    return str(value)


def _print_experiment(exp):
    config = exp["config"]
    for res in exp["results"]:
        status = "converged" if res.converged else "round budget hit"
        line = (f"replicate {res.replicate}: {status} after {res.n_iter} rounds, "
                f"final consensus step {_fmt(res.final_psi, 3)}")
        if res.nrmse is not None:
            line += f", nrmse {_fmt(res.nrmse, 4)}"
        if res.matches_reference is not None:
            line += f", matches reference: {_fmt(res.matches_reference)}"
        print(line)
    infeasible = [res.replicate for res in exp["results"]
                  if res.rho_feasible is False]
    if infeasible:
        print("warning: penalty parameter below the guaranteed-descent bound "
              f"on {len(infeasible)}/{len(exp['results'])} replicates "
              "(see feasibility.csv); running anyway")
    if exp["aggregate_nrmse"] is not None:
        print(f"aggregate nrmse over {config.replicates} replicates: "
              f"{_fmt(exp['aggregate_nrmse'], 6)}")
    if config.check_reference:
        ok = all(res.matches_reference for res in exp["results"])
        print(f"engine matches reference on all replicates: {_fmt(ok)}")
    if config.out:
        print(f"outputs written to {config.out}")


def cmd_run(args):
    exp = run_experiment(_config_from(args))
    _print_experiment(exp)
    return 0


def cmd_sweep(args):
    config = _config_from(args)
    values = [v for v in (s.strip() for s in args.values.split(",")) if v]
    arms = run_sweep(config, args.param, values)
    for value, exp in arms:
        results = exp["results"]
        reached = [r.iters_to_threshold for r in results
                   if r.iters_to_threshold is not None]
        mean_iters = sum(reached) / len(reached) if reached else None
        line = [f"{args.param} = {value}:",
                f"{sum(r.converged for r in results)}/{len(results)} converged,",
                f"mean rounds to threshold {_fmt(mean_iters, 5)}"]
        if exp["aggregate_nrmse"] is not None:
            line.append(f", aggregate nrmse {_fmt(exp['aggregate_nrmse'], 4)}")
        print(" ".join(line))
    if config.out:
        print(f"outputs written to {config.out}")
    return 0


def _instance_for(config):
    root = np.random.SeedSequence(config.seed)
    first = root.spawn(config.replicates)[0]
    graph_ss, noise_ss, _ = first.spawn(3)
    return build_problem(config, np.random.default_rng(graph_ss),
                         np.random.default_rng(noise_ss))


def cmd_check_params(args):
    config = _config_from(args)
    problem = _instance_for(config)
    if config.rho_policy == "auto":
        rho = np.array([
            min_feasible_rho(problem.lipschitz(k), config.update_freq,
                             config.max_staleness,
                             len(problem.closed_neighborhood(k)), config.variant)
            for k in range(problem.n_nodes)])
    else:
        rho = np.full(problem.n_nodes, config.rho)
    checks = check_parameters(problem, rho, update_freq=config.update_freq,
                              max_staleness=config.max_staleness,
                              variant=config.variant)
    print("node  rho         lipschitz   nbrs  alpha        beta         feasible  min_rho")
    for c in checks:
        print(f"{c.node:<5d} {_fmt(c.rho):<11} {_fmt(c.lipschitz):<11} "
              f"{c.neighborhood_size:<5d} {_fmt(c.alpha, 5):<12} {_fmt(c.beta, 5):<12} "
              f"{_fmt(c.feasible):<9} {_fmt(c.min_rho)}")
    bad = [c.node for c in checks if not c.feasible]
    if bad:
        print(f"descent conditions FAIL at nodes {bad}")
    else:
        print("descent conditions hold at every node")
    return 0


def cmd_gen_graph(args):
    config = _config_from(args)
    if config.problem != "localization":
        raise ConfigurationError("gen-graph only produces localization instances")
    if not config.out:
        raise ConfigurationError("gen-graph requires --out FILE")
    problem = _instance_for(config)
    save_instance(config.out, problem)
    print(f"wrote instance: {problem.n_nodes} nodes, "
          f"{problem.topology.n_edges} edges, "
          f"connected: {_fmt(problem.topology.connected)}, "
          f"anchors: {len(problem.anchor_ids)} -> {config.out}")
    return 0


_COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "check-params": cmd_check_params,
    "gen-graph": cmd_gen_graph,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="asyncadmm",
        description="Asynchronous consensus optimization over simulated networks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("run", "run a replicated experiment"),
            ("sweep", "run an experiment once per parameter value"),
            ("check-params", "report per-node descent margins"),
            ("gen-graph", "write a localization instance file")]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "sweep":
            p.add_argument("--param", required=True,
                           help=f"parameter to sweep: one of {', '.join(SWEEP_PARAMS)}")
            p.add_argument("--values", required=True,
                           help="comma separated parameter values")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
