"""Experiment orchestration: configs, presets, replicates, output files.

A run is described by a flat :class:`RunConfig`, resolved from defaults,
an optional preset, an optional ``key = value`` config file, and command
line overrides, in that order.  Replicates are seeded from one root seed
through spawned child sequences, so results are reproducible for any worker
count.
"""

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .diagnostics import check_parameters, nrmse, write_trace
from .errors import ConfigurationError
from .estimators import ConsensusADMM
from .network import generate_geometric_graph, ring_topology
from .problems import LocalizationProblem, random_quadratic
from .reference import synchronous_reference_run
from .validation import check_choice, check_fraction, check_positive

PRESETS = {
    # The 25-node localization benchmark: geometric graph over the unit
    # square, five anchors, noisy ranges, random wake-ups with stale
    # gradients, copies relayed even while asleep.
    "paper-localization": dict(
        problem="localization", topology="geometric", n_nodes=25, radius=0.5,
        anchors=5, noise_sigma=0.02, epsilon=1e-3, weight=1.0,
        variant="proximal", rho_policy="fixed", rho=10.0, update_freq=0.75,
        max_staleness=8, schedule="bernoulli", message_mode="always-on",
        max_iter=600, tol=1e-6, threshold=1e-6, replicates=20,
        record="light"),
    # Small synchronous quadratic whose engine run is compared float for
    # float against the plain reference implementation.
    "sync-check": dict(
        problem="quadratic", topology="ring", n_nodes=10, block_dim=1,
        variant="proximal", rho_policy="auto", rho=None, update_freq=1.0,
        max_staleness=0, schedule="synchronous", max_iter=500, tol=1e-10,
        replicates=3, record="light", check_reference=True),
}

_INT_FIELDS = {"n_nodes", "anchors", "block_dim", "max_staleness", "max_iter",
               "replicates", "workers", "seed"}
_FLOAT_FIELDS = {"radius", "noise_sigma", "epsilon", "weight", "rho",
                 "update_freq", "tol", "threshold"}
_BOOL_FIELDS = {"check_reference"}


@dataclass
class RunConfig:
    """Flat description of one experiment."""

    problem: str = "localization"
    topology: str = "geometric"
    n_nodes: int = 25
    radius: float = 0.5
    anchors: int = 5
    noise_sigma: float = 0.02
    epsilon: float = 1e-3
    weight: float = 1.0
    block_dim: int = 1
    variant: str = "proximal"
    rho_policy: str = "auto"
    rho: Optional[float] = None
    update_freq: float = 1.0
    max_staleness: int = 0
    schedule: str = "synchronous"
    message_mode: str = "sleep-gated"
    max_iter: int = 1000
    tol: float = 1e-8
    threshold: float = 1e-6
    replicates: int = 20
    workers: int = 1
    seed: int = 0
    record: str = "light"
    check_reference: bool = False
    out: Optional[str] = None
    preset: Optional[str] = None

    def validate(self):
        check_choice("problem", self.problem, ("localization", "quadratic"))
        check_choice("topology", self.topology, ("geometric", "ring"))
        check_choice("variant", self.variant, ("proximal", "majorized"))
        check_choice("rho_policy", self.rho_policy, ("auto", "fixed"))
        check_choice("schedule", self.schedule, ("synchronous", "bernoulli", "cyclic"))
        check_choice("message_mode", self.message_mode, ("sleep-gated", "always-on"))
        check_choice("record", self.record, ("light", "lagrangian", "full"))
        if self.rho_policy == "auto":
            if self.rho is not None:
                raise ConfigurationError("rho_policy 'auto' does not take a rho value")
        else:
            if self.rho is None:
                raise ConfigurationError("rho_policy 'fixed' requires rho")
            check_positive("rho", self.rho)
        check_fraction("update_freq", self.update_freq)
        check_positive("radius", self.radius)
        check_positive("epsilon", self.epsilon)
        check_positive("weight", self.weight)
        check_positive("noise_sigma", self.noise_sigma, allow_zero=True)
        check_positive("tol", self.tol)
        check_positive("threshold", self.threshold)
        for name in ("n_nodes", "max_iter", "replicates", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be at least 1")
        if int(self.max_staleness) < 0:
            raise ConfigurationError("max_staleness must be nonnegative")
        if int(self.block_dim) < 1:
            raise ConfigurationError("block_dim must be at least 1")
        if not 0 <= int(self.anchors) <= int(self.n_nodes):
            raise ConfigurationError("anchors must lie in [0, n_nodes]")
        if self.check_reference and (self.schedule != "synchronous"
                                     or self.update_freq != 1.0
                                     or int(self.max_staleness) != 0):
            raise ConfigurationError(
                "check_reference requires the synchronous schedule with "
                "update_freq 1 and max_staleness 0")
        return self


def _coerce(key, raw):
    raw = raw.strip()
    low = raw.lower()
    if key in _BOOL_FIELDS:
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigurationError(f"{key} expects a boolean, got {raw!r}")
    if low in ("none", "null", "na"):
        return None
    if key in _INT_FIELDS:
        return int(raw)
    if key in _FLOAT_FIELDS:
        return float(raw)
    return raw


def parse_config_file(path):
    """Read a flat ``key = value`` config file into a dict."""
    names = {f.name for f in dataclasses.fields(RunConfig)}
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if key not in names:
                raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
            if key == "rho" and value.strip().lower() == "auto":
                out["rho_policy"] = "auto"
                out["rho"] = None
                continue
            out[key] = _coerce(key, value)
    return out


def build_config(preset=None, config_path=None, overrides=None):
    """Resolve a :class:`RunConfig` from preset, file, and overrides."""
    overrides = dict(overrides or {})
    file_values = parse_config_file(config_path) if config_path else {}
    preset = overrides.pop("preset", None) or preset or file_values.pop("preset", None)
    values = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(
                f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    file_values.pop("preset", None)
    values.update(file_values)
    force_auto = False
    if "rho" in overrides and isinstance(overrides["rho"], str):
        if overrides["rho"].lower() == "auto":
            overrides.pop("rho")
            overrides.setdefault("rho_policy", "auto")
            force_auto = True
        else:
            overrides["rho"] = float(overrides["rho"])
            overrides.setdefault("rho_policy", "fixed")
    elif "rho" in overrides and overrides["rho"] is not None:
        overrides.setdefault("rho_policy", "fixed")
    values.update({k: v for k, v in overrides.items() if v is not None})
    if force_auto:
        values["rho"] = None
    values["preset"] = preset
    return RunConfig(**values).validate()


# ----------------------------------------------------------------------
# instance construction and single runs


def build_problem(config, graph_rng, noise_rng):
    """Draw one problem instance; returns the problem object."""
    if config.problem == "quadratic":
        if config.topology == "ring":
            topo = ring_topology(config.n_nodes)
        else:
            topo, _, _ = generate_geometric_graph(config.n_nodes, config.radius,
                                                  seed=graph_rng)
        return random_quadratic(topo, config.block_dim, seed=graph_rng)

    fixed_layout = config.anchors == 5
    topo, positions, anchor_ids = generate_geometric_graph(
        config.n_nodes, config.radius, seed=graph_rng, anchors=fixed_layout)
    if not fixed_layout:
        anchor_ids = tuple(range(config.anchors))
    return LocalizationProblem.from_truth(
        topo, positions, anchor_ids, epsilon=config.epsilon,
        noise_sigma=config.noise_sigma, weight=config.weight, seed=noise_rng)


@dataclass
class ReplicateResult:
    """Summary line of one replicate."""

    replicate: int
    converged: bool
    n_iter: int
    iters_to_threshold: Optional[int]
    final_psi: Optional[float]
    final_phi: Optional[float]
    nrmse: Optional[float]
    matches_reference: Optional[bool] = None
    rho_feasible: Optional[bool] = None


def iterations_to_threshold(trace, threshold):
    """First round after which the consensus step norm stays at or below
    ``threshold``; ``None`` when it never does."""
    last_above = 0
    last_seen = 0
    for rec in trace:
        if rec.psi is None:
            continue
        last_seen = max(last_seen, rec.iteration)
        if rec.psi > threshold:
            last_above = rec.iteration
    if last_seen == 0 or last_above == last_seen:
        return None
    return last_above + 1


def _compare_with_reference(problem, solver):
    engine = solver.engine_
    ref = synchronous_reference_run(problem, engine.z0, solver.rho_, solver.n_iter_)
    if not np.array_equal(engine.z, ref["z_history"][-1]):
        return False
    for k in range(problem.n_nodes):
        copies = engine.copies(k)
        duals = engine.duals(k)
        for j in problem.closed_neighborhood(k):
            if not np.array_equal(copies[j], ref["copies"][k][j]):
                return False
            if not np.array_equal(duals[j], ref["duals"][k][j]):
                return False
    return True


def run_single(config, replicate, seed_seq):
    """Run one replicate; returns a dict with its result, trace, and
    (for localization) the final position estimates."""
    graph_ss, noise_ss, solver_ss = seed_seq.spawn(3)
    problem = build_problem(config, np.random.default_rng(graph_ss),
                            np.random.default_rng(noise_ss))
    solver = ConsensusADMM(
        variant=config.variant,
        rho="auto" if config.rho_policy == "auto" else config.rho,
        max_staleness=config.max_staleness, update_freq=config.update_freq,
        schedule=config.schedule, message_mode=config.message_mode,
        max_iter=config.max_iter, tol=config.tol, record=config.record,
        seed=solver_ss).fit(problem)

    matches = None
    if config.check_reference:
        matches = _compare_with_reference(problem, solver)

    checks = check_parameters(
        problem, solver.rho_, update_freq=config.update_freq,
        max_staleness=config.max_staleness, variant=config.variant)
    final_nrmse = solver.trace_[-1].nrmse
    result = ReplicateResult(
        replicate=replicate, converged=solver.converged_,
        n_iter=solver.n_iter_,
        iters_to_threshold=iterations_to_threshold(solver.trace_, config.threshold),
        final_psi=solver.trace_[-1].psi, final_phi=solver.trace_[-1].phi,
        nrmse=final_nrmse, matches_reference=matches,
        rho_feasible=all(c.feasible for c in checks))
    estimate = None
    if config.problem == "localization":
        estimate = {"positions": solver.z_,
                    "truth": problem.true_positions,
                    "anchors": problem.anchor_ids}
    return {"result": result, "trace": solver.trace_, "estimate": estimate,
            "feasibility": checks}


def _run_single_payload(args):
    return run_single(*args)


# ----------------------------------------------------------------------
# experiments and sweeps


def _cell(value):
    if value is None:
        return "NA"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


SUMMARY_HEADER = ("replicate,converged,n_iter,iters_to_threshold,"
                  "final_psi,final_phi,nrmse,matches_reference,rho_feasible")


def _summary_row(res):
    return ",".join(_cell(v) for v in (
        res.replicate, res.converged, res.n_iter, res.iters_to_threshold,
        res.final_psi, res.final_phi, res.nrmse, res.matches_reference,
        res.rho_feasible))


def run_experiment(config):
    """Run all replicates of ``config`` and write output files.

    Returns a dict with the per-replicate results, the aggregate error for
    localization runs, and the resolved config.
    """
    config.validate()
    root = np.random.SeedSequence(config.seed)
    payloads = [(config, i, ss)
                for i, ss in enumerate(root.spawn(config.replicates))]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outputs = list(pool.map(_run_single_payload, payloads))
    else:
        outputs = [run_single(*p) for p in payloads]

    results = [o["result"] for o in outputs]
    aggregate = None
    if config.problem == "localization":
        aggregate = nrmse([o["estimate"]["positions"] for o in outputs],
                          [o["estimate"]["truth"] for o in outputs])

    if config.out:
        os.makedirs(config.out, exist_ok=True)
        for i, o in enumerate(outputs):
            write_trace(os.path.join(config.out, f"trace_{i:04d}.csv"), o["trace"])
        with open(os.path.join(config.out, "summary.csv"), "w", encoding="ascii") as fh:
            fh.write(SUMMARY_HEADER + "\n")
            for res in results:
                fh.write(_summary_row(res) + "\n")
            agg_cells = ["ALL"] + ["NA"] * 5 + [_cell(aggregate), "NA", "NA"]
            fh.write(",".join(agg_cells) + "\n")
        _write_feasibility(os.path.join(config.out, "feasibility.csv"), outputs)
        if config.problem == "localization":
            _write_estimates(os.path.join(config.out, "estimates.csv"), outputs)
        _write_config(os.path.join(config.out, "config.txt"), config)

    return {"results": results, "aggregate_nrmse": aggregate, "config": config,
            "outputs": outputs}


def _write_feasibility(path, outputs):
    with open(path, "w", encoding="ascii") as fh:
        fh.write("replicate,node,rho,lipschitz,neighborhood_size,"
                 "alpha,beta,feasible,min_rho\n")
        for i, o in enumerate(outputs):
            for c in o["feasibility"]:
                fh.write(",".join([
                    str(i), str(c.node), repr(c.rho), repr(c.lipschitz),
                    str(c.neighborhood_size), repr(c.alpha), repr(c.beta),
                    _cell(c.feasible), repr(c.min_rho)]) + "\n")


def _write_estimates(path, outputs):
    with open(path, "w", encoding="ascii") as fh:
        fh.write("replicate,node,x,y,true_x,true_y,is_anchor\n")
        for i, o in enumerate(outputs):
            est = o["estimate"]
            anchors = set(est["anchors"])
            for k, (pos, tru) in enumerate(zip(est["positions"], est["truth"])):
                fh.write(",".join([str(i), str(k), repr(float(pos[0])),
                                   repr(float(pos[1])), repr(float(tru[0])),
                                   repr(float(tru[1])),
                                   "1" if k in anchors else "0"]) + "\n")


def _write_config(path, config):
    with open(path, "w", encoding="ascii") as fh:
        for f in dataclasses.fields(RunConfig):
            fh.write(f"{f.name} = {_cell(getattr(config, f.name))}\n")


SWEEP_PARAMS = ("rho", "max-staleness", "update-freq")


def run_sweep(config, param, values):
    """Run ``config`` once per parameter value with paired seeds.

    Every arm reuses the same root seed, so instances and schedules differ
    only through the swept parameter.  Returns a list of (value, experiment
    result) pairs and writes ``sweep.csv`` when an output directory is set.
    """
    check_choice("param", param, SWEEP_PARAMS)
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    arms = []
    for value in values:
        if param == "rho":
            arm = dataclasses.replace(config, rho_policy="fixed", rho=float(value))
        elif param == "max-staleness":
            arm = dataclasses.replace(config, max_staleness=int(value))
        else:
            arm = dataclasses.replace(config, update_freq=float(value))
        if config.out:
            tag = f"{param}-{value}"
            arm = dataclasses.replace(arm, out=os.path.join(config.out, tag))
        arms.append((value, run_experiment(arm.validate())))

    if config.out:
        os.makedirs(config.out, exist_ok=True)
        with open(os.path.join(config.out, "sweep.csv"), "w", encoding="ascii") as fh:
            fh.write("param,value,replicates,converged,reached_threshold,"
                     "mean_iters_to_threshold,aggregate_nrmse\n")
            for value, exp in arms:
                results = exp["results"]
                reached = [r.iters_to_threshold for r in results
                           if r.iters_to_threshold is not None]
                mean_iters = (sum(reached) / len(reached)) if reached else None
                fh.write(",".join([
                    param, _cell(float(value)), str(len(results)),
                    str(sum(r.converged for r in results)), str(len(reached)),
                    _cell(mean_iters), _cell(exp["aggregate_nrmse"])]) + "\n")
    return arms