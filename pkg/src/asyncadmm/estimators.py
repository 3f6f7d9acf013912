"""Estimator-style front ends for the round engine.

``ConsensusADMM`` drives any :class:`~asyncadmm.problems.Problem` to a
stationary point under a simulated schedule; ``CooperativeLocalizer`` wraps
it with a scikit-learn style ``fit`` on a pairwise distance matrix.
"""

import math

import numpy as np
from sklearn.base import BaseEstimator

from .core import AdmmEngine
from .diagnostics import (TraceRecord, augmented_lagrangian, min_feasible_rho, nrmse,
                          stationarity_residuals)
from .errors import ConfigurationError
from .network import make_schedule
from .problems import LocalizationProblem
from .validation import check_choice, check_distance_matrix, check_positive

_RECORD_LEVELS = ("light", "lagrangian", "full")


def _seed_sequence(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


class ConsensusADMM(BaseEstimator):
    """Asynchronous consensus solver for partially separable objectives.

    Runs the two-block scheme (consensus step on shared blocks, gradient or
    surrogate step on local copies, dual ascent on the multipliers) under a
    simulated network schedule until the per-round movement falls below
    ``tol`` or ``max_iter`` rounds elapse.

    Parameters
    ----------
    variant : {'proximal', 'majorized'}
        Local step type: linearized gradient step, or exact minimization of
        a convex upper model when the problem provides one.
    rho : 'auto', float, or sequence of float
        Consensus penalty per node.  'auto' picks, per node, the smallest
        value whose descent margins are positive for the configured schedule.
    max_staleness : int
        Oldest admissible gradient information, in rounds.
    update_freq : float in (0, 1]
        Expected fraction of rounds each node is awake.
    schedule : {'synchronous', 'bernoulli', 'cyclic'}
        Wake-up pattern, ignored when ``fit`` is given a schedule object.
    message_mode : {'sleep-gated', 'always-on'}
        Whether sleeping nodes also stop relaying their copies.
    max_iter : int
    tol : float
        Convergence threshold on per-round movement of copies and consensus
        blocks.
    record : {'light', 'lagrangian', 'full'}
        Trace detail: step norms only, plus the merit function, or plus
        stationarity residuals.
    patience : int or 'auto'
        Consecutive rounds the stopping condition must hold before the run
        is declared converged.  Guards against rounds where most of the
        network slept and nothing moved.  'auto' covers the staleness
        horizon and the expected sleep gaps of the schedule.
    seed : int, SeedSequence, or None
        Drives the initial consensus draw and the schedule.

    Attributes
    ----------
    z_ : ndarray of shape (K, d)
        Final consensus blocks.
    n_iter_ : int
    converged_ : bool
    trace_ : list of TraceRecord
    engine_ : AdmmEngine
    rho_ : ndarray of shape (K,)
    """

    def __init__(self, variant="proximal", rho="auto", max_staleness=0,
                 update_freq=1.0, schedule="synchronous",
                 message_mode="sleep-gated", max_iter=1000, tol=1e-8,
                 record="light", patience="auto", seed=None):
        self.variant = variant
        self.rho = rho
        self.max_staleness = max_staleness
        self.update_freq = update_freq
        self.schedule = schedule
        self.message_mode = message_mode
        self.max_iter = max_iter
        self.tol = tol
        self.record = record
        self.patience = patience
        self.seed = seed

    def _resolve_patience(self):
        if self.patience == "auto":
            return max(2, int(self.max_staleness) + 1,
                       math.ceil(1.0 / self.update_freq))
        patience = int(self.patience)
        if patience < 1:
            raise ConfigurationError("patience must be at least 1")
        return patience

    def _resolve_rho(self, problem):
        if isinstance(self.rho, str):
            if self.rho != "auto":
                raise ConfigurationError(f"unknown rho policy {self.rho!r}")
            return np.array([
                min_feasible_rho(problem.lipschitz(k), self.update_freq,
                                 self.max_staleness,
                                 len(problem.closed_neighborhood(k)),
                                 self.variant)
                for k in range(problem.n_nodes)])
        return self.rho

    def fit(self, problem, schedule=None):
        """Solve ``problem``; returns self.

        Parameters
        ----------
        problem : Problem
        schedule : optional
            Object with a ``draw(t)`` method returning a
            :class:`~asyncadmm.core.RoundInput`; overrides the ``schedule``
            string parameter.
        """
        check_choice("record", self.record, _RECORD_LEVELS)
        check_positive("tol", self.tol)
        if int(self.max_iter) < 1:
            raise ConfigurationError("max_iter must be at least 1")

        init_ss, sched_ss = _seed_sequence(self.seed).spawn(2)
        if schedule is None:
            schedule = make_schedule(self.schedule, problem.n_nodes,
                                     update_freq=self.update_freq,
                                     max_staleness=self.max_staleness,
                                     seed=np.random.default_rng(sched_ss),
                                     message_mode=self.message_mode)
        self.schedule_ = schedule

        rho = self._resolve_rho(problem)
        engine = AdmmEngine(problem, rho, variant=self.variant,
                            max_staleness=self.max_staleness,
                            seed=np.random.default_rng(init_ss))
        self.engine_ = engine
        self.rho_ = engine.rho.copy()

        truth = getattr(problem, "true_positions", None)
        patience = self._resolve_patience()
        self.trace_ = [self._record_row(problem, engine, 0, None, truth)]
        self.converged_ = False
        self.n_iter_ = 0
        streak = 0
        for t in range(1, int(self.max_iter) + 1):
            stats = engine.run_round(schedule.draw(t))
            self.n_iter_ = t
            self.trace_.append(self._record_row(problem, engine, t, stats, truth))
            streak = streak + 1 if (engine.check_stop(self.tol)
                                    and stats.psi <= self.tol) else 0
            if streak >= patience:
                self.converged_ = True
                break

        self.z_ = engine.z
        return self

    def _record_row(self, problem, engine, t, stats, truth):
        row = TraceRecord(iteration=t)
        if stats is not None:
            row.psi = stats.psi
            row.phi = stats.phi
        if truth is not None:
            row.nrmse = nrmse(engine.z, truth)
        if self.record in ("lagrangian", "full"):
            z, copies, duals = engine.snapshot()
            row.lagrangian = augmented_lagrangian(problem, z, copies, duals, engine.rho)
            if self.record == "full":
                resid = stationarity_residuals(problem, z, copies, duals)
                row.r_grad = resid.r_grad
                row.r_subgrad = resid.r_subgrad
                row.r_feas = resid.r_feas
        return row

    def residuals(self):
        """Stationarity residuals of the fitted state."""
        engine = self.engine_
        return stationarity_residuals(engine.problem, *engine.snapshot())


class CooperativeLocalizer(BaseEstimator):
    """Estimate node positions from noisy pairwise range measurements.

    Takes a symmetric matrix of measured ranges (``NaN`` marks unmeasured
    pairs), builds the smoothed stress objective over the measurement graph,
    and solves it with :class:`ConsensusADMM`.  Positions live in the unit
    square; nodes listed in ``anchors`` are pinned to their known locations.

    Parameters
    ----------
    rho : 'auto', float, or sequence of float
    epsilon : float
        Distance smoothing constant.
    weight : float
        Common measurement weight.
    variant, max_staleness, update_freq, schedule, message_mode, max_iter,
    tol, record, seed :
        Passed to :class:`ConsensusADMM`.

    Attributes
    ----------
    embedding_ : ndarray of shape (K, 2)
        Estimated positions.
    problem_ : LocalizationProblem
    solver_ : ConsensusADMM
    n_iter_ : int
    converged_ : bool
    """

    def __init__(self, rho="auto", epsilon=1e-3, weight=1.0,
                 variant="proximal", max_staleness=0, update_freq=1.0,
                 schedule="synchronous", message_mode="sleep-gated",
                 max_iter=2000, tol=1e-6, record="light", patience="auto",
                 seed=None):
        self.rho = rho
        self.epsilon = epsilon
        self.weight = weight
        self.variant = variant
        self.max_staleness = max_staleness
        self.update_freq = update_freq
        self.schedule = schedule
        self.message_mode = message_mode
        self.max_iter = max_iter
        self.tol = tol
        self.record = record
        self.patience = patience
        self.seed = seed

    def fit(self, X, y=None, *, anchors=None, anchor_positions=None,
            true_positions=None):
        """Fit positions to the measured ranges in ``X``; returns self.

        Parameters
        ----------
        X : ndarray of shape (K, K)
            Symmetric range matrix; ``NaN`` where no measurement exists.
        y : ignored
        anchors : sequence of int, optional
        anchor_positions : ndarray of shape (len(anchors), 2), optional
        true_positions : ndarray of shape (K, 2), optional
            Ground truth for error traces.
        """
        from .network import Topology

        X = check_distance_matrix(X)
        K = X.shape[0]
        edges = [(k, j) for k in range(K) for j in range(k + 1, K)
                 if np.isfinite(X[k, j])]
        measurements = {e: float(X[e]) for e in edges}
        anchors = tuple(int(a) for a in anchors) if anchors is not None else ()
        self.problem_ = LocalizationProblem(
            Topology(K, edges), measurements, anchors, anchor_positions,
            epsilon=self.epsilon, weight=self.weight,
            true_positions=true_positions)
        self.solver_ = ConsensusADMM(
            variant=self.variant, rho=self.rho,
            max_staleness=self.max_staleness, update_freq=self.update_freq,
            schedule=self.schedule, message_mode=self.message_mode,
            max_iter=self.max_iter, tol=self.tol, record=self.record,
            patience=self.patience, seed=self.seed).fit(self.problem_)
        self.embedding_ = self.solver_.z_
        self.n_iter_ = self.solver_.n_iter_
        self.converged_ = self.solver_.converged_
        self.trace_ = self.solver_.trace_
        return self

    def fit_transform(self, X, y=None, **kwargs):
        """Fit and return the estimated positions."""
        return self.fit(X, y, **kwargs).embedding_