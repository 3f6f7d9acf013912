"""Round engine for asynchronous consensus ADMM.

Every node ``k`` keeps a local copy ``x[k][j]`` of the decision block of each
member ``j`` of its closed neighborhood, a dual ``y[k][j]`` for the matching
consensus constraint, and the consensus block ``z[k]`` it owns.  One call to
:meth:`AdmmEngine.run_round` plays a full communication round:

1. nodes listed in ``send_xy`` broadcast their weighted copies,
2. awake nodes with a complete inbox recompute their consensus block,
3. nodes listed in ``send_z`` broadcast it (silent neighbors are assumed
   unchanged, so receivers hold their last value),
4. each node selects a cached gradient no older than its staleness budget,
   refreshing the cache when asked to or when forced,
5. copies are updated (linearized proximal step, or exact minimization of a
   convex surrogate), and
6. duals ascend on the consensus residual.

The engine is deterministic: given the same initial state and the same round
inputs it reproduces results bit for bit.
"""

from collections.abc import Mapping, Set
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ScheduleViolationError


@dataclass(frozen=True)
class RoundInput:
    """Exogenous events of one round, normally drawn by a schedule.

    Attributes
    ----------
    iteration : int
        Round counter, starting at 1.
    awake_set : frozenset of int
        Nodes that participate in the consensus update this round.
    staleness_pick : mapping of int to int
        Requested gradient stamp per node; must lie within the node's
        staleness window ``[iteration + 1 - max_staleness, iteration + 1]``.
    send_xy : frozenset of int
        Nodes that broadcast their weighted copies and duals.
    send_z : frozenset of int
        Nodes that broadcast their consensus block after step 2.
    """

    iteration: int
    awake_set: frozenset
    staleness_pick: Mapping
    send_xy: frozenset
    send_z: frozenset

    @classmethod
    def full(cls, iteration, n_nodes):
        """Degenerate synchronous round: everyone awake, sending, and fresh."""
        everyone = frozenset(range(n_nodes))
        picks = {k: iteration + 1 for k in range(n_nodes)}
        return cls(iteration, everyone, picks, everyone, everyone)


@dataclass
class AgentState:
    """Inspection view of one node's local state."""

    node_id: int
    x_copies: dict
    y_duals: dict
    z_local: np.ndarray
    grad_cache: list
    rho: float
    max_staleness: int


@dataclass
class RoundStats:
    """Per-round step norms and bookkeeping returned by ``run_round``."""

    iteration: int
    psi: float
    phi: float
    x_step_max: float
    z_step_max: float
    y_step_max: float
    updated_nodes: frozenset = field(default_factory=frozenset)
    refreshed_nodes: frozenset = field(default_factory=frozenset)
    used_stamps: dict = field(default_factory=dict)


def consensus_update(inbox, sender_rho, prox):
    """Recompute one consensus block from a complete inbox.

    Parameters
    ----------
    inbox : ndarray of shape (m, d)
        Messages ``rho_j * x[j][k] + y[j][k]`` from every closed neighbor,
        stacked in ascending sender order.
    sender_rho : ndarray of shape (m,)
        Penalty weights of the senders, in the same order.
    prox : callable
        ``prox(v, weight)`` mapping the weighted average to the constraint
        set, resolving any nonsmooth penalty on the block.
    """
    inbox = np.asarray(inbox, dtype=float)
    total = np.zeros(inbox.shape[1])
    weight = 0.0
    for i, row in enumerate(inbox):
        total = total + row
        weight += float(sender_rho[i])
    return prox(total / weight, weight)


def proximal_x_update(z_values, grads, duals, rho):
    """Linearized copy update ``x = z - (grad + y) / rho`` (elementwise)."""
    return z_values - (grads + duals) / rho


def dual_update(duals, rho, residuals):
    """Gradient ascent on the consensus residual: ``y + rho * (x - z)``."""
    return duals + rho * residuals


class AdmmEngine:
    """Deterministic simulator of the asynchronous consensus rounds.

    Parameters
    ----------
    problem : Problem
        Bound problem instance; supplies objective blocks, penalties, and
        constraint sets over its coupling topology.
    rho : float or array of shape (K,)
        Per-node penalty parameter, strictly positive.
    variant : {'proximal', 'majorized'}
        Copy-update rule. 'majorized' requires the problem to provide a
        surrogate builder.
    max_staleness : int or array of shape (K,)
        Oldest admissible gradient age per node.
    seed : int, SeedSequence, Generator, or None
        Source for the initial consensus draw; ignored when ``z0`` is given.
    z0 : ndarray of shape (K, d), optional
        Explicit initial consensus blocks.
    """

    def __init__(self, problem, rho, *, variant="proximal", max_staleness=0,
                 seed=None, z0=None):
        from .validation import as_node_array, check_choice

        self.problem = problem
        topo = problem.topology
        self.n_nodes = topo.n_nodes
        self.block_dim = problem.block_dim
        self.variant = check_choice("variant", variant, ("proximal", "majorized"))
        if self.variant == "majorized" and not problem.has_surrogate:
            raise ConfigurationError("problem does not provide a surrogate for the majorized variant")

        self.rho = as_node_array("rho", rho, self.n_nodes)
        if (self.rho <= 0).any() or not np.isfinite(self.rho).all():
            raise ConfigurationError("rho must be positive and finite")
        self.max_staleness = as_node_array("max_staleness", max_staleness, self.n_nodes, dtype=int)
        if (self.max_staleness < 0).any():
            raise ConfigurationError("max_staleness must be nonnegative")

        self._build_layout(topo)
        self._init_state(seed, z0)

    # ------------------------------------------------------------------
    # layout and state

    def _build_layout(self, topo):
        owners, targets = [], []
        self._nbrhood = []
        for k in range(self.n_nodes):
            nbrs = tuple(topo.closed_neighborhood(k))
            self._nbrhood.append(nbrs)
            owners.extend(k for _ in nbrs)
            targets.extend(nbrs)
        self._owners = np.asarray(owners, dtype=np.intp)
        self._targets = np.asarray(targets, dtype=np.intp)
        self.n_edges = len(owners)

        self._slices = []
        self._self_pos = np.empty(self.n_nodes, dtype=np.intp)
        start = 0
        for k, nbrs in enumerate(self._nbrhood):
            stop = start + len(nbrs)
            self._slices.append(slice(start, stop))
            self._self_pos[k] = start + nbrs.index(k)
            start = stop

        self._rho_edge = self.rho[self._owners]
        # Denominator of the consensus average, accumulated in edge order so
        # that it matches a plain ascending-sender loop bit for bit.
        self._rho_sum = np.bincount(self._targets, weights=self._rho_edge,
                                    minlength=self.n_nodes)
        self._nonself = np.flatnonzero(self._owners != self._targets)
        self._open_degree = np.bincount(self._targets[self._nonself],
                                        minlength=self.n_nodes).astype(np.intp)

    def _init_state(self, seed, z0):
        d = self.block_dim
        if z0 is not None:
            z = np.array(z0, dtype=float)
            if z.shape != (self.n_nodes, d):
                raise ConfigurationError(
                    f"z0 must have shape ({self.n_nodes}, {d}), got {z.shape}")
        else:
            rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
            z = np.stack([np.asarray(self.problem.init_z(k, rng), dtype=float)
                          for k in range(self.n_nodes)])
            if z.shape != (self.n_nodes, d):
                raise ConfigurationError("problem.init_z returned blocks of the wrong dimension")

        self._z = z
        self._z0 = z.copy()
        self._X = z[self._targets].copy()
        self._Y = np.zeros((self.n_edges, d))
        self._views = z[self._targets].copy()
        self._G = np.zeros((self.n_edges, d))
        self._caches = [[] for _ in range(self.n_nodes)]
        self._used_snap = [None] * self.n_nodes
        self._used_stamp_buf = {}
        self._round_next = 1
        self._last_stats = None

    # ------------------------------------------------------------------
    # round execution

    def run_round(self, round_input):
        """Advance the network by one round and return its step norms."""
        rin = round_input
        t = self._round_next
        if rin.iteration != t:
            raise ScheduleViolationError(
                f"round input is for iteration {rin.iteration}, engine expects {t}")
        self._validate_round_input(rin, t)

        K, d = self.n_nodes, self.block_dim
        sent = np.zeros(K, dtype=bool)
        sent[list(rin.send_xy)] = True
        awake = np.zeros(K, dtype=bool)
        awake[list(rin.awake_set)] = True

        # (1)-(2) consensus update, gated on a complete inbox.  A node's own
        # contribution is always available to itself.
        heard = np.bincount(self._targets[self._nonself],
                            weights=sent[self._owners[self._nonself]].astype(float),
                            minlength=K)
        gate = awake & (heard.astype(np.intp) == self._open_degree)

        messages = self._rho_edge[:, None] * self._X + self._Y
        agg = np.stack([np.bincount(self._targets, weights=messages[:, c], minlength=K)
                        for c in range(d)], axis=1)
        candidate = agg / self._rho_sum[:, None]
        proxed = self._apply_prox(candidate)

        z_prev = self._z
        z_new = np.where(gate[:, None], proxed, z_prev)
        self._z = z_new

        # (3) consensus broadcast with hold-over for silent senders; a node
        # always sees its own block.
        send_z = np.zeros(K, dtype=bool)
        send_z[list(rin.send_z)] = True
        recv = send_z[self._targets]
        recv[self._self_pos] = True
        self._views[recv] = z_new[self._targets[recv]]

        # (4) gradient cache
        refreshed = self._refresh_caches(rin, t)

        # (5)-(6) copy and dual updates
        if self.variant == "proximal":
            X_new = proximal_x_update(self._views, self._G, self._Y, self._rho_edge[:, None])
        else:
            X_new = self._majorized_x(t)
        Y_new = dual_update(self._Y, self._rho_edge[:, None], X_new - self._views)

        stats = self._round_stats(t, z_prev, z_new, X_new, Y_new, gate, refreshed, rin)
        self._X = X_new
        self._Y = Y_new
        self._round_next = t + 1
        self._last_stats = stats
        return stats

    def _validate_round_input(self, rin, t):
        nodes = range(self.n_nodes)
        for name, s in (("awake_set", rin.awake_set), ("send_xy", rin.send_xy),
                        ("send_z", rin.send_z)):
            if not isinstance(s, (Set, frozenset, set)):
                raise ConfigurationError(f"{name} must be a set of node ids")
            bad = [k for k in s if not (0 <= int(k) < self.n_nodes)]
            if bad:
                raise ScheduleViolationError(f"{name} contains unknown node ids {bad}")
        for k in nodes:
            if k not in rin.staleness_pick:
                raise ConfigurationError(f"staleness_pick is missing node {k}")
            pick = int(rin.staleness_pick[k])
            lo = t + 1 - int(self.max_staleness[k])
            if pick < lo or pick > t + 1:
                raise ScheduleViolationError(
                    f"node {k}: requested gradient stamp {pick} outside [{lo}, {t + 1}]")

    def _apply_prox(self, candidate):
        prox_all = getattr(self.problem, "prox_all", None)
        if prox_all is not None:
            return prox_all(candidate, self._rho_sum)
        out = np.empty_like(candidate)
        for k in range(self.n_nodes):
            out[k] = self.problem.prox_h(k, candidate[k], float(self._rho_sum[k]))
        return out

    def _refresh_caches(self, rin, t):
        refreshed = []
        need_grad = self.variant == "proximal"
        for k in range(self.n_nodes):
            horizon = t + 1 - int(self.max_staleness[k])
            cache = self._caches[k]
            while cache and cache[0][0] < horizon:
                cache.pop(0)
            pick = int(rin.staleness_pick[k])
            entry = None
            if pick < t + 1 and cache:
                for cand in reversed(cache):
                    if cand[0] <= pick:
                        entry = cand
                        break
                if entry is None:
                    entry = cache[0]
            if entry is None:
                snap = self._views[self._slices[k]].copy()
                grad = self.problem.grad_g(k, snap) if need_grad else None
                entry = (t + 1, snap, grad)
                cache.append(entry)
                refreshed.append(k)
            self._used_stamp_buf[k] = entry[0]
            self._used_snap[k] = entry[1]
            if need_grad:
                self._G[self._slices[k]] = entry[2]
        return refreshed

    def _majorized_x(self, t):
        X_new = np.empty_like(self._X)
        for k in range(self.n_nodes):
            sl = self._slices[k]
            surrogate = self.problem.build_surrogate(k, self._used_snap[k])
            X_new[sl] = surrogate.minimize(self._Y[sl], float(self.rho[k]), self._views[sl])
        return X_new

    def _round_stats(self, t, z_prev, z_new, X_new, Y_new, gate, refreshed, rin):
        dz = z_new - z_prev
        dX = X_new - self._X
        dY = Y_new - self._Y
        psi = float(np.linalg.norm(dz))
        mean_shift = np.zeros_like(z_new)
        np.add.at(mean_shift, self._targets, dX)
        phi = float(np.linalg.norm(mean_shift / self.n_nodes))
        x_sq = np.bincount(self._owners, weights=(dX * dX).sum(axis=1), minlength=self.n_nodes)
        y_sq = np.bincount(self._owners, weights=(dY * dY).sum(axis=1), minlength=self.n_nodes)
        return RoundStats(
            iteration=t,
            psi=psi,
            phi=phi,
            x_step_max=float(np.sqrt(x_sq.max())),
            z_step_max=float(np.sqrt((dz * dz).sum(axis=1).max())),
            y_step_max=float(np.sqrt(y_sq.max())),
            updated_nodes=frozenset(np.flatnonzero(gate).tolist()),
            refreshed_nodes=frozenset(refreshed),
            used_stamps=dict(self._used_stamp_buf),
        )

    # ------------------------------------------------------------------
    # inspection

    @property
    def round_index(self):
        """Index of the next round to run (completed rounds + 1)."""
        return self._round_next

    @property
    def z(self):
        return self._z.copy()

    @property
    def z0(self):
        """Consensus blocks the run started from."""
        return self._z0.copy()

    def copies(self, k):
        """Copy blocks held by node ``k``, as a dict keyed by neighbor id."""
        sl = self._slices[k]
        return {j: self._X[sl][i].copy() for i, j in enumerate(self._nbrhood[k])}

    def duals(self, k):
        sl = self._slices[k]
        return {j: self._Y[sl][i].copy() for i, j in enumerate(self._nbrhood[k])}

    def agent_state(self, k):
        cache = [(stamp, {j: g[i].copy() for i, j in enumerate(self._nbrhood[k])})
                 for stamp, _snap, g in self._caches[k] if g is not None]
        if not cache:
            cache = [(stamp, {j: snap[i].copy() for i, j in enumerate(self._nbrhood[k])})
                     for stamp, snap, _g in self._caches[k]]
        return AgentState(
            node_id=k,
            x_copies=self.copies(k),
            y_duals=self.duals(k),
            z_local=self._z[k].copy(),
            grad_cache=cache,
            rho=float(self.rho[k]),
            max_staleness=int(self.max_staleness[k]),
        )

    def snapshot(self):
        """Return ``(z, copies, duals)`` with per-node arrays for diagnostics."""
        copies = [self._X[sl].copy() for sl in self._slices]
        duals = [self._Y[sl].copy() for sl in self._slices]
        return self._z.copy(), copies, duals

    def check_stop(self, delta):
        """True when the last round moved every copy and consensus block by
        at most ``delta``.  Needs at least one completed round."""
        if self._last_stats is None:
            return False
        s = self._last_stats
        return s.x_step_max <= delta and s.z_step_max <= delta

    def dual_identity_gap(self):
        """Worst deviation of the duals from their fixed-point form.

        After a proximal round the duals equal the negated cached gradient;
        after a majorized round they equal the negated surrogate gradient at
        the new copies.  Returns the max norm of the difference over nodes.
        """
        if self._last_stats is None:
            return 0.0
        worst = 0.0
        for k in range(self.n_nodes):
            sl = self._slices[k]
            if self.variant == "proximal":
                ref = self._G[sl]
            else:
                surrogate = self.problem.build_surrogate(k, self._used_snap[k])
                ref = surrogate.grad(self._X[sl])
            gap = np.abs(self._Y[sl] + ref).max()
            worst = max(worst, float(gap))
        return worst
