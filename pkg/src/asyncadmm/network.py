"""Network topologies and asynchrony schedules for the round engine.

The generators here are deterministic given a seed.  Geometric graphs follow
the unit-disk convention: nodes are placed uniformly on the unit square and
linked whenever their distance is at most the communication radius.
"""

import math
import warnings
from fractions import Fraction

import numpy as np

from .core import RoundInput
from .errors import ConfigurationError
from .validation import as_node_array, check_choice, check_fraction

# Fixed reference positions used when a localization scenario requests
# anchor nodes; the first five nodes are pinned to these points.
ANCHOR_POSITIONS = (
    (0.25, 0.25),
    (0.75, 0.25),
    (0.25, 0.75),
    (0.50, 0.50),
    (0.75, 0.75),
)


class Topology:
    """Undirected coupling graph over ``n_nodes`` nodes.

    Parameters
    ----------
    n_nodes : int
        Number of nodes, labeled ``0 .. n_nodes - 1``.
    edges : iterable of (int, int)
        Undirected edges; duplicates are merged, self loops are rejected.
    """

    def __init__(self, n_nodes, edges):
        n = int(n_nodes)
        if n < 1:
            raise ConfigurationError("n_nodes must be at least 1")
        norm = set()
        for k, j in edges:
            k, j = int(k), int(j)
            if k == j:
                raise ConfigurationError(f"self loop on node {k}")
            if not (0 <= k < n and 0 <= j < n):
                raise ConfigurationError(f"edge ({k}, {j}) references an unknown node")
            norm.add((min(k, j), max(k, j)))
        self.n_nodes = n
        self.edges = tuple(sorted(norm))
        nbrs = [set() for _ in range(n)]
        for k, j in self.edges:
            nbrs[k].add(j)
            nbrs[j].add(k)
        self._open = tuple(tuple(sorted(s)) for s in nbrs)
        self._closed = tuple(tuple(sorted(s | {k})) for k, s in enumerate(nbrs))

    def neighbors(self, k):
        """Open neighborhood of ``k`` (excluding ``k``), ascending."""
        return self._open[k]

    def closed_neighborhood(self, k):
        """Closed neighborhood of ``k`` (including ``k``), ascending."""
        return self._closed[k]

    def degree(self, k):
        return len(self._open[k])

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def connected(self):
        seen = {0}
        frontier = [0]
        while frontier:
            nxt = []
            for k in frontier:
                for j in self._open[k]:
                    if j not in seen:
                        seen.add(j)
                        nxt.append(j)
            frontier = nxt
        return len(seen) == self.n_nodes

    def __repr__(self):
        return f"Topology(n_nodes={self.n_nodes}, n_edges={self.n_edges})"


def ring_topology(n_nodes):
    """Cycle over ``n_nodes`` nodes (a single edge for two, empty for one)."""
    if n_nodes < 3:
        edges = [(0, 1)] if n_nodes == 2 else []
    else:
        edges = [(k, (k + 1) % n_nodes) for k in range(n_nodes)]
    return Topology(n_nodes, edges)


def generate_geometric_graph(n_nodes, radius, *, seed=None, anchors=False):
    """Draw a random geometric graph on the unit square.

    Parameters
    ----------
    n_nodes : int
        Number of nodes.
    radius : float
        Communication radius; nodes at distance <= radius are linked.
    seed : int, SeedSequence, or Generator, optional
        Source of randomness for the positions.
    anchors : bool
        When true, pin the first five nodes to :data:`ANCHOR_POSITIONS`.

    Returns
    -------
    topology : Topology
    positions : ndarray of shape (n_nodes, 2)
    anchor_ids : tuple of int
        Indices of the pinned nodes (empty when ``anchors`` is false).

    Warns when the resulting graph is disconnected; callers may retry with a
    different seed or a larger radius.
    """
    n = int(n_nodes)
    r = float(radius)
    if n < 1:
        raise ConfigurationError("n_nodes must be at least 1")
    if r <= 0:
        raise ConfigurationError("radius must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    positions = rng.uniform(0.0, 1.0, size=(n, 2))
    anchor_ids = ()
    if anchors:
        if n < len(ANCHOR_POSITIONS):
            raise ConfigurationError(
                f"anchor placement needs at least {len(ANCHOR_POSITIONS)} nodes, got {n}")
        positions[: len(ANCHOR_POSITIONS)] = np.asarray(ANCHOR_POSITIONS)
        anchor_ids = tuple(range(len(ANCHOR_POSITIONS)))

    diff = positions[:, None, :] - positions[None, :, :]
    within = (diff * diff).sum(axis=2) <= r * r
    edges = [(k, j) for k in range(n) for j in range(k + 1, n) if within[k, j]]
    topo = Topology(n, edges)
    if not topo.connected:
        warnings.warn(
            f"geometric graph with {n} nodes and radius {r} is disconnected",
            stacklevel=2,
        )
    return topo, positions, anchor_ids


# ----------------------------------------------------------------------
# schedules

class _ScheduleBase:
    """Common state for schedule generators.

    ``message_mode`` controls whether sleeping nodes still have their copy
    messages delivered.  'sleep-gated' models a radio that is fully off while
    asleep, so silent nodes stall their neighbors' consensus updates.
    'always-on' models cheap copy broadcasts that are never skipped, so the
    consensus update frequency of a node equals its wake frequency.
    """

    def __init__(self, n_nodes, update_freq, max_staleness, seed=None,
                 message_mode="sleep-gated"):
        self.n_nodes = int(n_nodes)
        self.update_freq = as_node_array("update_freq", update_freq, self.n_nodes)
        for f in self.update_freq:
            check_fraction("update_freq", f)
        self.max_staleness = as_node_array("max_staleness", max_staleness,
                                           self.n_nodes, dtype=int)
        if (self.max_staleness < 0).any():
            raise ConfigurationError("max_staleness must be nonnegative")
        self.message_mode = check_choice("message_mode", message_mode,
                                         ("sleep-gated", "always-on"))
        self._rng = np.random.default_rng(seed)
        self._everyone = frozenset(range(self.n_nodes))

    def _awake(self, t):
        raise NotImplementedError

    def draw(self, t):
        """Round input for iteration ``t`` (1-based)."""
        awake = self._awake(t)
        lo = np.maximum(t + 1 - self.max_staleness, 1)
        picks = self._rng.integers(lo, t + 2)
        awake_ids = frozenset(np.flatnonzero(awake).tolist())
        send_xy = awake_ids if self.message_mode == "sleep-gated" else self._everyone
        return RoundInput(
            iteration=t,
            awake_set=awake_ids,
            staleness_pick={k: int(picks[k]) for k in range(self.n_nodes)},
            send_xy=send_xy,
            send_z=awake_ids,
        )


class SynchronousSchedule(_ScheduleBase):
    """Everyone awake every round with fresh gradients."""

    def __init__(self, n_nodes):
        super().__init__(n_nodes, 1.0, 0)

    def _awake(self, t):
        return np.ones(self.n_nodes, dtype=bool)

    def draw(self, t):
        return RoundInput.full(t, self.n_nodes)


class BernoulliSchedule(_ScheduleBase):
    """Each node is awake independently with its own probability each round."""

    def _awake(self, t):
        return self._rng.random(self.n_nodes) < self.update_freq


class CyclicSchedule(_ScheduleBase):
    """Deterministic wake pattern hitting each frequency exactly.

    Node ``k`` with frequency ``p/q`` (in lowest terms) is awake on the
    rounds where ``ceil(t * p / q)`` increases, which spreads its wake slots
    evenly and yields exactly ``f * T`` wake rounds in any window of length
    ``T`` aligned to a multiple of ``q``.  Gradient picks remain random.
    """

    def __init__(self, n_nodes, update_freq, max_staleness, seed=None,
                 message_mode="sleep-gated"):
        super().__init__(n_nodes, update_freq, max_staleness, seed, message_mode)
        self._fractions = [Fraction(float(f)).limit_denominator(1000)
                           for f in self.update_freq]
        self.period = math.lcm(*(frac.denominator for frac in self._fractions))

    def _awake(self, t):
        out = np.empty(self.n_nodes, dtype=bool)
        for k, frac in enumerate(self._fractions):
            p, q = frac.numerator, frac.denominator
            out[k] = -((-t * p) // q) > -((-(t - 1) * p) // q)
        return out


def make_schedule(kind, n_nodes, *, update_freq=1.0, max_staleness=0, seed=None,
                  message_mode="sleep-gated"):
    """Build a schedule by name: 'synchronous', 'bernoulli', or 'cyclic'."""
    check_choice("schedule kind", kind, ("synchronous", "bernoulli", "cyclic"))
    if kind == "synchronous":
        return SynchronousSchedule(n_nodes)
    cls = BernoulliSchedule if kind == "bernoulli" else CyclicSchedule
    return cls(n_nodes, update_freq, max_staleness, seed, message_mode)
