"""Problem definitions consumed by the round engine.

A problem binds a coupling topology to per-node objective blocks.  Node ``k``
owns a smooth block ``g_k`` that depends on the copies of its closed
neighborhood, an optional nonsmooth penalty ``h_k`` on its consensus block,
and a constraint set for that block.  Two concrete problems ship here: a
separable convex quadratic with a closed-form optimum, used as a correctness
oracle, and range-based cooperative localization with a smoothed stress
objective.
"""

import math

import numpy as np

from .errors import ConfigurationError, SurrogateSolveError
from .validation import check_positive

# ----------------------------------------------------------------------
# constraint sets


class RealSpace:
    """Unconstrained block of a given dimension."""

    def __init__(self, dim):
        self.dim = int(dim)

    def project(self, v):
        return np.asarray(v, dtype=float)

    def diameter(self):
        return math.inf

    def normal_cone_distance(self, z, s):
        return float(np.linalg.norm(s))

    def sample(self, rng):
        # Unbounded set: fall back to the unit cube for initial draws.
        return rng.uniform(0.0, 1.0, self.dim)


class Box:
    """Axis-aligned box ``[lo, hi]`` in each coordinate."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if self.lo.shape != self.hi.shape or (self.lo > self.hi).any():
            raise ConfigurationError("box bounds are inconsistent")
        self.dim = self.lo.size

    def project(self, v):
        return np.clip(v, self.lo, self.hi)

    def diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    def normal_cone_distance(self, z, s):
        z = np.asarray(z, dtype=float)
        s = np.asarray(s, dtype=float)
        resid = np.where(np.isclose(z, self.lo, rtol=0.0, atol=1e-12), np.maximum(s, 0.0),
                         np.where(np.isclose(z, self.hi, rtol=0.0, atol=1e-12),
                                  np.minimum(s, 0.0) * -1.0, np.abs(s)))
        return float(np.linalg.norm(resid))

    def sample(self, rng):
        return rng.uniform(self.lo, self.hi)


class Point:
    """Singleton set pinning a block to a fixed value."""

    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)
        self.dim = self.value.size

    def project(self, v):
        return self.value.copy()

    def diameter(self):
        return 0.0

    def normal_cone_distance(self, z, s):
        # The normal cone of a singleton is the whole space.
        return 0.0

    def sample(self, rng):
        return self.value.copy()


# ----------------------------------------------------------------------
# nonsmooth penalties


class ZeroPenalty:
    """No penalty; the proximal map reduces to a projection."""

    def value(self, z):
        return 0.0

    def prox(self, v, weight, domain):
        return domain.project(v)

    def subgradient_distance(self, z, s, domain):
        return domain.normal_cone_distance(z, s)


class NormToPoint:
    """Penalty ``r * ||z - center||``, e.g. a prior pulling toward a beacon."""

    def __init__(self, radius_weight, center):
        self.r = check_positive("radius_weight", radius_weight)
        self.center = np.asarray(center, dtype=float)

    def value(self, z):
        return self.r * float(np.linalg.norm(np.asarray(z) - self.center))

    def prox(self, v, weight, domain):
        if not isinstance(domain, RealSpace):
            raise ConfigurationError("NormToPoint is only supported on unconstrained blocks")
        v = np.asarray(v, dtype=float)
        offset = v - self.center
        norm = float(np.linalg.norm(offset))
        scale = max(0.0, 1.0 - self.r / (weight * norm)) if norm > 0 else 0.0
        return self.center + scale * offset

    def subgradient_distance(self, z, s, domain):
        if not isinstance(domain, RealSpace):
            return None
        z = np.asarray(z, dtype=float)
        s = np.asarray(s, dtype=float)
        offset = z - self.center
        norm = float(np.linalg.norm(offset))
        if norm > 0:
            return float(np.linalg.norm(s - self.r * offset / norm))
        return max(0.0, float(np.linalg.norm(s)) - self.r)


# ----------------------------------------------------------------------
# problem base


class Problem:
    """Base class wiring a topology to per-node blocks.

    Subclasses implement ``eval_g``, ``grad_g``, and ``lipschitz``; the copy
    arguments are stacked in ascending closed-neighborhood order, one row per
    member, so node ``k``'s own row sits at ``self_index(k)``.
    """

    def __init__(self, topology, block_dim):
        self.topology = topology
        self.block_dim = int(block_dim)
        self._closed = [tuple(topology.closed_neighborhood(k))
                        for k in range(topology.n_nodes)]
        self._self_idx = [nbrs.index(k) for k, nbrs in enumerate(self._closed)]

    @property
    def n_nodes(self):
        return self.topology.n_nodes

    def closed_neighborhood(self, k):
        return self._closed[k]

    def self_index(self, k):
        return self._self_idx[k]

    # smooth blocks -----------------------------------------------------
    def eval_g(self, k, x):
        raise NotImplementedError

    def grad_g(self, k, x):
        raise NotImplementedError

    def lipschitz(self, k):
        raise NotImplementedError

    # nonsmooth blocks ---------------------------------------------------
    def penalty(self, k):
        return ZeroPenalty()

    def domain(self, k):
        return RealSpace(self.block_dim)

    def eval_h(self, k, z):
        return self.penalty(k).value(z)

    def prox_h(self, k, v, weight):
        """Resolve the penalty and constraint of block ``k`` at ``v``."""
        return self.penalty(k).prox(np.asarray(v, dtype=float), float(weight), self.domain(k))

    def penalty_subgradient_distance(self, k, z, s):
        """Distance from ``s`` to the subdifferential of ``h_k`` plus the
        normal cone at ``z``; ``None`` when the combination is unsupported."""
        return self.penalty(k).subgradient_distance(z, s, self.domain(k))

    # misc ----------------------------------------------------------------
    def init_z(self, k, rng):
        return self.domain(k).sample(rng)

    @property
    def has_surrogate(self):
        return False

    def build_surrogate(self, k, center):
        raise ConfigurationError(f"{type(self).__name__} does not define a surrogate")


# ----------------------------------------------------------------------
# separable quadratic oracle


class QuadraticProblem(Problem):
    """Separable quadratic ``g_k(x) = 0.5 * sum_j ||x_kj - a_kj||^2``.

    Unconstrained and convex with unit curvature, so the network optimum has
    the closed form ``z_j = mean of a_kj over the owners k`` and every solver
    path can be checked against it.

    Parameters
    ----------
    topology : Topology
    targets : dict or sequence
        Either ``{(k, j): vector}`` for every copy pair, or a list whose
        ``k``-th entry stacks the targets of node ``k``'s closed neighborhood.
    block_dim : int
    """

    def __init__(self, topology, targets, block_dim=1):
        super().__init__(topology, block_dim)
        self.targets = []
        for k in range(self.n_nodes):
            nbrs = self._closed[k]
            if isinstance(targets, dict):
                rows = [np.atleast_1d(np.asarray(targets[(k, j)], dtype=float)) for j in nbrs]
                arr = np.stack(rows)
            else:
                arr = np.asarray(targets[k], dtype=float).reshape(len(nbrs), block_dim)
            if arr.shape != (len(nbrs), block_dim):
                raise ConfigurationError(f"targets for node {k} have shape {arr.shape}")
            self.targets.append(arr)

    def eval_g(self, k, x):
        diff = np.asarray(x, dtype=float) - self.targets[k]
        return 0.5 * float((diff * diff).sum())

    def grad_g(self, k, x):
        return np.asarray(x, dtype=float) - self.targets[k]

    def lipschitz(self, k):
        return 1.0

    def centralized_optimum(self):
        """Per-block average of the targets, the unique global minimizer."""
        out = np.zeros((self.n_nodes, self.block_dim))
        for j in range(self.n_nodes):
            rows = [self.targets[k][self._closed[k].index(j)]
                    for k in self._closed[j]]
            out[j] = np.mean(rows, axis=0)
        return out

    @property
    def has_surrogate(self):
        return True

    def build_surrogate(self, k, center):
        # g_k is already convex; the tightest surrogate is g_k itself.
        return _QuadraticSurrogate(self.targets[k])


class _QuadraticSurrogate:
    def __init__(self, targets):
        self._a = targets

    def value(self, x):
        diff = np.asarray(x, dtype=float) - self._a
        return 0.5 * float((diff * diff).sum())

    def grad(self, x):
        return np.asarray(x, dtype=float) - self._a

    def minimize(self, duals, rho, z_anchor):
        return (self._a + rho * z_anchor - duals) / (1.0 + rho)


def random_quadratic(topology, block_dim=1, *, seed=None, low=-1.0, high=1.0):
    """Quadratic instance with targets drawn uniformly from ``[low, high]``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    targets = [rng.uniform(low, high, size=(len(topology.closed_neighborhood(k)), block_dim))
               for k in range(topology.n_nodes)]
    return QuadraticProblem(topology, targets, block_dim)


# ----------------------------------------------------------------------
# cooperative localization


def smoothed_distance(p, q, epsilon):
    """Differentiable surrogate of the Euclidean distance.

    Computes ``sqrt(||p - q||^2 + epsilon)``, which is smooth everywhere and
    within ``sqrt(epsilon)`` of the true distance.  Supports batched inputs
    along leading axes.
    """
    diff = np.asarray(p, dtype=float) - np.asarray(q, dtype=float)
    return np.sqrt((diff * diff).sum(axis=-1) + epsilon)


class LocalizationProblem(Problem):
    """Range-based localization over the unit square.

    Each node owns its 2-D position.  The smooth block of node ``k`` is the
    weighted squared mismatch between measured ranges and smoothed distances
    to its graph neighbors.  Anchor blocks are pinned to known positions;
    free blocks are constrained to the unit square.

    Parameters
    ----------
    topology : Topology
    measurements : dict
        ``{(k, j): range}`` for every edge, either orientation.
    anchor_ids : sequence of int
        Nodes with known positions.
    anchor_positions : ndarray of shape (len(anchor_ids), 2)
    epsilon : float
        Smoothing constant of the distance surrogate.
    weight : float
        Common measurement weight.
    lipschitz : float, optional
        Practical curvature estimate; when omitted the conservative bound
        ``|closed neighborhood| * 8 * (2 / sqrt(epsilon) + 1)`` is used.
    true_positions : ndarray of shape (K, 2), optional
        Ground truth, kept for error reporting only.
    """

    def __init__(self, topology, measurements, anchor_ids=(), anchor_positions=None,
                 *, epsilon=1e-3, weight=1.0, lipschitz=None, true_positions=None):
        super().__init__(topology, block_dim=2)
        self.epsilon = check_positive("epsilon", epsilon)
        self.weight = check_positive("weight", weight)
        self._lipschitz = None if lipschitz is None else check_positive("lipschitz", lipschitz)

        self.anchor_ids = tuple(int(a) for a in anchor_ids)
        if len(set(self.anchor_ids)) != len(self.anchor_ids):
            raise ConfigurationError("duplicate anchor ids")
        if self.anchor_ids:
            pos = np.asarray(anchor_positions, dtype=float)
            if pos.shape != (len(self.anchor_ids), 2):
                raise ConfigurationError("anchor_positions must align with anchor_ids")
            self.anchor_positions = pos
        else:
            self.anchor_positions = np.zeros((0, 2))
        self._anchor_map = dict(zip(self.anchor_ids, self.anchor_positions))

        self.measurements = {}
        for (k, j), val in measurements.items():
            key = (min(k, j), max(k, j))
            val = float(val)
            if val < 0:
                raise ConfigurationError(f"negative range for edge {key}")
            prev = self.measurements.get(key)
            if prev is not None and prev != val:
                raise ConfigurationError(f"conflicting ranges for edge {key}")
            self.measurements[key] = val
        edge_set = set(topology.edges)
        stray = [e for e in self.measurements if e not in edge_set]
        if stray:
            raise ConfigurationError(f"range measurements for non-edges {stray[:5]}")
        missing = [e for e in topology.edges if e not in self.measurements]
        if missing:
            raise ConfigurationError(f"missing range measurements for edges {missing[:5]}")

        self._deltas = []
        for k in range(self.n_nodes):
            nbrs = topology.neighbors(k)
            self._deltas.append(np.array(
                [self.measurements[(min(k, j), max(k, j))] for j in nbrs]))

        self.true_positions = None
        if true_positions is not None:
            tp = np.asarray(true_positions, dtype=float)
            if tp.shape != (self.n_nodes, 2):
                raise ConfigurationError("true_positions must have shape (K, 2)")
            self.true_positions = tp

        self._domains = []
        for k in range(self.n_nodes):
            if k in self._anchor_map:
                self._domains.append(Point(self._anchor_map[k]))
            else:
                self._domains.append(Box(np.zeros(2), np.ones(2)))

    @classmethod
    def from_truth(cls, topology, positions, anchor_ids=(), *, epsilon=1e-3,
                   noise_sigma=0.0, weight=1.0, lipschitz=None, seed=None):
        """Build an instance by measuring the edges of ``topology``.

        Ranges are true Euclidean distances plus centered Gaussian noise of
        standard deviation ``noise_sigma``, clipped at zero.
        """
        positions = np.asarray(positions, dtype=float)
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        sigma = check_positive("noise_sigma", noise_sigma, allow_zero=True)
        measurements = {}
        for k, j in topology.edges:
            true = float(np.linalg.norm(positions[k] - positions[j]))
            noisy = true + sigma * float(rng.standard_normal()) if sigma > 0 else true
            measurements[(k, j)] = max(0.0, noisy)
        anchor_ids = tuple(int(a) for a in anchor_ids)
        return cls(topology, measurements, anchor_ids, positions[list(anchor_ids)],
                   epsilon=epsilon, weight=weight, lipschitz=lipschitz,
                   true_positions=positions)

    # ------------------------------------------------------------------

    def _split(self, k, x):
        x = np.asarray(x, dtype=float)
        i = self._self_idx[k]
        own = x[i]
        others = np.delete(x, i, axis=0)
        return own, others

    def eval_g(self, k, x):
        if not self.topology.degree(k):
            return 0.0
        own, others = self._split(k, x)
        d = np.sqrt(((own - others) ** 2).sum(axis=1) + self.epsilon)
        r = self._deltas[k] - d
        return self.weight * float((r * r).sum())

    def grad_g(self, k, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        if not self.topology.degree(k):
            return out
        i = self._self_idx[k]
        own, others = self._split(k, x)
        diffs = own - others
        d = np.sqrt((diffs * diffs).sum(axis=1) + self.epsilon)
        coeff = 2.0 * self.weight * (self._deltas[k] - d) / d
        rows = coeff[:, None] * diffs
        mask = np.arange(len(x)) != i
        out[mask] = rows
        out[i] = -rows.sum(axis=0)
        return out

    def lipschitz(self, k):
        if self._lipschitz is not None:
            return self._lipschitz
        bound = 8.0 * (2.0 / math.sqrt(self.epsilon) + 1.0)
        return len(self.topology.neighbors(k)) * self.weight * bound

    def domain(self, k):
        return self._domains[k]

    def prox_all(self, candidates, weights):
        """Vectorized projection of all consensus blocks."""
        out = np.clip(candidates, 0.0, 1.0)
        if self.anchor_ids:
            out[list(self.anchor_ids)] = self.anchor_positions
        return out

    def objective(self, positions):
        """Total stress of a full position estimate (K, 2)."""
        positions = np.asarray(positions, dtype=float)
        total = 0.0
        for k in range(self.n_nodes):
            total += self.eval_g(k, positions[list(self._closed[k])])
        return total

    @property
    def has_surrogate(self):
        return True

    def build_surrogate(self, k, center):
        return LocalizationSurrogate(self, k, center)

    # ------------------------------------------------------------------
    # serialization

    def save(self, path):
        save_instance(path, self)


class LocalizationSurrogate:
    """Convex majorizer of one localization block around a reference point.

    The stress splits into a convex part (squared smoothed distances) and a
    concave part (the cross terms); linearizing the concave part at the
    reference yields a strongly convex quadratic that touches the block at
    the reference with matching gradient and dominates it elsewhere.
    """

    def __init__(self, problem, k, center):
        self._prob = problem
        self._k = k
        self._i = problem.self_index(k)
        self._center = np.asarray(center, dtype=float)
        self._w = problem.weight
        self._delta = problem._deltas[k]
        own = self._center[self._i]
        others = np.delete(self._center, self._i, axis=0)
        diffs = own - others
        self._d0 = np.sqrt((diffs * diffs).sum(axis=1) + problem.epsilon)
        # Gradient of each smoothed distance at the reference, own-block part.
        self._dir0 = diffs / self._d0[:, None]

    def _parts(self, x):
        x = np.asarray(x, dtype=float)
        own = x[self._i]
        others = np.delete(x, self._i, axis=0)
        return own, others

    def value(self, x):
        own, others = self._parts(x)
        c_own = self._center[self._i]
        c_others = np.delete(self._center, self._i, axis=0)
        sq = ((own - others) ** 2).sum(axis=1) + self._prob.epsilon
        lin = self._d0 + ((self._dir0 * ((own - c_own) - (others - c_others))).sum(axis=1))
        w, delta = self._w, self._delta
        return float((w * (delta ** 2 + sq) - 2.0 * w * delta * lin).sum())

    def grad(self, x):
        own, others = self._parts(x)
        out = np.zeros_like(np.asarray(x, dtype=float))
        w, delta = self._w, self._delta
        rows = 2.0 * w * (others - own) + 2.0 * w * delta[:, None] * self._dir0
        mask = np.arange(len(x)) != self._i
        out[mask] = rows
        out[self._i] = (2.0 * w * (own - others) - 2.0 * w * delta[:, None] * self._dir0).sum(axis=0)
        return out

    def minimize(self, duals, rho, z_anchor):
        """Exact minimizer of the surrogate plus the dual and penalty terms.

        Solves the stacked first-order system, one small symmetric positive
        definite solve per call.
        """
        m = len(self._center)
        w, delta = self._w, self._delta
        M = np.zeros((m, m))
        idx = [j for j in range(m) if j != self._i]
        M[self._i, self._i] = rho + 2.0 * w * len(idx)
        for row, j in enumerate(idx):
            M[j, j] = rho + 2.0 * w
            M[j, self._i] = -2.0 * w
            M[self._i, j] = -2.0 * w
        B = rho * np.asarray(z_anchor, dtype=float) - np.asarray(duals, dtype=float)
        lin_self = 2.0 * (w * delta[:, None] * self._dir0).sum(axis=0)
        B[self._i] += lin_self
        for row, j in enumerate(idx):
            B[j] -= 2.0 * w * delta[row] * self._dir0[row]
        try:
            np.linalg.cholesky(M)
            return np.linalg.solve(M, B)
        except np.linalg.LinAlgError as exc:
            raise SurrogateSolveError(
                f"surrogate system of node {self._k} is not positive definite") from exc


# ----------------------------------------------------------------------
# instance files


def save_instance(path, problem):
    """Write a localization instance as plain text.

    The format is line based: ``key = value`` headers, then one ``node id x
    y anchor`` line per node (true position and anchor flag), then one
    ``edge k j range`` line per measured pair.
    """
    if problem.true_positions is None:
        raise ConfigurationError("cannot serialize an instance without node positions")
    lines = [
        "format = localization-instance",
        f"n_nodes = {problem.n_nodes}",
        f"epsilon = {float(problem.epsilon)!r}",
        f"weight = {float(problem.weight)!r}",
    ]
    anchors = set(problem.anchor_ids)
    for k in range(problem.n_nodes):
        x, y = problem.true_positions[k]
        lines.append(f"node {k} {float(x)!r} {float(y)!r} {1 if k in anchors else 0}")
    for (k, j), measured in sorted(problem.measurements.items()):
        lines.append(f"edge {k} {j} {float(measured)!r}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_instance(path):
    """Read a localization instance written by :func:`save_instance`."""
    from .network import Topology

    headers = {}
    nodes = {}
    anchors = []
    edges = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "node":
                    k = int(parts[1])
                    nodes[k] = (float(parts[2]), float(parts[3]))
                    if int(parts[4]):
                        anchors.append(k)
                elif parts[0] == "edge":
                    edges[(int(parts[1]), int(parts[2]))] = float(parts[3])
                elif len(parts) >= 3 and parts[1] == "=":
                    headers[parts[0]] = parts[2]
                else:
                    raise ValueError("unrecognized line")
            except (IndexError, ValueError) as exc:
                raise ConfigurationError(f"{path}:{lineno}: malformed line {line!r}") from exc
    if headers.get("format") != "localization-instance":
        raise ConfigurationError(f"{path}: missing or unknown format header")
    n = int(headers["n_nodes"])
    if sorted(nodes) != list(range(n)):
        raise ConfigurationError(f"{path}: node lines do not cover 0..{n - 1}")
    positions = np.array([nodes[k] for k in range(n)])
    topo = Topology(n, list(edges))
    anchors = sorted(anchors)
    return LocalizationProblem(
        topo, edges, anchors, positions[anchors],
        epsilon=float(headers.get("epsilon", 1e-3)),
        weight=float(headers.get("weight", 1.0)),
        true_positions=positions,
    )
