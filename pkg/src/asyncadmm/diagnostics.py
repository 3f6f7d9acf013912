"""Measurement and verification helpers.

Everything here is read-only with respect to solver state: merit function
evaluation, step-size feasibility checks, stationarity residuals, error
metrics, and the trace record written by the experiment runner.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .validation import as_node_array, check_choice, check_fraction, check_nonneg_int, check_positive

TRACE_HEADER = "iter,lagrangian,psi,phi,r_grad,r_subgrad,r_feas,nrmse"


def finite_difference_gradient(fun, x, step=1e-6):
    """Centered finite-difference gradient of ``fun`` at ``x``."""
    x = np.array(x, dtype=float)
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        hi = fun(x)
        x[idx] = orig - step
        lo = fun(x)
        x[idx] = orig
        out[idx] = (hi - lo) / (2.0 * step)
    return out


def augmented_lagrangian(problem, z, copies, duals, rho, grouping="by_owner"):
    """Merit function of the full solver state.

    Sums each node's smooth block at its copies, the penalties at the
    consensus blocks, and the weighted disagreement terms between copies and
    consensus blocks.

    Parameters
    ----------
    problem : Problem
    z : ndarray of shape (K, d)
    copies, duals : sequences of ndarray
        Per node, stacked rows in closed-neighborhood order.
    rho : float or sequence of float
    grouping : {'by_owner', 'by_variable'}
        Summation order.  ``by_owner`` accumulates node by node;
        ``by_variable`` regroups the disagreement terms around each consensus
        block.  Both orders compute the same quantity and serve as a
        cross-check on each other.
    """
    check_choice("grouping", grouping, ("by_owner", "by_variable"))
    K = problem.n_nodes
    z = np.asarray(z, dtype=float)
    rho = as_node_array("rho", rho, K)

    def coupling(k, pos, j):
        diff = copies[k][pos] - z[j]
        return float(duals[k][pos] @ diff) + 0.5 * rho[k] * float(diff @ diff)

    total = 0.0
    if grouping == "by_owner":
        for k in range(K):
            total += problem.eval_g(k, copies[k])
            for pos, j in enumerate(problem.closed_neighborhood(k)):
                total += coupling(k, pos, j)
        for j in range(K):
            total += problem.eval_h(j, z[j])
    else:
        for k in range(K):
            total += problem.eval_g(k, copies[k])
        for j in range(K):
            total += problem.eval_h(j, z[j])
            for k in problem.closed_neighborhood(j):
                pos = problem.closed_neighborhood(k).index(j)
                total += coupling(k, pos, j)
    return total


def alpha_beta(rho, lipschitz, update_freq, max_staleness, neighborhood_size,
               variant="proximal"):
    """Descent margin coefficients for one node's parameter choice.

    Returns the pair ``(alpha, beta)``; the asynchronous scheme is guaranteed
    to make progress on its merit function when both are positive.  ``alpha``
    weighs the consensus-block movement and ``beta`` the copy movement.
    """
    check_choice("variant", variant, ("proximal", "majorized"))
    rho = check_positive("rho", rho)
    L = check_positive("lipschitz", lipschitz, allow_zero=True)
    f = check_fraction("update_freq", update_freq)
    T = check_nonneg_int("max_staleness", max_staleness)
    n = int(neighborhood_size)
    if n < 1:
        raise ValueError("neighborhood_size must be at least 1")
    if variant == "proximal":
        alpha = rho * f / 2 - (7 * L / (2 * rho ** 2) + 1 / rho) * n * L ** 2 * (T + 1) ** 2 \
            - n * L * T ** 2 / 2
        beta = rho - 7 * L
    else:
        alpha = n * (rho * f / 2 - (8 * L / rho ** 2 + 1 / rho) * L ** 2 * (T + 1) ** 2
                     - L * T ** 2 / 2)
        beta = (rho - 9 * L) / 2 - 8 * L ** 3 / rho ** 2
    return alpha, beta


def min_feasible_rho(lipschitz, update_freq, max_staleness, neighborhood_size,
                     variant="proximal", rel_tol=1e-6):
    """Smallest penalty parameter with positive descent margins.

    Both margins increase with the penalty parameter, so the feasible set is
    an interval; a doubling search brackets its left edge and bisection
    shrinks the bracket to relative width ``rel_tol``.  The returned value is
    the feasible end of the bracket.
    """
    L = check_positive("lipschitz", lipschitz, allow_zero=True)
    floor = 1e-9
    if L == 0.0:
        return floor

    def feasible(rho):
        a, b = alpha_beta(rho, L, update_freq, max_staleness,
                          neighborhood_size, variant)
        return a > 0 and b > 0

    hi = max(L, floor)
    for _ in range(200):
        if feasible(hi):
            break
        hi *= 2.0
    else:
        raise RuntimeError("no feasible penalty parameter found")
    lo = hi / 2.0 if hi > max(L, floor) else 0.0
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class ParamCheck:
    """Feasibility report for one node's parameter choice."""

    node: int
    rho: float
    lipschitz: float
    neighborhood_size: int
    alpha: float
    beta: float
    feasible: bool
    min_rho: float


def check_parameters(problem, rho, *, update_freq=1.0, max_staleness=0,
                     variant="proximal"):
    """Per-node descent-margin report for a parameter choice."""
    K = problem.n_nodes
    rho = as_node_array("rho", rho, K)
    out = []
    for k in range(K):
        L = problem.lipschitz(k)
        n = len(problem.closed_neighborhood(k))
        a, b = alpha_beta(rho[k], L, update_freq, max_staleness, n, variant)
        mr = min_feasible_rho(L, update_freq, max_staleness, n, variant)
        out.append(ParamCheck(node=k, rho=float(rho[k]), lipschitz=float(L),
                              neighborhood_size=n, alpha=a, beta=b,
                              feasible=a > 0 and b > 0, min_rho=mr))
    return out


@dataclass
class StationarityResiduals:
    """First-order optimality residuals of a solver state.

    ``r_grad`` measures how far each node's duals are from canceling its
    block gradient, ``r_subgrad`` how far the incoming dual sums are from the
    penalty subdifferentials at the consensus blocks (``None`` when a penalty
    and constraint combination has no supported distance), and ``r_feas`` the
    largest copy-consensus disagreement.
    """

    r_grad: float
    r_subgrad: Optional[float]
    r_feas: float


def stationarity_residuals(problem, z, copies, duals):
    """Compute :class:`StationarityResiduals` for a full state."""
    K = problem.n_nodes
    z = np.asarray(z, dtype=float)
    r_grad = 0.0
    r_feas = 0.0
    for k in range(K):
        grad = problem.grad_g(k, copies[k])
        r_grad = max(r_grad, float(np.linalg.norm(grad + duals[k])))
        nbrs = problem.closed_neighborhood(k)
        r_feas = max(r_feas, float(np.max(
            np.linalg.norm(copies[k] - z[list(nbrs)], axis=1))))

    r_sub = 0.0
    for k in range(K):
        incoming = np.zeros(problem.block_dim)
        for j in problem.closed_neighborhood(k):
            pos = problem.closed_neighborhood(j).index(k)
            incoming = incoming + duals[j][pos]
        dist = problem.penalty_subgradient_distance(k, z[k], incoming)
        if dist is None:
            r_sub = None
            break
        r_sub = max(r_sub, float(dist))
    return StationarityResiduals(r_grad=r_grad, r_subgrad=r_sub, r_feas=r_feas)


def nrmse(estimates, truths):
    """Normalized root mean squared error over one or more runs.

    ``estimates`` and ``truths`` are arrays of matching shape, or sequences
    of them; the result is the root of the summed squared errors over the
    summed squared truth norms.
    """
    if isinstance(estimates, np.ndarray) and estimates.ndim == 2:
        estimates, truths = [estimates], [truths]
    num = 0.0
    den = 0.0
    for est, tru in zip(estimates, truths, strict=True):
        est = np.asarray(est, dtype=float)
        tru = np.asarray(tru, dtype=float)
        num += float(((est - tru) ** 2).sum())
        den += float((tru ** 2).sum())
    if den == 0.0:
        raise ValueError("truth norms are all zero")
    return math.sqrt(num / den)


def lagrangian_lower_bound(problem, best_objective, diameters=None):
    """Valid floor for the merit function along any trajectory.

    The merit function can undershoot the best attainable objective by at
    most a curvature term over the constraint-set diameters; states below
    the returned value would contradict the descent analysis.

    Parameters
    ----------
    problem : Problem
    best_objective : float
        Any lower bound on the attainable objective (for example the best
        observed value).
    diameters : float or sequence of float, optional
        Per-block diameter to use instead of the constraint sets' own; pass
        a scalar to bound every block by an enclosing set, e.g. the ambient
        box when copies may leave pinned blocks.
    """
    K = problem.n_nodes
    if diameters is None:
        diams = [problem.domain(j).diameter() for j in range(K)]
    else:
        diams = np.broadcast_to(np.asarray(diameters, dtype=float), (K,))
    slack = 0.0
    for k in range(K):
        L = problem.lipschitz(k)
        for j in problem.closed_neighborhood(k):
            d = diams[j]
            if math.isinf(d):
                return -math.inf
            slack += 0.5 * L * d * d
    return best_objective - slack


@dataclass
class TraceRecord:
    """One row of a solver trace; ``None`` fields print as ``NA``."""

    iteration: int
    lagrangian: Optional[float] = None
    psi: Optional[float] = None
    phi: Optional[float] = None
    r_grad: Optional[float] = None
    r_subgrad: Optional[float] = None
    r_feas: Optional[float] = None
    nrmse: Optional[float] = None

    def csv_row(self):
        vals = [self.lagrangian, self.psi, self.phi, self.r_grad,
                self.r_subgrad, self.r_feas, self.nrmse]
        cells = [str(self.iteration)]
        cells += ["NA" if v is None else repr(float(v)) for v in vals]
        return ",".join(cells)


def write_trace(path, records):
    """Write trace records as CSV with a fixed header."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(TRACE_HEADER + "\n")
        for rec in records:
            fh.write(rec.csv_row() + "\n")
