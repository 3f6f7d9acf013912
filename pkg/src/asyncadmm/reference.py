"""Plain synchronous solver used as a correctness oracle.

This module re-implements the round logic with per-node dictionaries and
explicit loops, no shared arrays and no vectorized shortcuts.  It is the
ground truth the optimized engine is compared against: with every node awake,
fresh gradients, and common step sizes, both must produce identical floats.
"""

import numpy as np


def synchronous_reference_run(problem, z0, rho, n_rounds):
    """Run ``n_rounds`` of fully synchronous updates.

    Parameters
    ----------
    problem : Problem
    z0 : ndarray of shape (K, d)
        Common starting consensus blocks.
    rho : float or sequence of float
        Penalty parameter, broadcast per node.
    n_rounds : int

    Returns
    -------
    dict with keys ``z_history`` (list of (K, d) arrays, including the start),
    ``copies`` and ``duals`` (lists of per-node dicts keyed by target id).
    """
    K = problem.n_nodes
    d = problem.block_dim
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (K,)).copy()
    z = {j: np.array(z0[j], dtype=float) for j in range(K)}
    nbrs = {k: list(problem.closed_neighborhood(k)) for k in range(K)}

    x = {k: {j: z[j].copy() for j in nbrs[k]} for k in range(K)}
    y = {k: {j: np.zeros(d) for j in nbrs[k]} for k in range(K)}
    history = [np.array([z[j] for j in range(K)])]

    for _ in range(n_rounds):
        # Consensus step: every node collects the copies targeting it.
        z_new = {}
        for j in range(K):
            total = np.zeros(d)
            weight = 0.0
            for k in nbrs[j]:
                total = total + (rho[k] * x[k][j] + y[k][j])
                weight = weight + rho[k]
            z_new[j] = problem.prox_h(j, total / weight, weight)
        z = z_new

        # Local step: fresh gradient at the just-received consensus blocks,
        # then the explicit gradient move and dual ascent, one edge at a time.
        for k in range(K):
            stacked = np.array([z[j] for j in nbrs[k]])
            grad = problem.grad_g(k, stacked)
            for pos, j in enumerate(nbrs[k]):
                x_new = z[j] - (grad[pos] + y[k][j]) / rho[k]
                y[k][j] = y[k][j] + rho[k] * (x_new - z[j])
                x[k][j] = x_new

        history.append(np.array([z[j] for j in range(K)]))

    return {
        "z_history": history,
        "copies": [dict(x[k]) for k in range(K)],
        "duals": [dict(y[k]) for k in range(K)],
    }
