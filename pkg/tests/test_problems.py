import numpy as np
import pytest

from asyncadmm import (
    Box,
    ConfigurationError,
    LocalizationProblem,
    NormToPoint,
    Point,
    QuadraticProblem,
    RealSpace,
    Topology,
    ZeroPenalty,
    load_instance,
    random_quadratic,
    ring_topology,
    save_instance,
    smoothed_distance,
)
from asyncadmm.diagnostics import finite_difference_gradient


# ----------------------------------------------------------------------
# domains


def test_real_space_is_unconstrained():
    dom = RealSpace(3)
    v = np.array([5.0, -2.0, 0.0])
    assert np.array_equal(dom.project(v), v)
    assert dom.diameter() == np.inf
    s = np.array([1.0, 2.0, 3.0])
    assert dom.normal_cone_distance(v, s) == pytest.approx(np.linalg.norm(s))


def test_box_projection_clips_componentwise():
    dom = Box(np.zeros(2), np.ones(2))
    assert np.array_equal(dom.project(np.array([1.2, -0.1])), [1.0, 0.0])
    assert np.array_equal(dom.project(np.array([0.4, 0.6])), [0.4, 0.6])
    assert dom.diameter() == pytest.approx(np.sqrt(2.0))


def test_box_normal_cone_absorbs_boundary_directions():
    dom = Box(np.zeros(2), np.ones(2))
    inner = np.array([0.5, 0.5])
    s = np.array([0.3, -0.4])
    # Interior: the normal cone is {0}, distance is the norm itself.
    assert dom.normal_cone_distance(inner, s) == pytest.approx(0.5)
    # On the lower face the cone admits any nonpositive component.
    edge = np.array([0.0, 0.5])
    assert dom.normal_cone_distance(edge, np.array([-3.0, 0.0])) == pytest.approx(0.0)
    assert dom.normal_cone_distance(edge, np.array([3.0, 0.0])) == pytest.approx(3.0)
    # Upper face admits nonnegative components.
    top = np.array([0.5, 1.0])
    assert dom.normal_cone_distance(top, np.array([0.0, 2.0])) == pytest.approx(0.0)


def test_box_sampling_stays_inside():
    dom = Box(np.array([-1.0, 2.0]), np.array([0.0, 5.0]))
    rng = np.random.default_rng(0)
    draws = np.array([dom.sample(rng) for _ in range(200)])
    assert (draws >= [-1.0, 2.0]).all() and (draws <= [0.0, 5.0]).all()


def test_point_domain_pins_value():
    dom = Point(np.array([0.25, 0.75]))
    assert np.array_equal(dom.project(np.array([9.0, -9.0])), [0.25, 0.75])
    assert dom.diameter() == 0.0
    assert dom.normal_cone_distance(np.array([0.25, 0.75]), np.array([7.0, 7.0])) == 0.0
    assert np.array_equal(dom.sample(np.random.default_rng(1)), [0.25, 0.75])


# ----------------------------------------------------------------------
# penalties


def test_zero_penalty_prox_is_projection():
    pen = ZeroPenalty()
    dom = Box(np.zeros(1), np.ones(1))
    assert pen.value(np.array([3.0])) == 0.0
    assert np.array_equal(pen.prox(np.array([1.5]), 2.0, dom), [1.0])
    s = np.array([0.2])
    got = pen.subgradient_distance(np.array([0.5]), s, dom)
    assert got == pytest.approx(0.2)


def test_norm_penalty_prox_matches_grid_minimizer():
    pen = NormToPoint(1.0, np.zeros(1))
    dom = RealSpace(1)
    v, weight = np.array([3.0]), 1.0
    got = pen.prox(v, weight, dom)
    assert got[0] == pytest.approx(2.0, abs=1e-12)
    # Independent check: dense scan of the prox objective.
    grid = np.linspace(-5.0, 5.0, 100001)
    obj = pen.r * np.abs(grid) + 0.5 * weight * (grid - v[0]) ** 2
    assert grid[obj.argmin()] == pytest.approx(got[0], abs=1e-4)


def test_norm_penalty_shrinks_to_center_when_weight_small():
    pen = NormToPoint(10.0, np.array([1.0, 1.0]))
    got = pen.prox(np.array([1.5, 1.0]), 1.0, RealSpace(2))
    assert np.allclose(got, [1.0, 1.0])


def test_norm_penalty_requires_unconstrained_domain():
    pen = NormToPoint(1.0, np.zeros(1))
    box = Box(np.zeros(1), np.ones(1))
    with pytest.raises(ConfigurationError):
        pen.prox(np.array([3.0]), 1.0, box)
    assert pen.subgradient_distance(np.array([0.5]), np.array([0.1]), box) is None


def test_norm_penalty_subgradient_distance_inside_and_outside():
    pen = NormToPoint(2.0, np.zeros(2))
    dom = RealSpace(2)
    # Away from the center the subdifferential is the single gradient.
    z = np.array([3.0, 4.0])
    g = 2.0 * z / 5.0
    assert pen.subgradient_distance(z, g, dom) == pytest.approx(0.0, abs=1e-12)
    # At the center any vector of norm <= 2 is a subgradient.
    assert pen.subgradient_distance(np.zeros(2), np.array([1.0, 1.0]), dom) == pytest.approx(0.0)
    assert pen.subgradient_distance(np.zeros(2), np.array([3.0, 0.0]), dom) == pytest.approx(1.0)


# ----------------------------------------------------------------------
# smoothed distance


def test_smoothed_distance_examples():
    assert smoothed_distance(np.zeros(2), np.zeros(2), 1e-4) == pytest.approx(0.01, abs=0)
    assert smoothed_distance(np.zeros(2), np.array([3.0, 4.0]), 0.0) == pytest.approx(5.0)
    p = np.array([0.0, 0.0])
    q = np.array([1.0, 0.0])
    assert smoothed_distance(p, q, 1e-3) == pytest.approx(np.sqrt(1.001))


def test_smoothed_distance_is_symmetric_and_above_euclidean():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p, q = rng.normal(size=2), rng.normal(size=2)
        a = smoothed_distance(p, q, 1e-3)
        assert a == smoothed_distance(q, p, 1e-3)
        assert a >= np.linalg.norm(p - q)


# ----------------------------------------------------------------------
# quadratic problems


def test_quadratic_gradient_and_value(tiny_quadratic):
    prob = tiny_quadratic
    x = np.array([[2.0], [3.0], [4.0]])  # copies of blocks (0, 1, 2) at node 1
    a = np.array([[3.0], [0.0], [1.0]])
    assert prob.eval_g(1, x) == pytest.approx(0.5 * ((x - a) ** 2).sum())
    assert np.allclose(prob.grad_g(1, x), x - a)
    assert prob.lipschitz(1) == 1.0


def test_quadratic_single_node_optimum():
    topo = Topology(1, [])
    prob = QuadraticProblem(topo, {(0, 0): np.array([2.5, -1.0])}, block_dim=2)
    assert np.allclose(prob.centralized_optimum(), [[2.5, -1.0]])


def test_quadratic_optimum_is_mean_of_targets(tiny_quadratic):
    prob = tiny_quadratic
    zstar = prob.centralized_optimum()
    assert zstar[0] == pytest.approx((1.0 + 3.0) / 2)
    assert zstar[1] == pytest.approx((2.0 + 0.0 + 2.0) / 3)
    assert zstar[2] == pytest.approx((1.0 + 4.0) / 2)


def test_quadratic_optimum_matches_least_squares_oracle():
    prob = random_quadratic(ring_topology(6), block_dim=2, seed=5)
    K, d = 6, 2
    rows, rhs = [], []
    for k in range(K):
        for idx, j in enumerate(prob.closed_neighborhood(k)):
            pick = np.zeros(K)
            pick[j] = 1.0
            rows.append(pick)
            rhs.append(prob.targets[k][idx])
    A = np.array(rows)
    b = np.array(rhs)
    zstar, *_ = np.linalg.lstsq(A, b, rcond=None)
    assert np.allclose(prob.centralized_optimum(), zstar, atol=1e-12)


def test_random_quadratic_is_seed_deterministic():
    a = random_quadratic(ring_topology(5), block_dim=3, seed=9)
    b = random_quadratic(ring_topology(5), block_dim=3, seed=9)
    for k in range(5):
        assert np.array_equal(a.targets[k], b.targets[k])
        assert (a.targets[k] >= -1.0).all() and (a.targets[k] <= 1.0).all()


def test_quadratic_is_its_own_majorizer(tiny_quadratic):
    prob = tiny_quadratic
    assert prob.has_surrogate
    center = np.array([[0.5], [1.0], [-2.0]])
    sur = prob.build_surrogate(1, center)
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.normal(size=(3, 1))
        assert sur.value(x) == pytest.approx(prob.eval_g(1, x), abs=1e-12)
        assert np.allclose(sur.grad(x), prob.grad_g(1, x))


# ----------------------------------------------------------------------
# localization problems


def test_measurement_keys_are_normalized(line_topology):
    prob = LocalizationProblem(line_topology, {(1, 0): 0.5, (1, 2): 0.7})
    assert prob.measurements == {(0, 1): 0.5, (1, 2): 0.7}


def test_measurement_validation(line_topology):
    with pytest.raises(ConfigurationError, match="conflicting"):
        LocalizationProblem(line_topology, {(0, 1): 0.5, (1, 0): 0.6, (1, 2): 0.7})
    with pytest.raises(ConfigurationError, match="negative"):
        LocalizationProblem(line_topology, {(0, 1): -0.5, (1, 2): 0.7})
    with pytest.raises(ConfigurationError, match="missing"):
        LocalizationProblem(line_topology, {(0, 1): 0.5})
    with pytest.raises(ConfigurationError, match="non-edge"):
        LocalizationProblem(line_topology, {(0, 1): 0.5, (1, 2): 0.7, (0, 2): 0.9})
    with pytest.raises(ConfigurationError, match="anchor_positions"):
        LocalizationProblem(line_topology, {(0, 1): 0.5, (1, 2): 0.7}, anchor_ids=(0,))


def test_localization_gradient_hand_example():
    topo = Topology(2, [(0, 1)])
    prob = LocalizationProblem(topo, {(0, 1): 2.0}, epsilon=1e-12)
    # Unit separation on the x-axis, range 2: the stress pushes apart.
    x = np.array([[0.0, 0.0], [1.0, 0.0]])
    grad = prob.grad_g(0, x)
    assert np.allclose(grad[0], [2.0, 0.0], atol=1e-6)
    assert np.allclose(grad[1], [-2.0, 0.0], atol=1e-6)
    # Separation 4, range 2: the stress pulls together.
    x = np.array([[-2.0, 0.0], [2.0, 0.0]])
    grad = prob.grad_g(0, x)
    assert np.allclose(grad[0], [-4.0, 0.0], atol=1e-6)
    assert np.allclose(grad[1], [4.0, 0.0], atol=1e-6)
    assert prob.eval_g(0, x) == pytest.approx((2.0 - 4.0) ** 2, rel=1e-9)
    # Residual-free configuration: gradient vanishes.
    exact = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert np.abs(prob.grad_g(0, exact)).max() < 1e-5


def test_localization_gradient_matches_finite_differences(small_localization):
    prob = small_localization
    rng = np.random.default_rng(11)
    for k in range(prob.n_nodes):
        m = len(prob.closed_neighborhood(k))
        for _ in range(4):
            x = rng.uniform(0.0, 1.0, size=(m, 2))
            got = prob.grad_g(k, x)
            want = finite_difference_gradient(lambda v: prob.eval_g(k, v), x)
            assert np.allclose(got, want, rtol=1e-5, atol=1e-7)


def test_localization_lipschitz_examples():
    topo = Topology(2, [(0, 1)])
    p1 = LocalizationProblem(topo, {(0, 1): 1.0}, epsilon=1.0)
    assert p1.lipschitz(0) == pytest.approx(24.0)
    p4 = LocalizationProblem(topo, {(0, 1): 1.0}, epsilon=4.0)
    assert p4.lipschitz(0) == pytest.approx(16.0)


def test_localization_lipschitz_bounds_gradient_jumps(small_localization):
    prob = small_localization
    rng = np.random.default_rng(7)
    for _ in range(1000):
        k = int(rng.integers(prob.n_nodes))
        m = len(prob.closed_neighborhood(k))
        x = rng.uniform(0.0, 1.0, size=(m, 2))
        y = rng.uniform(0.0, 1.0, size=(m, 2))
        lhs = np.linalg.norm(prob.grad_g(k, x) - prob.grad_g(k, y))
        rhs = prob.lipschitz(k) * np.linalg.norm(x - y)
        assert lhs <= rhs + 1e-9


def test_anchor_blocks_are_pinned(small_localization):
    prob = small_localization
    cand = np.full((5, 2), 0.42)
    out = prob.prox_all(cand, np.ones(5))
    assert np.allclose(out[0], [0.1, 0.1])
    assert np.allclose(out[4], [0.9, 0.9])
    assert np.allclose(out[1:4], 0.42)


def test_free_blocks_are_clipped_to_unit_box(small_localization):
    prob = small_localization
    cand = np.array([[0.5, 0.5], [1.2, -0.1], [0.3, 0.3], [0.6, 0.6], [0.5, 0.5]])
    out = prob.prox_all(cand, np.ones(5))
    assert np.allclose(out[1], [1.0, 0.0])


def test_from_truth_noise_is_seeded_and_nonnegative():
    topo = ring_topology(8)
    rng = np.random.default_rng(4)
    truth = rng.uniform(size=(8, 2))
    a = LocalizationProblem.from_truth(topo, truth, noise_sigma=0.5, seed=12)
    b = LocalizationProblem.from_truth(topo, truth, noise_sigma=0.5, seed=12)
    assert a.measurements == b.measurements
    assert all(v >= 0.0 for v in a.measurements.values())
    exact = LocalizationProblem.from_truth(topo, truth, noise_sigma=0.0, seed=12)
    for (i, j), v in exact.measurements.items():
        assert v == pytest.approx(np.linalg.norm(truth[i] - truth[j]), abs=1e-12)


def test_objective_sums_local_stress(small_localization):
    prob = small_localization
    pos = np.array(prob.true_positions)
    total = 0.0
    for k in range(prob.n_nodes):
        nbrs = prob.closed_neighborhood(k)
        total += prob.eval_g(k, pos[list(nbrs)])
    assert prob.objective(pos) == pytest.approx(total)
    # Exact ranges: the truth is a global minimizer with tiny smoothed residual.
    assert prob.objective(pos) < prob.objective(pos + 0.05)


# ----------------------------------------------------------------------
# localization surrogate


def test_surrogate_touches_block_at_reference(small_localization):
    prob = small_localization
    rng = np.random.default_rng(21)
    for k in range(prob.n_nodes):
        m = len(prob.closed_neighborhood(k))
        center = rng.uniform(size=(m, 2))
        sur = prob.build_surrogate(k, center)
        assert sur.value(center) == pytest.approx(prob.eval_g(k, center), abs=1e-10)
        assert np.allclose(sur.grad(center), prob.grad_g(k, center), atol=1e-10)


def test_surrogate_dominates_block_everywhere(small_localization):
    prob = small_localization
    rng = np.random.default_rng(22)
    for _ in range(200):
        k = int(rng.integers(prob.n_nodes))
        m = len(prob.closed_neighborhood(k))
        center = rng.uniform(size=(m, 2))
        x = rng.uniform(size=(m, 2))
        sur = prob.build_surrogate(k, center)
        assert sur.value(x) >= prob.eval_g(k, x) - 1e-10


def test_surrogate_minimizer_is_stationary(small_localization):
    prob = small_localization
    rng = np.random.default_rng(23)
    k = 2
    m = len(prob.closed_neighborhood(k))
    center = rng.uniform(size=(m, 2))
    duals = rng.normal(size=(m, 2))
    z_anchor = rng.uniform(size=(m, 2))
    rho = 50.0
    sur = prob.build_surrogate(k, center)
    x = sur.minimize(duals, rho, z_anchor)
    resid = sur.grad(x) + duals + rho * (x - z_anchor)
    assert np.abs(resid).max() < 1e-9


def test_surrogate_minimizer_matches_descent_oracle(line_topology):
    prob = LocalizationProblem(line_topology, {(0, 1): 0.4, (1, 2): 0.3},
                               epsilon=1e-3)
    k, rho = 1, 30.0
    rng = np.random.default_rng(24)
    center = rng.uniform(size=(3, 2))
    duals = rng.normal(size=(3, 2)) * 0.1
    z_anchor = rng.uniform(size=(3, 2))
    sur = prob.build_surrogate(k, center)
    got = sur.minimize(duals, rho, z_anchor)

    def total(x):
        return sur.value(x) + (duals * x).sum() + 0.5 * rho * ((x - z_anchor) ** 2).sum()

    # Plain gradient descent from several starts lands on the same point.
    for start_seed in range(3):
        x = np.random.default_rng(start_seed).uniform(size=(3, 2))
        for _ in range(4000):
            g = sur.grad(x) + duals + rho * (x - z_anchor)
            x = x - g / (prob.lipschitz(k) + rho)
        assert np.allclose(x, got, atol=1e-6)
        assert total(got) <= total(x) + 1e-10


# ----------------------------------------------------------------------
# instance files


def test_instance_roundtrip(tmp_path, small_localization):
    path = tmp_path / "instance.txt"
    save_instance(path, small_localization)
    loaded = load_instance(path)
    assert loaded.n_nodes == small_localization.n_nodes
    assert loaded.topology.edges == small_localization.topology.edges
    assert loaded.measurements == small_localization.measurements
    assert loaded.anchor_ids == small_localization.anchor_ids
    assert loaded.epsilon == small_localization.epsilon
    assert loaded.weight == small_localization.weight
    save_instance(tmp_path / "second.txt", loaded)
    assert (tmp_path / "instance.txt").read_bytes() == (tmp_path / "second.txt").read_bytes()


def test_instance_rejects_malformed(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("format = something-else\n")
    with pytest.raises(ConfigurationError):
        load_instance(bad)
    bad.write_text("node 0 0.0 0.0 anchor\n")
    with pytest.raises(ConfigurationError):
        load_instance(bad)
