import numpy as np
import pytest

from asyncadmm import (
    LocalizationProblem,
    QuadraticProblem,
    Topology,
    random_quadratic,
    ring_topology,
)


@pytest.fixture
def ring_quadratic():
    return random_quadratic(ring_topology(10), block_dim=2, seed=0)


@pytest.fixture
def line_topology():
    return Topology(3, [(0, 1), (1, 2)])


@pytest.fixture
def small_localization():
    # Five nodes on a path with two anchors at the ends; exact ranges.
    topo = Topology(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 2), (2, 4)])
    truth = np.array([
        [0.1, 0.1],
        [0.3, 0.2],
        [0.5, 0.5],
        [0.7, 0.6],
        [0.9, 0.9],
    ])
    return LocalizationProblem.from_truth(
        topo, truth, anchor_ids=(0, 4), epsilon=1e-3, noise_sigma=0.0)


@pytest.fixture
def tiny_quadratic(line_topology):
    targets = {
        (0, 0): np.array([1.0]), (0, 1): np.array([2.0]),
        (1, 0): np.array([3.0]), (1, 1): np.array([0.0]), (1, 2): np.array([1.0]),
        (2, 1): np.array([2.0]), (2, 2): np.array([4.0]),
    }
    return QuadraticProblem(line_topology, targets)
