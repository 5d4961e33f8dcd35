import numpy as np
import pytest

from trendlab.graph import Graph, generate_sbm


def path_graph(n, dim=2, seed=0):
    rng = np.random.default_rng(seed)
    edges = [(i, i + 1) for i in range(n - 1)]
    return Graph(rng.standard_normal((n, dim)), np.arange(n) % 2, edges)


def cycle_graph(n, dim=2):
    edges = [(i, (i + 1) % n) for i in range(n)]
    return Graph(np.eye(n, dim), np.zeros(n, dtype=int), edges)


def star_graph(leaves, dim=2):
    edges = [(0, i) for i in range(1, leaves + 1)]
    return Graph(np.ones((leaves + 1, dim)), np.zeros(leaves + 1, dtype=int), edges)


@pytest.fixture
def small_sbm():
    return generate_sbm(3, 12, 0.5, 0.03, 6, 0.5, seed=3)


@pytest.fixture
def two_cliques():
    return generate_sbm(2, 5, 1.0, 0.0, 2, 0.0, seed=7)
