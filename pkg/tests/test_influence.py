import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trendlab.graph import EdgeSet, Graph, build_propagation
from trendlab.influence import (PerturbationSpec, decompose_single_edge_node, fd_output_influence,
                                fd_weight_influence, h_inner, influence_report, output_influence,
                                perturbation_matrix, random_instance, run_theory_validation,
                                weight_influence)
from trendlab.numerics import least_squares_weights, rng_stream

from conftest import path_graph


def instance(seed):
    g, C, y = random_instance(rng_stream(seed, "influence-test"), max_nodes=20, max_dim=5)
    w = least_squares_weights(C @ g.features, y, damping=1e-8)
    return g, C, y, w


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_perturbation_matrix():
    xi = perturbation_matrix([(0, 2)], 3)
    assert xi.tolist() == [[0, 0, 1], [0, 0, 0], [1, 0, 0]]
    assert np.array_equal(PerturbationSpec(EdgeSet(((0, 2),)), -1.0).matrix(3), -xi)


def test_empty_delta_zero_influence():
    g, C, y, w = instance(0)
    xi = perturbation_matrix(EdgeSet(), g.num_nodes)
    assert not np.any(weight_influence(C, g.features, y, w, xi, 1e-8))
    assert not np.any(output_influence(C, g.features, y, w, xi, 1e-8))


def test_path_weight_influence_matches_fd():
    g = path_graph(3, dim=2, seed=1)
    C = build_propagation(g).dense()
    y = np.array([1.0, -0.5, 2.0])
    w = least_squares_weights(C @ g.features, y)
    xi = perturbation_matrix([(0, 1)], 3)
    assert rel(weight_influence(C, g.features, y, w, xi), fd_weight_influence(C, g.features, y, xi)) <= 1e-5


def test_zero_labels_zero_influence():
    g, C, _, _ = instance(1)
    y = np.zeros(g.num_nodes)
    w = least_squares_weights(C @ g.features, y, damping=1e-8)
    assert not np.any(w)
    xi = perturbation_matrix(g.edges[:2].tolist(), g.num_nodes)
    assert np.allclose(weight_influence(C, g.features, y, w, xi, 1e-8), 0)


@pytest.mark.parametrize("seed", range(5))
def test_output_influence_matches_fd_small(seed):
    g, C, y, w = instance(seed)
    xi = perturbation_matrix(g.edges[:1].tolist(), g.num_nodes)
    ana = output_influence(C, g.features, y, w, xi, 1e-8)
    fd = fd_output_influence(C, g.features, y, xi, 1e-8)
    assert rel(ana, fd) <= 1e-5


def test_output_influence_formula():
    g, C, y, w = instance(2)
    xi = perturbation_matrix(g.edges[:3].tolist(), g.num_nodes)
    dw = weight_influence(C, g.features, y, w, xi, 1e-8)
    assert np.allclose(output_influence(C, g.features, y, w, xi, 1e-8),
                       xi @ g.features @ w + C @ g.features @ dw, atol=1e-12)


def test_decomposition_sums_to_output_influence():
    g, C, y, w = instance(3)
    edge = tuple(g.edges[0])
    single = output_influence(C, g.features, y, w, perturbation_matrix([edge], g.num_nodes), 1e-8)
    for k in range(g.num_nodes):
        terms = decompose_single_edge_node(C, g.features, y, w, edge, k, 1e-8)
        total = terms["edge_influence"] - terms["magnitude_weight_influence"] + terms["error_weight_influence"]
        assert total == terms["total"]
        assert abs(total - single[k]) <= 1e-10
        if k not in edge:
            assert terms["edge_influence"] == 0.0


def test_error_term_vanishes_for_perfect_fit():
    g, C, _, _ = instance(4)
    y = C @ g.features @ np.arange(1.0, g.feature_dim + 1)
    w = least_squares_weights(C @ g.features, y)
    edge = tuple(g.edges[0])
    for k in range(g.num_nodes):
        assert abs(decompose_single_edge_node(C, g.features, y, w, edge, k)["error_weight_influence"]) <= 1e-9


def test_endpoint_dominance():
    hits = 0
    for t in range(100):
        g, C, y, w = instance(100 + t)
        i, j = g.edges[int(rng_stream(t, "pick").integers(g.num_edges))]
        oi = np.abs(output_influence(C, g.features, y, w, perturbation_matrix([(i, j)], g.num_nodes), 1e-8))
        others = np.delete(oi, [i, j])
        hits += oi[[i, j]].mean() >= others.mean()
    assert hits >= 90


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_influence_linear_in_delta(seed):
    g, C, y, w = instance(seed)
    m = g.num_edges // 2
    a, b = g.edges[:m].tolist(), g.edges[m:].tolist()
    n = g.num_nodes
    union = output_influence(C, g.features, y, w, perturbation_matrix(a + b, n), 1e-8)
    parts = sum(output_influence(C, g.features, y, w, perturbation_matrix(p, n), 1e-8) for p in (a, b))
    assert np.max(np.abs(union - parts)) <= 1e-10 * max(1.0, np.max(np.abs(union)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_h_inner_symmetric_positive(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((5, 5))
    H = A @ A.T + np.eye(5)
    a, b = rng.standard_normal(5), rng.standard_normal(5)
    assert abs(h_inner(a, b, H) - h_inner(b, a, H)) <= 1e-10 * (1 + abs(h_inner(a, b, H)))
    assert h_inner(a, a, H) > 0


def test_influence_report_shapes():
    g, C, y, w = instance(5)
    delta = EdgeSet(tuple(map(tuple, g.edges[:2].tolist())))
    rep = influence_report(C, g.features, y, w, delta, 1e-8)
    assert rep.output_influence.shape == (g.num_nodes,)
    assert len(rep.per_node_terms) == 2 * g.num_nodes
    assert len(rep.to_dict()["per_node_terms"]) == 2 * g.num_nodes


def test_theory_validation_passes():
    report = run_theory_validation()
    assert report["passed"]
    assert report["instances"][0]["removed_edges"] == 0
    assert report["instances"][0]["max_abs_output_influence"] == 0.0
    assert all(r["nodes"] <= 30 and r["dim"] <= 8 for r in report["instances"])


def test_theory_validation_tight_tolerance_fails():
    assert not run_theory_validation(instances=3, tolerance=1e-12, abs_floor=0.0)["passed"]
