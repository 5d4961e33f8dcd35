import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trendlab.attack import PartialKnowledge, QuerySet
from trendlab.errors import ArgumentError, ValidationError
from trendlab.evaluation import (EvalReport, auc, auc_pairwise, build_query_set, confidence_pitfall_study,
                                 grouped_auc, pitfall_gap, prob_sim_study, sample_non_edges)
from trendlab.graph import EdgeSet, Graph, generate_sbm, remove_edges
from trendlab.numerics import js_similarity

from conftest import star_graph


def kn_from(P):
    kn = PartialKnowledge(hops=0)
    kn.probabilities = {v: np.asarray(p, dtype=float) for v, p in enumerate(P)}
    return kn


def test_auc_examples():
    assert auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert auc([0.4] * 4, [1, 0, 1, 0]) == 0.5
    assert auc([0.8, 0.3, 0.5, 0.1], [1, 1, 0, 0]) == 0.75
    with pytest.raises(ValidationError):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(ArgumentError):
        auc([0.1, 0.2], [1])


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 50), st.integers(0, 2**31 - 1), st.booleans())
def test_auc_rank_equals_pairwise(n, seed, coarse):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 4, n).astype(float) if coarse else rng.random(n)
    y = rng.integers(0, 2, n)
    y[0], y[1] = 0, 1
    assert auc(s, y) == auc_pairwise(s, y)


def _query():
    pairs = ((0, 1), (2, 3), (4, 5), (6, 7), (8, 9), (10, 11))
    tags = ("unlearned", "unlearned", "member", "member", "negative", "negative")
    return QuerySet(pairs, tuple(0 if t == "negative" else 1 for t in tags), tags)


def test_grouped_auc_perfect_and_split():
    q = _query()
    assert grouped_auc([0.9, 0.8, 0.9, 0.8, 0.1, 0.2], q) == {"unlearned": 1.0, "original": 1.0, "all": 1.0}
    out = grouped_auc([0.15, 0.15, 0.9, 0.8, 0.1, 0.2], q)
    assert out["original"] == 1.0 and out["unlearned"] == 0.5


def test_grouped_auc_empty_group():
    q = QuerySet(((0, 1), (2, 3)), (1, 0), ("member", "negative"))
    with pytest.raises(ValidationError, match="unlearned"):
        grouped_auc([0.5, 0.2], q)


def test_grouped_auc_same_positives_degenerate():
    # the same positive pairs tagged once as unlearned and once as member
    pos, neg = ((0, 1), (2, 3), (4, 5)), ((6, 7), (8, 9))
    q = QuerySet(pos + pos + neg, (1,) * 6 + (0,) * 2, ("unlearned",) * 3 + ("member",) * 3 + ("negative",) * 2)
    s = np.random.default_rng(0).random(3)
    scores = np.concatenate([s, s, [0.4, 0.6]])
    out = grouped_auc(scores, q)
    assert out["unlearned"] == out["original"] == out["all"]


def test_query_set_balance_and_determinism():
    g = generate_sbm(2, 10, 0.5, 0.05, 2, 0.1, seed=0)
    m = round(0.05 * g.num_edges)
    delta = EdgeSet(tuple(map(tuple, g.edges[:m].tolist())))
    q = build_query_set(g, delta, 0.05, seed=3)
    c = q.counts()
    assert c["unlearned"] == m and c["member"] == m and c["negative"] == 2 * m
    assert len(set(q.pairs)) == len(q.pairs)
    assert all(not g.has_edge(*p) for p in q.subset("negative"))
    assert all(g.has_edge(*p) and p not in delta for p in q.subset("member"))
    assert q == build_query_set(g, delta, 0.05, seed=3)


def test_query_set_complete_graph_fails():
    n = 6
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
    g = Graph(np.ones((n, 1)), np.zeros(n, dtype=int), edges)
    with pytest.raises(ValidationError):
        build_query_set(g, EdgeSet((edges[0],)), 0.1)


def test_query_set_rejects_foreign_delta(small_sbm):
    with pytest.raises(ArgumentError):
        build_query_set(small_sbm, small_sbm.edge_set, 0.9)
    non = next((0, v) for v in range(1, small_sbm.num_nodes) if not small_sbm.has_edge(0, v))
    with pytest.raises(ValidationError):
        build_query_set(small_sbm, [non], 0.1)


def test_sample_non_edges_dense_and_sparse(small_sbm):
    rng = np.random.default_rng(0)
    few = sample_non_edges(small_sbm, 5, rng)
    assert len(set(few)) == 5 and all(not small_sbm.has_edge(*p) for p in few)
    n = small_sbm.num_nodes
    total = n * (n - 1) // 2 - small_sbm.num_edges
    allp = sample_non_edges(small_sbm, total, rng)
    assert len(set(allp)) == total


def test_prob_sim_identical_vectors():
    q = _query()
    kn = kn_from(np.tile([0.3, 0.7], (12, 1)))
    out = prob_sim_study(kn, q)
    assert all(out[t]["mean"] == pytest.approx(1.0) and out[t]["std"] == pytest.approx(0.0, abs=1e-12)
               for t in out)


def test_prob_sim_hand_average():
    rng = np.random.default_rng(1)
    P = rng.dirichlet(np.ones(3), size=12)
    out = prob_sim_study(kn_from(P), _query())
    hand = (js_similarity(P[0], P[1]) + js_similarity(P[2], P[3])) / 2
    assert out["unlearned"]["mean"] == pytest.approx(hand, abs=1e-15)
    assert out["unlearned"]["count"] == 2


def test_prob_sim_permutation_invariant():
    rng = np.random.default_rng(2)
    kn = kn_from(rng.dirichlet(np.ones(3), size=12))
    q = _query()
    perm = [5, 3, 1, 0, 2, 4]
    q2 = QuerySet(tuple(q.pairs[i] for i in perm), tuple(q.labels[i] for i in perm),
                  tuple(q.tags[i] for i in perm))
    a, b = prob_sim_study(kn, q), prob_sim_study(kn, q2)
    for t in a:
        assert a[t]["mean"] == pytest.approx(b[t]["mean"], abs=1e-15)


def test_pitfall_flat_and_constructed():
    g = star_graph(5)
    delta = EdgeSet(((0, 1),))
    g_un = remove_edges(g, delta)
    flat = confidence_pitfall_study(g_un, delta, np.tile([0.6, 0.4], (6, 1)))
    assert len({v["mean"] for v in flat.values()}) == 1
    curve = confidence_pitfall_study(g_un, delta, np.array([[0.3, 0.35, 0.35] if v in (0, 1) else [0.9, 0.05, 0.05]
                                                            for v in range(6)]))
    assert curve[0]["mean"] == pytest.approx(0.35)
    near, far = pitfall_gap(curve)
    assert near < far == pytest.approx(0.9)


def test_pitfall_distance_groups_on_star():
    g = star_graph(5)
    delta = EdgeSet(((0, 1),))
    curve = confidence_pitfall_study(remove_edges(g, delta), delta, np.full((6, 2), 0.5))
    # leaf 1 is cut off, but it is an endpoint and so sits at distance 0
    assert curve[0]["count"] == 2 and curve[1]["count"] == 4
    assert "inf" not in curve


def test_pitfall_unreachable_and_errors():
    g = Graph(np.ones((4, 1)), [0] * 4, [(0, 1), (2, 3)])
    delta = EdgeSet(((0, 1),))
    curve = confidence_pitfall_study(remove_edges(g, delta), delta, np.full((4, 2), 0.5))
    assert curve["inf"]["count"] == 2
    with pytest.raises(ValidationError):
        confidence_pitfall_study(g, EdgeSet(), np.full((4, 2), 0.5))
    with pytest.raises(ArgumentError):
        confidence_pitfall_study(g, delta, np.full((3, 2), 0.5))


def test_report_serialization():
    rep = EvalReport(auc={"trend_attack": {"unlearned": 0.7, "original": 0.8, "all": 0.75}},
                     prob_sim={t: {"mean": 0.5, "std": 0.1, "count": 2} for t in ("unlearned", "member", "negative")},
                     confidence_by_distance={0: {"mean": 0.8, "count": 2}, 1: {"mean": 0.9, "count": 3},
                                             "inf": {"mean": 0.5, "count": 1}},
                     query_counts={"all": 6})
    doc = json.loads(rep.to_json())
    assert set(doc["confidence_by_distance"]) == {"0", "1", "inf"}
    assert "Unlearned" in rep.to_text().splitlines()[0]
    assert rep.similarity_csv().splitlines()[0] == "subset,mean,std,count"
    assert rep.pitfall_csv().splitlines()[-1].startswith("inf,")
    with pytest.raises(ValidationError):
        EvalReport(auc={"x": {"all": 1.5}}, prob_sim={}, confidence_by_distance={}, query_counts={})
