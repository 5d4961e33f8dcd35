"""Closed-form edge influence for linear GCNs, plus finite-difference checks.

Setting: ``f = C X w`` with ``w*`` minimising ``0.5*||y - C X w||^2``
(optionally plus ``0.5*damping*||w||^2``).  The propagation matrix is
perturbed as ``C + eps * Xi`` and every quantity here is a derivative in
``eps`` at ``eps = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import NumericError
from .graph import EdgeSet, Graph, build_propagation
from .numerics import least_squares_weights, rng_stream, solve_spd


def _dense(M):
    M = getattr(M, "matrix", M)
    return M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)


def perturbation_matrix(delta, num_nodes):
    """``Xi = sum over pairs of e_i e_j^T + e_j e_i^T`` as a dense array."""
    delta = delta if isinstance(delta, EdgeSet) else EdgeSet(tuple(map(tuple, delta)))
    return delta.adjacency(num_nodes).toarray()


@dataclass(frozen=True)
class PerturbationSpec:
    delta: EdgeSet
    epsilon: float = 1.0

    def matrix(self, num_nodes):
        return self.epsilon * perturbation_matrix(self.delta, num_nodes)


def _hessian(Z, damping):
    if damping == 0 and np.linalg.matrix_rank(Z) < Z.shape[1]:
        raise NumericError("Hessian X^T C^T C X is singular; use a positive damping")
    return Z.T @ Z


def _apply_inverse(H, rhs, damping):
    if rhs.ndim == 1:
        res = solve_spd(H, rhs, damping=damping)
        if not res.converged:
            raise NumericError(f"Hessian solve did not converge (residual {res.residual_norm:.2e})")
        return res.x
    return np.stack([_apply_inverse(H, rhs[:, c], damping) for c in range(rhs.shape[1])], axis=1)


def weight_influence(C, X, y, w_star, xi, damping=0.0, rows=None):
    """``d w*/d eps`` for the perturbation direction ``xi``.

    ``H^{-1} (X^T Xi^T y - X^T Xi^T C X w* - X^T C^T Xi X w*)``, where the
    loss runs over ``rows`` (all nodes by default).  ``y``/``w_star`` may
    carry one column per target.
    """
    C, xi, X = _dense(C), _dense(xi), np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w_star = np.asarray(w_star, dtype=float)
    if rows is not None:
        C, xi, y = C[rows], xi[rows], y[rows]
    Z = C @ X
    H = _hessian(Z, damping)
    Xw = X @ w_star
    rhs = X.T @ (xi.T @ y) - X.T @ (xi.T @ (Z @ w_star)) - Z.T @ (xi @ Xw)
    if not np.any(rhs):
        return np.zeros_like(w_star)
    return _apply_inverse(H, rhs, damping)


def output_influence(C, X, y, w_star, xi, damping=0.0, rows=None):
    """``d f/d eps`` for every node: ``Xi X w* + C X I(w*)``."""
    Cd, xi, X = _dense(C), _dense(xi), np.asarray(X, dtype=float)
    dw = weight_influence(Cd, X, y, w_star, xi, damping=damping, rows=rows)
    return xi @ (X @ w_star) + Cd @ (X @ dw)


def h_inner(a, b, H, damping=0.0):
    """``<a, b>`` weighted by ``(H + damping I)^{-1}``."""
    return float(np.asarray(a) @ _apply_inverse(np.asarray(H, dtype=float), np.asarray(b, dtype=float), damping))


def decompose_single_edge_node(C, X, y, w_star, edge, node, damping=0.0):
    """Split the influence of one undirected edge on one node's output.

    Returns the edge, magnitude-weight and error-weight terms and their
    combination ``edge - magnitude + error``.  The edge term is the
    ``node`` entry of ``Xi X w*``, i.e. the *other* endpoint's score.
    """
    C, X = _dense(C), np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    w = np.asarray(w_star, dtype=float).ravel()
    i, j = edge
    Z = C @ X
    H = _hessian(Z, damping)
    s_i, s_j = X[i] @ w, X[j] @ w
    hz = _apply_inverse(H, Z[node], damping)
    edge_term = (s_j if node == i else 0.0) + (s_i if node == j else 0.0)
    magnitude = float((s_j * Z[i] + s_i * Z[j]) @ hz)
    error = float(((y[j] - Z[j] @ w) * X[i] + (y[i] - Z[i] @ w) * X[j]) @ hz)
    return {
        "edge_influence": float(edge_term),
        "magnitude_weight_influence": magnitude,
        "error_weight_influence": error,
        "total": float(edge_term) - magnitude + error,
    }


@dataclass
class InfluenceReport:
    weight_influence: np.ndarray
    output_influence: np.ndarray
    per_node_terms: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "weight_influence": self.weight_influence.tolist(),
            "output_influence": self.output_influence.tolist(),
            "per_node_terms": [
                {"edge": list(edge), "node": int(node), **terms}
                for (edge, node), terms in sorted(self.per_node_terms.items())
            ],
        }


def influence_report(C, X, y, w_star, delta, damping=0.0) -> InfluenceReport:
    n = np.shape(X)[0]
    delta = delta if isinstance(delta, EdgeSet) else EdgeSet(tuple(map(tuple, delta)))
    xi = perturbation_matrix(delta, n)
    report = InfluenceReport(weight_influence(C, X, y, w_star, xi, damping),
                             output_influence(C, X, y, w_star, xi, damping))
    for edge in delta:
        for k in range(n):
            report.per_node_terms[(edge, k)] = decompose_single_edge_node(C, X, y, w_star, edge, k, damping)
    return report


# ---------------------------------------------------------------- oracles

def _direct_argmin(C, X, y, damping):
    Z = C @ X
    return np.linalg.solve(Z.T @ Z + damping * np.eye(Z.shape[1]), Z.T @ y)


def _fd_step(C, xi, base_step):
    scale = np.linalg.norm(C) / max(np.linalg.norm(xi), 1e-300)
    return base_step * min(scale, 1.0)


def fd_weight_influence(C, X, y, xi, damping=0.0, step=1e-4):
    """Central difference of the re-solved argmin ``w*(eps)``."""
    C, xi = _dense(C), _dense(xi)
    if not np.any(xi):
        return np.zeros((np.shape(X)[1],) + np.shape(y)[1:])
    h = _fd_step(C, xi, step)
    plus = _direct_argmin(C + h * xi, X, y, damping)
    minus = _direct_argmin(C - h * xi, X, y, damping)
    return (plus - minus) / (2 * h)


def fd_output_influence(C, X, y, xi, damping=0.0, step=1e-4):
    """Central difference of ``(C + eps Xi) X w*(eps)``."""
    C, xi = _dense(C), _dense(xi)
    if not np.any(xi):
        return np.zeros((X.shape[0],) + np.shape(y)[1:])
    h = _fd_step(C, xi, step)

    def f(eps):
        Ce = C + eps * xi
        return Ce @ (X @ _direct_argmin(Ce, X, y, damping))

    return (f(h) - f(-h)) / (2 * h)


def _rel_err(a, b):
    diff = np.linalg.norm(np.asarray(a) - np.asarray(b))
    ref = np.linalg.norm(b)
    if ref == 0.0:
        return float(diff)
    return float(diff / ref)


def random_instance(rng, max_nodes=30, max_dim=8):
    """Random connected-ish graph, Gaussian features, noisy linear targets."""
    n = int(rng.integers(max(6, max_dim + 2), max_nodes + 1))
    d = int(rng.integers(2, max_dim + 1))
    p = float(rng.uniform(0.1, 0.35))
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    ring = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
    edges = np.concatenate([np.stack([iu[keep], ju[keep]], axis=1), ring])
    X = rng.standard_normal((n, d))
    g = Graph(X, np.zeros(n, dtype=np.int64), edges)
    C = build_propagation(g, "one_gcn").dense()
    y = C @ X @ rng.standard_normal(d) + 0.3 * rng.standard_normal(n)
    return g, C, y


def run_theory_validation(instances=20, seed=0, tolerance=1e-5, decomposition_tolerance=1e-10,
                          max_nodes=30, max_dim=8, damping=1e-8, include_empty=True, abs_floor=1e-9):
    """Check the closed forms against finite differences on seeded instances."""
    rows = []
    for t in range(instances):
        rng = rng_stream(seed, f"theory-{t}")
        g, C, y = random_instance(rng, max_nodes, max_dim)
        if include_empty and t == 0:
            delta = EdgeSet()
        else:
            m = int(rng.integers(1, min(4, g.num_edges) + 1))
            pick = rng.choice(g.num_edges, size=m, replace=False)
            delta = EdgeSet(tuple(map(tuple, g.edges[pick].tolist())))
        xi = perturbation_matrix(delta, g.num_nodes)
        w = least_squares_weights(C @ g.features, y, damping=damping)
        wi = weight_influence(C, g.features, y, w, xi, damping)
        oi = output_influence(C, g.features, y, w, xi, damping)
        fd_w = fd_weight_influence(C, g.features, y, xi, damping)
        fd_o = fd_output_influence(C, g.features, y, xi, damping)
        w_err = _rel_err(wi, fd_w)
        o_err = _rel_err(oi, fd_o)
        w_ok = np.linalg.norm(wi - fd_w) <= tolerance * np.linalg.norm(fd_w) + abs_floor
        o_ok = np.linalg.norm(oi - fd_o) <= tolerance * np.linalg.norm(fd_o) + abs_floor
        dec_err = 0.0
        if len(delta):
            edge = delta.pairs[0]
            single = output_influence(C, g.features, y, w, perturbation_matrix(EdgeSet((edge,)), g.num_nodes), damping)
            for k in range(g.num_nodes):
                total = decompose_single_edge_node(C, g.features, y, w, edge, k, damping)["total"]
                dec_err = max(dec_err, abs(total - single[k]) / max(1.0, abs(single[k])))
        rows.append({
            "instance": t, "nodes": g.num_nodes, "dim": g.feature_dim, "removed_edges": len(delta),
            "weight_rel_error": w_err, "output_rel_error": o_err, "decomposition_error": dec_err,
            "max_abs_output_influence": float(np.max(np.abs(oi))) if oi.size else 0.0,
            "passed": bool(w_ok and o_ok and dec_err <= decomposition_tolerance),
        })
    return {
        "instances": rows,
        "max_weight_rel_error": max(r["weight_rel_error"] for r in rows),
        "max_output_rel_error": max(r["output_rel_error"] for r in rows),
        "max_decomposition_error": max(r["decomposition_error"] for r in rows),
        "tolerance": tolerance,
        "decomposition_tolerance": decomposition_tolerance,
        "passed": all(r["passed"] for r in rows),
    }
