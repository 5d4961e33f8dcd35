"""Graph data model, CSV ingestion, SBM generation, bisection and propagation matrices."""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .errors import ArgumentError, NumericError, ParseError, ValidationError
from .numerics import rng_stream

PROPAGATION_KINDS = ("one_gcn", "k_sgc", "ppnp", "k_appnp", "gin", "normalized_plain")


def _canonical_pairs(pairs, num_nodes=None):
    arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    arr = arr.reshape(-1, 2)
    arr = np.sort(arr, axis=1)
    if num_nodes is not None:
        bad = (arr < 0) | (arr >= num_nodes)
        if bad.any():
            raise ValidationError(f"edge endpoint out of range: {arr[bad.any(axis=1)][0].tolist()}")
    arr = arr[arr[:, 0] != arr[:, 1]]
    return np.unique(arr, axis=0)


@dataclass(frozen=True)
class EdgeSet:
    """Ordered collection of unique canonical ``(min, max)`` node pairs."""

    pairs: tuple = ()

    def __post_init__(self):
        seen = set()
        out = []
        for a, b in self.pairs:
            a, b = int(a), int(b)
            if a == b:
                raise ValidationError(f"self-loop pair ({a}, {b}) in edge set")
            p = (a, b) if a < b else (b, a)
            if p in seen:
                continue
            seen.add(p)
            out.append(p)
        object.__setattr__(self, "pairs", tuple(out))

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __contains__(self, pair):
        a, b = pair
        return ((a, b) if a < b else (b, a)) in self._lookup

    @cached_property
    def _lookup(self):
        return frozenset(self.pairs)

    def as_array(self):
        return np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)

    def endpoints(self):
        return np.unique(self.as_array().ravel())

    def adjacency(self, num_nodes):
        """Symmetric perturbation matrix: sum of e_i e_j^T + e_j e_i^T over pairs."""
        arr = self.as_array()
        if arr.size and arr.max() >= num_nodes:
            raise ValidationError("edge set references a node outside the graph")
        rows = np.concatenate([arr[:, 0], arr[:, 1]])
        cols = np.concatenate([arr[:, 1], arr[:, 0]])
        return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(num_nodes, num_nodes))


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, unweighted attributed graph.

    Edges are stored once each as sorted ``(min, max)`` rows; self-loops
    and duplicates are dropped on construction.
    """

    features: np.ndarray
    labels: np.ndarray
    edges: np.ndarray
    train_mask: np.ndarray = None
    node_ids: tuple = None
    num_classes: int = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2:
            raise ValidationError("features must be a 2-D matrix")
        n = X.shape[0]
        if not np.all(np.isfinite(X)):
            raise ValidationError("feature matrix contains non-finite entries")
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if y.shape[0] != n:
            raise ValidationError(f"{y.shape[0]} labels for {n} nodes")
        if n and y.min() < 0:
            raise ValidationError("labels must be non-negative")
        k = self.num_classes if self.num_classes is not None else (int(y.max()) + 1 if n else 0)
        if n and y.max() >= k:
            raise ValidationError(f"label {int(y.max())} >= num_classes {k}")
        mask = np.ones(n, dtype=bool) if self.train_mask is None else np.asarray(self.train_mask, dtype=bool)
        if mask.shape != (n,):
            raise ValidationError("train_mask length must equal num_nodes")
        ids = tuple(str(i) for i in range(n)) if self.node_ids is None else tuple(str(i) for i in self.node_ids)
        if len(ids) != n:
            raise ValidationError("node_ids length must equal num_nodes")
        for name, value in (("features", X), ("labels", y), ("edges", _canonical_pairs(self.edges, n)),
                            ("train_mask", mask), ("node_ids", ids), ("num_classes", int(k))):
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def num_nodes(self):
        return self.features.shape[0]

    @property
    def num_edges(self):
        return self.edges.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    @cached_property
    def adjacency(self):
        """Symmetric CSR adjacency matrix A."""
        n = self.num_nodes
        e = self.edges
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        A = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
        A.sort_indices()
        return A

    @cached_property
    def degrees(self):
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    @cached_property
    def edge_set(self):
        return frozenset(map(tuple, self.edges.tolist()))

    def has_edge(self, u, v):
        return ((u, v) if u < v else (v, u)) in self.edge_set

    def neighbors(self, v):
        A = self.adjacency
        return A.indices[A.indptr[v]:A.indptr[v + 1]]

    def replace(self, **changes):
        fields = dict(features=self.features, labels=self.labels, edges=self.edges,
                      train_mask=self.train_mask, node_ids=self.node_ids, num_classes=self.num_classes)
        fields.update(changes)
        return Graph(**fields)

    def subgraph(self, nodes):
        """Induced subgraph on ``nodes`` (re-indexed in the given order)."""
        nodes = np.asarray(nodes, dtype=np.int64)
        remap = -np.ones(self.num_nodes, dtype=np.int64)
        remap[nodes] = np.arange(nodes.size)
        e = remap[self.edges]
        e = e[(e >= 0).all(axis=1)]
        return Graph(self.features[nodes], self.labels[nodes], e, self.train_mask[nodes],
                     tuple(self.node_ids[i] for i in nodes), self.num_classes)

    def distances_from(self, sources):
        """Hop distance from the nearest of ``sources`` (inf if unreachable)."""
        sources = np.unique(np.asarray(sources, dtype=np.int64))
        if sources.size == 0:
            return np.full(self.num_nodes, np.inf)
        return dijkstra(self.adjacency, unweighted=True, directed=False,
                             indices=sources, min_only=True)


# ---------------------------------------------------------------- ingestion

def load_graph(nodes_path, edges_path) -> Graph:
    """Read the nodes/edges CSV pair described in the README."""
    nodes_path, edges_path = Path(nodes_path), Path(edges_path)
    ids, labels, splits, feats = [], [], [], []
    index = {}
    with open(nodes_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["id", "label", "split"]:
            raise ParseError("header must start with id,label,split", nodes_path, 1)
        dim = len(header) - 3
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 3:
                raise ParseError(f"expected {dim + 3} fields, got {len(row)}", nodes_path, lineno)
            nid = row[0].strip()
            if nid in index:
                raise ValidationError(f"duplicate node id {nid!r} at {nodes_path}:{lineno}")
            split = row[2].strip()
            if split not in ("train", "test"):
                raise ParseError(f"split must be train or test, got {split!r}", nodes_path, lineno)
            try:
                label = int(row[1])
                x = [float(v) for v in row[3:]]
            except ValueError as exc:
                raise ParseError(str(exc), nodes_path, lineno) from None
            index[nid] = len(ids)
            ids.append(nid)
            labels.append(label)
            splits.append(split == "train")
            feats.append(x)
    pairs = []
    with open(edges_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["src", "dst"]:
            raise ParseError("header must be src,dst", edges_path, 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", edges_path, lineno)
            a, b = row[0].strip(), row[1].strip()
            missing = [v for v in (a, b) if v not in index]
            if missing:
                raise ValidationError(f"edge at {edges_path}:{lineno} references unknown node id {missing[0]!r}")
            pairs.append((index[a], index[b]))
    X = np.asarray(feats, dtype=float).reshape(len(ids), -1)
    return Graph(X, np.asarray(labels, dtype=np.int64), pairs, np.asarray(splits, dtype=bool), tuple(ids))


def write_graph(g: Graph, nodes_path, edges_path):
    with open(nodes_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "split"] + [f"f{i}" for i in range(g.feature_dim)])
        for i in range(g.num_nodes):
            w.writerow([g.node_ids[i], int(g.labels[i]), "train" if g.train_mask[i] else "test"]
                       + [repr(float(v)) for v in g.features[i]])
    with open(edges_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst"])
        for a, b in g.edges:
            w.writerow([g.node_ids[a], g.node_ids[b]])


# ---------------------------------------------------------------- generation

def generate_sbm(blocks, nodes_per_block, p_in, p_out, feature_dim, feature_noise, seed,
                 train_fraction=0.9) -> Graph:
    """Stochastic block model with centroid-plus-noise features.

    Node ``v`` in block ``b`` has label ``b`` and feature
    ``e_{b mod feature_dim} + feature_noise * N(0, I)``.
    """
    if blocks < 1 or nodes_per_block < 1 or feature_dim < 1:
        raise ArgumentError("blocks, nodes_per_block and feature_dim must be >= 1")
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise ArgumentError(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if feature_noise < 0:
        raise ArgumentError("feature_noise must be non-negative")
    n = blocks * nodes_per_block
    labels = np.repeat(np.arange(blocks), nodes_per_block)
    rng = rng_stream(seed, "sbm-edges")
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(iu.size) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    frng = rng_stream(seed, "sbm-features")
    X = np.zeros((n, feature_dim))
    X[np.arange(n), labels % feature_dim] = 1.0
    X += feature_noise * frng.standard_normal((n, feature_dim))
    mask = _train_mask(n, train_fraction, rng_stream(seed, "sbm-split"))
    return Graph(X, labels, edges, mask, num_classes=blocks)


def _train_mask(n, train_fraction, rng):
    mask = np.zeros(n, dtype=bool)
    mask[rng.permutation(n)[:int(round(train_fraction * n))]] = True
    return mask


# ---------------------------------------------------------------- partition

@dataclass(frozen=True, eq=False)
class PartitionResult:
    shadow: Graph
    target: Graph
    cut_edges: int
    shadow_nodes: np.ndarray = field(default=None)
    target_nodes: np.ndarray = field(default=None)


def _bfs_far(adj, start, allowed):
    dist = {start: 0}
    q = deque([start])
    last = start
    while q:
        u = q.popleft()
        for v in adj.indices[adj.indptr[u]:adj.indptr[u + 1]]:
            if v not in dist and allowed[v]:
                dist[v] = dist[u] + 1
                q.append(v)
                if dist[v] > dist[last] or (dist[v] == dist[last] and v < last):
                    last = v
    return last, dist


def _grow_bisection(g, rng):
    n = g.num_nodes
    adj = g.adjacency
    everyone = np.ones(n, dtype=bool)
    start = int(rng.integers(n))
    a, _ = _bfs_far(adj, start, everyone)
    b, dist_a = _bfs_far(adj, a, everyone)
    others = [v for v in range(n) if v not in dist_a]
    if others:
        # disconnected: unreachable nodes are the farthest possible seeds
        b = others[int(rng.integers(len(others)))]
    elif b == a:
        b = (a + 1) % n
    side = np.full(n, -1, dtype=np.int64)
    sizes = [0, 0]
    want = [n // 2, n - n // 2]
    queues = [deque([a]), deque([b])]
    assigned = 0
    while assigned < n:
        s = 0 if (sizes[0] - want[0]) <= (sizes[1] - want[1]) else 1
        if sizes[s] >= want[s]:
            s = 1 - s
        q = queues[s]
        while q and side[q[0]] != -1:
            q.popleft()
        if not q:
            free = np.flatnonzero(side == -1)
            q.append(int(free[int(rng.integers(free.size))]))
        v = q.popleft()
        side[v] = s
        sizes[s] += 1
        assigned += 1
        for u in adj.indices[adj.indptr[v]:adj.indptr[v + 1]]:
            if side[u] == -1:
                q.append(int(u))
    return side


def _cut_size(g, side):
    e = g.edges
    return int(np.count_nonzero(side[e[:, 0]] != side[e[:, 1]]))


def _fm_refine(g, side, tol, max_passes=10, patience=50):
    """Fiduccia-Mattheyses style single-node moves under a balance bound."""
    adj = g.adjacency
    n = g.num_nodes
    side = side.copy()
    for _ in range(max_passes):
        other = np.asarray(adj @ side.astype(float)).ravel()
        deg = g.degrees
        ext = np.where(side == 1, deg - other, other)
        gain = 2 * ext - deg
        locked = np.zeros(n, dtype=bool)
        sizes = np.array([np.count_nonzero(side == 0), np.count_nonzero(side == 1)])
        moves, total, best, best_at = [], 0.0, 0.0, 0
        while True:
            cand = gain.copy()
            cand[locked] = -np.inf
            for s in (0, 1):
                # one move of slack lets a pass swap nodes across a tight bound
                if abs((sizes[s] - 1) - (sizes[1 - s] + 1)) > tol + 2:
                    cand[side == s] = -np.inf
            v = int(np.argmax(cand))
            if not np.isfinite(cand[v]):
                break
            total += gain[v]
            s = side[v]
            side[v] = 1 - s
            sizes[s] -= 1
            sizes[1 - s] += 1
            locked[v] = True
            moves.append(v)
            gain[v] = -gain[v]
            for u in adj.indices[adj.indptr[v]:adj.indptr[v + 1]]:
                gain[u] += 2 if side[u] == s else -2
            if total > best and abs(sizes[0] - sizes[1]) <= tol:
                best, best_at = total, len(moves)
            elif len(moves) - best_at >= patience:
                break
        for v in moves[best_at:]:
            side[v] = 1 - side[v]
        if best <= 0:
            break
    return side


def partition_shadow_target(g: Graph, seed, balance=0.1, train_fraction=0.9) -> PartitionResult:
    """Balanced two-way split into disconnected shadow and target graphs.

    BFS growth from two far-apart seeds, then boundary refinement to
    reduce the cut while keeping the side sizes within ``balance * n``.
    Each side gets a fresh ``train_fraction`` train/test split.
    """
    n = g.num_nodes
    if n < 4:
        raise ArgumentError("graph needs at least 4 nodes to partition")
    rng = rng_stream(seed, "partition")
    side = _grow_bisection(g, rng)
    tol = max(balance * n, abs(np.count_nonzero(side == 0) - np.count_nonzero(side == 1)))
    side = _fm_refine(g, side, tol)
    shadow_nodes = np.flatnonzero(side == 0)
    target_nodes = np.flatnonzero(side == 1)
    shadow = g.subgraph(shadow_nodes)
    target = g.subgraph(target_nodes)
    shadow = shadow.replace(train_mask=_train_mask(shadow.num_nodes, train_fraction, rng_stream(seed, "shadow-split")))
    target = target.replace(train_mask=_train_mask(target.num_nodes, train_fraction, rng_stream(seed, "target-split")))
    return PartitionResult(shadow, target, _cut_size(g, side), shadow_nodes, target_nodes)


# ---------------------------------------------------------------- propagation

@dataclass(frozen=True, eq=False)
class PropagationMatrix:
    kind: str
    k: int
    alpha: float
    matrix: object  # scipy CSR, or dense ndarray for ppnp

    @property
    def shape(self):
        return self.matrix.shape

    def dense(self):
        return self.matrix.toarray() if sp.issparse(self.matrix) else np.array(self.matrix)

    def __matmul__(self, other):
        return self.matrix @ other

    @property
    def T(self):
        return self.matrix.T


def _sym_normalize(M, deg):
    with np.errstate(divide="ignore"):
        inv = np.where(deg > 0, 1.0 / np.sqrt(deg), 0.0)
    D = sp.diags(inv)
    return (D @ M @ D).tocsr()


def build_propagation(g: Graph, kind="one_gcn", k=2, alpha=0.1) -> PropagationMatrix:
    """Convolution operator ``C`` for the linear/GCN victims.

    ``ppnp`` is ``alpha * (I - (1-alpha) C_1gcn)^{-1}`` (dense), the limit
    of ``k_appnp`` as ``k`` grows.
    """
    if kind not in PROPAGATION_KINDS:
        raise ArgumentError(f"unknown propagation kind {kind!r}; choose from {PROPAGATION_KINDS}")
    if kind in ("k_sgc", "k_appnp") and k < 1:
        raise ArgumentError("k must be >= 1")
    if kind in ("ppnp", "k_appnp") and not (0.0 < alpha <= 1.0):
        raise ArgumentError("alpha must lie in (0, 1]")
    n = g.num_nodes
    A = g.adjacency
    eye = sp.identity(n, format="csr")
    if kind == "normalized_plain":
        return PropagationMatrix(kind, 1, alpha, _sym_normalize(A, g.degrees))
    if kind == "gin":
        return PropagationMatrix(kind, 1, alpha, (A + eye).tocsr())
    C1 = _sym_normalize(A + eye, g.degrees + 1.0)
    if kind == "one_gcn":
        return PropagationMatrix(kind, 1, alpha, C1)
    if kind == "k_sgc":
        C = eye
        for _ in range(k):
            C = C @ C1
        return PropagationMatrix(kind, k, alpha, C.tocsr())
    if kind == "k_appnp":
        acc = alpha * eye
        power = eye
        for l in range(1, k):
            power = power @ C1
            acc = acc + alpha * (1 - alpha) ** l * power
        power = power @ C1
        return PropagationMatrix(kind, k, alpha, (acc + (1 - alpha) ** k * power).tocsr())
    M = np.eye(n) - (1 - alpha) * C1.toarray()
    try:
        inv = np.linalg.solve(M, np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"ppnp system is singular: {exc}") from exc
    if not np.all(np.isfinite(inv)):
        raise NumericError("ppnp inverse is not finite")
    return PropagationMatrix(kind, k, alpha, alpha * inv)


def remove_edges(g: Graph, delta) -> Graph:
    """Copy of ``g`` without the pairs in ``delta``."""
    delta = delta if isinstance(delta, EdgeSet) else EdgeSet(tuple(map(tuple, delta)))
    if len(delta) == 0:
        return g
    missing = [p for p in delta if p not in g.edge_set]
    if missing:
        raise ValidationError(f"edges not present in graph: {missing[:10]}")
    drop = set(delta.pairs)
    keep = np.fromiter((tuple(e) not in drop for e in g.edges.tolist()), dtype=bool, count=g.num_edges)
    return g.replace(edges=g.edges[keep])
