"""Edge-membership attack on unlearned GNNs: partial knowledge gathering,
confidence-trend features, similarity backbones and the trend-corrected
pair scorer."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import distance as ssd

from .errors import ArgumentError, BudgetError, ValidationError
from .numerics import entropy, js_similarity, rng_stream, sigmoid
from .victim import Adam, confidence, glorot

BACKBONES = ("mia_gnn", "steal_link")
TAGS = ("unlearned", "member", "negative")
MAX_BATCH = 32
TREND_BITS = 4


# ---------------------------------------------------------------- query set

@dataclass(frozen=True)
class QuerySet:
    """Node pairs to score, with optional 0/1 labels and subset tags."""

    pairs: tuple
    labels: tuple = None
    tags: tuple = None

    def __post_init__(self):
        pairs = tuple((int(a), int(b)) for a, b in self.pairs)
        for a, b in pairs:
            if a < 0 or b < 0 or a == b:
                raise ValidationError(f"invalid query pair ({a}, {b})")
        object.__setattr__(self, "pairs", pairs)
        n = len(pairs)
        if self.labels is not None:
            labels = tuple(int(v) for v in self.labels)
            if len(labels) != n or any(v not in (0, 1) for v in labels):
                raise ValidationError("labels must be 0/1, one per pair")
            object.__setattr__(self, "labels", labels)
        if self.tags is not None:
            tags = tuple(self.tags)
            if len(tags) != n or any(t not in TAGS for t in tags):
                raise ValidationError(f"tags must be one of {TAGS}, one per pair")
            if self.labels is not None:
                for t, y in zip(tags, self.labels):
                    if (t == "negative") != (y == 0):
                        raise ValidationError(f"tag {t!r} inconsistent with label {y}")
            object.__setattr__(self, "tags", tags)

    def __len__(self):
        return len(self.pairs)

    def endpoints(self):
        return sorted({v for p in self.pairs for v in p})

    def subset(self, tag):
        if self.tags is None:
            raise ValidationError("query set carries no subset tags")
        return [p for p, t in zip(self.pairs, self.tags) if t == tag]

    def counts(self):
        if self.tags is None:
            return {"all": len(self)}
        out = {t: sum(1 for s in self.tags if s == t) for t in TAGS}
        out["all"] = len(self)
        return out

    def to_dict(self):
        return {"pairs": [list(p) for p in self.pairs],
                "labels": None if self.labels is None else list(self.labels),
                "tags": None if self.tags is None else list(self.tags)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(map(tuple, d["pairs"])), d.get("labels"), d.get("tags"))


# ---------------------------------------------------------------- oracle

class LocalOracle:
    """In-process black box: probabilities of a fixed model plus a visible graph.

    ``neighbor_graph`` is the graph whose adjacency neighborhood answers
    reveal; it can differ from the graph the model was evaluated on.
    Budget accounting mirrors the HTTP service: one unit per request,
    batches of at most 32 nodes.
    """

    def __init__(self, probabilities, neighbor_graph, features=None, budget=None,
                 expose_features=True, max_hops=None):
        self.P = np.asarray(probabilities, dtype=float)
        self.graph = neighbor_graph
        self.X = None if features is None else np.asarray(features, dtype=float)
        self.remaining = budget
        self.expose_features = expose_features and self.X is not None
        self.max_hops = max_hops
        self.spent = 0
        self._lock = threading.Lock()

    @property
    def num_nodes(self):
        return self.P.shape[0]

    def _check(self, v):
        if not 0 <= int(v) < self.num_nodes:
            raise ValidationError(f"unknown node {v}")

    def _charge(self):
        with self._lock:
            if self.remaining is not None:
                if self.remaining <= 0:
                    raise BudgetError("query budget exhausted")
                self.remaining -= 1
            self.spent += 1

    def predict(self, nodes):
        nodes = [int(v) for v in nodes]
        if not nodes or len(nodes) > MAX_BATCH:
            raise ArgumentError(f"batch size must be between 1 and {MAX_BATCH}")
        for v in nodes:
            self._check(v)
        self._charge()
        return self.P[nodes].copy()

    def neighbors(self, node, hops=1):
        self._check(node)
        if hops < 0 or (self.max_hops is not None and hops > self.max_hops):
            raise ArgumentError("hops exceeds policy")
        self._charge()
        return _hop_lists(self.graph.adjacency, int(node), hops)

    def features(self, node):
        self._check(node)
        if not self.expose_features:
            return None
        return self.X[int(node)].copy()


def _hop_lists(A, node, hops):
    seen = {node}
    levels = [[node]]
    frontier = [node]
    for _ in range(hops):
        nxt = set()
        for u in frontier:
            for w in A.indices[A.indptr[u]:A.indptr[u + 1]].tolist():
                if w not in seen:
                    nxt.add(w)
        seen |= nxt
        frontier = sorted(nxt)
        levels.append(frontier)
    return levels


# ---------------------------------------------------------------- knowledge

@dataclass
class PartialKnowledge:
    """What the attacker learned from the oracle.

    ``known_neighbors`` holds the neighbor list of every node whose
    neighborhood was requested; ``neighborhoods`` the per-hop lists around
    each query endpoint within the known subgraph.
    """

    hops: int
    probabilities: dict = field(default_factory=dict)
    features: dict = field(default_factory=dict)
    known_neighbors: dict = field(default_factory=dict)
    neighborhoods: dict = field(default_factory=dict)
    endpoints: tuple = ()
    requests: int = 0
    probability_calls: int = 0
    neighbor_calls: int = 0

    def known_nodes(self):
        return sorted(self.probabilities)

    def prob(self, v):
        try:
            return self.probabilities[v]
        except KeyError:
            raise ValidationError(f"no probability knowledge for node {v}") from None

    def to_canonical(self):
        enc = lambda a: [format(float(x), ".17g") for x in np.ravel(a)]
        return {
            "hops": self.hops,
            "endpoints": list(self.endpoints),
            "probabilities": {str(k): enc(v) for k, v in sorted(self.probabilities.items())},
            "features": {str(k): enc(v) for k, v in sorted(self.features.items())},
            "known_neighbors": {str(k): list(v) for k, v in sorted(self.known_neighbors.items())},
            "neighborhoods": {str(k): v for k, v in sorted(self.neighborhoods.items())},
            "requests": self.requests,
            "probability_calls": self.probability_calls,
            "neighbor_calls": self.neighbor_calls,
        }

    def to_json(self):
        return json.dumps(self.to_canonical(), sort_keys=True)


def gather_partial_knowledge(query: QuerySet, oracle, k: int) -> PartialKnowledge:
    """Request features, neighborhoods up to ``k`` hops and probabilities.

    Neighborhoods are expanded one hop at a time so that the edges among
    known nodes are visible; probabilities are then fetched for every node
    within ``k`` hops of an endpoint, in ascending id order and batches of
    32.  On budget exhaustion the :class:`BudgetError` carries the partial
    knowledge gathered so far.
    """
    if k < 0:
        raise ArgumentError("hop count must be non-negative")
    ends = query.endpoints()
    kn = PartialKnowledge(hops=k, endpoints=tuple(ends))
    spent0 = getattr(oracle, "spent", 0)

    def sync():
        kn.requests = getattr(oracle, "spent", 0) - spent0

    try:
        for v in ends:
            x = oracle.features(v)
            if x is not None:
                kn.features[v] = np.asarray(x, dtype=float)
        frontier, seen = list(ends), set(ends)
        for _ in range(k):
            nxt = set()
            for u in frontier:
                if u in kn.known_neighbors:
                    continue
                levels = oracle.neighbors(u, 1)
                kn.neighbor_calls += 1
                nb = tuple(sorted(int(w) for w in levels[1])) if len(levels) > 1 else ()
                kn.known_neighbors[u] = nb
                nxt.update(w for w in nb if w not in seen)
            seen |= nxt
            frontier = sorted(nxt)
        targets = sorted(seen)
        for s in range(0, len(targets), MAX_BATCH):
            batch = targets[s:s + MAX_BATCH]
            P = oracle.predict(batch)
            kn.probability_calls += len(batch)
            for v, p in zip(batch, P):
                kn.probabilities[v] = np.asarray(p, dtype=float)
    except BudgetError as exc:
        sync()
        raise BudgetError(str(exc), partial=kn) from exc
    sync()
    adj = _known_adjacency_lists(kn)
    for v in ends:
        kn.neighborhoods[v] = _bfs_levels(adj, v, k)
    return kn


def _known_adjacency_lists(kn):
    adj = {}
    for u, nb in kn.known_neighbors.items():
        for w in nb:
            adj.setdefault(u, set()).add(w)
            adj.setdefault(w, set()).add(u)
    return adj


def _bfs_levels(adj, v, k):
    seen = {v}
    levels = [[v]]
    frontier = [v]
    for _ in range(k):
        nxt = sorted({w for u in frontier for w in adj.get(u, ()) if w not in seen})
        seen.update(nxt)
        levels.append(nxt)
        frontier = nxt
    return levels


# ---------------------------------------------------------------- trends

@dataclass(frozen=True)
class TrendFeature:
    tau: tuple
    binary: tuple

    def __post_init__(self):
        b = self.binary
        if len(b) != TREND_BITS or (b[0] and b[1]) or (b[2] and b[3]):
            raise ValidationError(f"invalid trend bits {b}")


def known_propagation(kn: PartialKnowledge):
    """``D^-1/2 A D^-1/2`` over the attacker-visible subgraph.

    Returns ``(matrix, node_order)``; degrees count visible edges only.
    """
    nodes = sorted(set(kn.probabilities) | set(kn.known_neighbors)
                   | {w for nb in kn.known_neighbors.values() for w in nb})
    index = {v: i for i, v in enumerate(nodes)}
    rows, cols = [], []
    for u, nb in kn.known_neighbors.items():
        for w in nb:
            rows += [index[u], index[w]]
            cols += [index[w], index[u]]
    n = len(nodes)
    A = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    A.sum_duplicates()
    A.data[:] = 1.0  # an edge seen from both endpoints counts once
    deg = np.asarray(A.sum(axis=1)).ravel()
    inv = np.zeros(n)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    D = sp.diags(inv)
    return (D @ A @ D).tocsr(), index


def compute_trends(kn: PartialKnowledge, k=None, self_recursion=False, nodes=None):
    """Trend features for ``nodes`` (default: the query endpoints).

    ``tau[0]`` is the node's confidence and ``tau[r]`` propagates the
    previous order over visible neighbors with normalized weights.  Nodes
    without probability knowledge contribute zero.  Indicator bits for
    orders above ``k`` are left at zero.  With ``self_recursion`` each
    order reuses the node's own previous value (``tau[r] = s_i tau[r-1]``
    where ``s_i`` is the row sum of the weights).
    """
    k = kn.hops if k is None else k
    nodes = list(kn.endpoints) if nodes is None else list(nodes)
    M, index = known_propagation(kn)
    conf = np.zeros(len(index))
    for v, p in kn.probabilities.items():
        conf[index[v]] = confidence(p)
    order = max(k, 2)
    taus = [conf]
    rowsum = np.asarray(M.sum(axis=1)).ravel()
    for _ in range(order):
        taus.append(rowsum * taus[-1] if self_recursion else M @ taus[-1])
    T = np.stack(taus, axis=1)
    out = {}
    for v in nodes:
        if v not in kn.probabilities:
            raise ValidationError(f"no probability knowledge for node {v}")
        tau = T[index[v], :k + 1]
        full = T[index[v]]
        bits = [0, 0, 0, 0]
        for r in (1, 2):
            if r > k:
                continue
            d = full[r] - full[r - 1]
            bits[2 * (r - 1)] = int(d < 0)
            bits[2 * (r - 1) + 1] = int(d > 0)
        out[v] = TrendFeature(tuple(float(t) for t in tau), tuple(bits))
    return out


def trend_features(node, kn: PartialKnowledge, k=None, self_recursion=False) -> TrendFeature:
    return compute_trends(kn, k, self_recursion, nodes=[node])[node]


# ---------------------------------------------------------------- backbones

STEAL_METRICS = ("cosine", "euclidean", "correlation", "chebyshev", "braycurtis", "canberra",
                 "cityblock", "sqeuclidean")


def _safe_distance(metric, a, b):
    if metric in ("cosine", "correlation"):
        ca = a - a.mean() if metric == "correlation" else a
        cb = b - b.mean() if metric == "correlation" else b
        if not np.any(ca) or not np.any(cb):
            return 0.0 if np.array_equal(a, b) else 1.0
    if metric == "braycurtis" and not np.any(a + b):
        return 0.0
    d = float(getattr(ssd, metric)(a, b))
    return d if np.isfinite(d) else 0.0


def pair_distances(a, b):
    """The eight distances used by the link-stealing backbone."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ArgumentError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return np.array([_safe_distance(m, a, b) for m in STEAL_METRICS])


def steal_link_features(x_i, x_j, p_i, p_j):
    """19 pair features: 8 feature distances, 8 posterior distances,
    both entropies, JS similarity."""
    p_i = np.asarray(p_i, dtype=float)
    p_j = np.asarray(p_j, dtype=float)
    return np.concatenate([pair_distances(x_i, x_j), pair_distances(p_i, p_j),
                           [entropy(p_i), entropy(p_j), js_similarity(p_i, p_j)]])


def mia_features(p_i, p_j, abs_channel=True):
    p_i = np.asarray(p_i, dtype=float)
    p_j = np.asarray(p_j, dtype=float)
    if p_i.shape != p_j.shape:
        raise ArgumentError(f"dimension mismatch: {p_i.shape} vs {p_j.shape}")
    parts = [p_i, p_j, np.abs(p_i - p_j)] if abs_channel else [p_i, p_j]
    return np.concatenate(parts)


@dataclass(frozen=True, eq=False)
class MLPParams:
    """Two-layer perceptron ``relu(z W1 + b1) w2 + b2``."""

    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float = 0.0

    @classmethod
    def init(cls, rng, din, hidden=64):
        return cls(glorot(rng, din, hidden), np.zeros(hidden), glorot(rng, hidden, 1).ravel(), 0.0)

    @classmethod
    def zeros(cls, din, hidden=64):
        return cls(np.zeros((din, hidden)), np.zeros(hidden), np.zeros(hidden), 0.0)

    def __call__(self, Z):
        Z = np.asarray(Z, dtype=float)
        if Z.shape[-1] != self.W1.shape[0]:
            raise ArgumentError(f"dimension mismatch: input has {Z.shape[-1]}, expected {self.W1.shape[0]}")
        return np.maximum(Z @ self.W1 + self.b1, 0.0) @ self.w2 + self.b2


def backbone_score_mia(p_i, p_j, params: MLPParams, abs_channel=True) -> float:
    return float(params(mia_features(p_i, p_j, abs_channel)))


def backbone_score_steal(x_i, x_j, p_i, p_j, params: MLPParams, mean=None, std=None) -> float:
    z = steal_link_features(x_i, x_j, p_i, p_j)
    if mean is not None:
        z = (z - mean) / std
    return float(params(z))


# ---------------------------------------------------------------- model

@dataclass(frozen=True)
class AttackConfig:
    backbone: str = "steal_link"
    hops: int = 2
    use_trend: bool = True
    trend_self_recursion: bool = False
    abs_channel: bool = True
    hidden: int = 64
    epochs: int = 300
    learning_rate: float = 0.01
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ArgumentError(f"unknown backbone {self.backbone!r}; choose from {BACKBONES}")
        if self.hops < 0 or self.hidden < 1 or self.epochs < 0:
            raise ArgumentError("hops must be >= 0, hidden >= 1, epochs >= 0")


@dataclass(frozen=True, eq=False)
class AttackModel:
    """Sigmoid of a backbone logit plus ``h . [bits_i || bits_j]``."""

    backbone: str
    mlp: MLPParams
    h: np.ndarray
    mean: np.ndarray = None
    std: np.ndarray = None
    abs_channel: bool = True
    hops: int = 2
    trend_self_recursion: bool = False
    trained: bool = False

    def __post_init__(self):
        if np.shape(self.h) != (2 * TREND_BITS,):
            raise ValidationError("trend weight h must have length 8")

    def to_dict(self):
        enc = lambda a: None if a is None else [format(float(v), ".17g") for v in np.ravel(a)]
        return {
            "backbone": self.backbone, "hops": self.hops, "trained": self.trained,
            "abs_channel": self.abs_channel, "trend_self_recursion": self.trend_self_recursion,
            "W1_shape": list(self.mlp.W1.shape), "W1": enc(self.mlp.W1), "b1": enc(self.mlp.b1),
            "w2": enc(self.mlp.w2), "b2": format(float(self.mlp.b2), ".17g"),
            "h": enc(self.h), "mean": enc(self.mean), "std": enc(self.std),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text) if isinstance(text, str) else text
        dec = lambda a: None if a is None else np.array([float(v) for v in a])
        mlp = MLPParams(dec(d["W1"]).reshape(d["W1_shape"]), dec(d["b1"]), dec(d["w2"]), float(d["b2"]))
        return cls(d["backbone"], mlp, dec(d["h"]), dec(d["mean"]), dec(d["std"]), d["abs_channel"],
                   d["hops"], d["trend_self_recursion"], d["trained"])


def pair_feature_matrix(pairs, kn: PartialKnowledge, backbone, abs_channel=True):
    rows = []
    for i, j in pairs:
        p_i, p_j = kn.prob(i), kn.prob(j)
        if backbone == "mia_gnn":
            rows.append(mia_features(p_i, p_j, abs_channel))
        else:
            if i not in kn.features or j not in kn.features:
                raise ValidationError(f"steal_link needs features for pair ({i}, {j})")
            rows.append(steal_link_features(kn.features[i], kn.features[j], p_i, p_j))
    return np.asarray(rows, dtype=float)


def trend_bit_matrix(pairs, trends, enabled=True):
    T = np.zeros((len(pairs), 2 * TREND_BITS))
    if enabled:
        for r, (i, j) in enumerate(pairs):
            T[r, :TREND_BITS] = trends[i].binary
            T[r, TREND_BITS:] = trends[j].binary
    return T


def attack_logits(model: AttackModel, F, T):
    Z = F if model.mean is None else (F - model.mean) / model.std
    return model.mlp(Z) + T @ model.h


def attack_score(pair, kn: PartialKnowledge, model: AttackModel, trends) -> float:
    F = pair_feature_matrix([pair], kn, model.backbone, model.abs_channel)
    T = trend_bit_matrix([pair], trends)
    return float(sigmoid(attack_logits(model, F, T))[0])


# ---------------------------------------------------------------- training

def attack_loss_and_grad(theta_parts, Z, T, y):
    """Summed binary cross-entropy of ``sigmoid(mlp(Z) + T h)`` and its gradient.

    ``theta_parts`` is ``(MLPParams, h)``; returns ``(loss, (MLPParams, h))``.
    """
    mlp, h = theta_parts
    pre = Z @ mlp.W1 + mlp.b1
    act = np.maximum(pre, 0.0)
    z = act @ mlp.w2 + mlp.b2 + T @ h
    loss = float(np.sum(np.logaddexp(0.0, z) - y * z))
    dz = sigmoid(z) - y
    dw2 = act.T @ dz
    db2 = float(dz.sum())
    dpre = np.outer(dz, mlp.w2) * (pre > 0)
    dW1 = Z.T @ dpre
    db1 = dpre.sum(axis=0)
    dh = T.T @ dz
    return loss, (MLPParams(dW1, db1, dw2, db2), dh)


def _pack(mlp, h):
    return np.concatenate([mlp.W1.ravel(), mlp.b1, mlp.w2, [mlp.b2], h])


def _unpack(theta, din, hidden):
    a = din * hidden
    W1 = theta[:a].reshape(din, hidden)
    b1 = theta[a:a + hidden]
    w2 = theta[a + hidden:a + 2 * hidden]
    b2 = float(theta[a + 2 * hidden])
    h = theta[a + 2 * hidden + 1:]
    return MLPParams(W1, b1, w2, b2), h


def fit_attack_model(F, T, y, cfg: AttackConfig, history=None) -> AttackModel:
    """Full-batch Adam on the summed pair cross-entropy.

    ``h`` stays at zero when ``cfg.use_trend`` is off.  Features of the
    link-stealing backbone are standardized with statistics of ``F``.
    """
    F = np.asarray(F, dtype=float)
    T = np.asarray(T, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(np.unique(y)) < 2:
        raise ValidationError("attack training needs both member and non-member pairs")
    mean = std = None
    if cfg.backbone == "steal_link":
        mean = F.mean(axis=0)
        std = F.std(axis=0)
        std[std == 0] = 1.0
        Z = (F - mean) / std
    else:
        Z = F
    din = Z.shape[1]
    rng = rng_stream(cfg.seed, "attack-init")
    mlp = MLPParams.init(rng, din, cfg.hidden)
    theta = _pack(mlp, np.zeros(2 * TREND_BITS))
    opt = Adam(cfg.learning_rate, weight_decay=cfg.weight_decay)
    for _ in range(cfg.epochs):
        m, h = _unpack(theta, din, cfg.hidden)
        loss, (gm, gh) = attack_loss_and_grad((m, h), Z, T, y)
        if history is not None:
            history.append(loss)
        if not cfg.use_trend:
            gh = np.zeros_like(gh)
        new = opt.step(theta, _pack(gm, gh))
        if not cfg.use_trend:
            new[-2 * TREND_BITS:] = 0.0
        theta = new
    if history is not None:
        m, h = _unpack(theta, din, cfg.hidden)
        history.append(attack_loss_and_grad((m, h), Z, T, y)[0])
    m, h = _unpack(theta, din, cfg.hidden)
    return AttackModel(cfg.backbone, m, h.copy(), mean, std, cfg.abs_channel, cfg.hops,
                       cfg.trend_self_recursion, trained=True)


def score_pairs(model: AttackModel, query: QuerySet, kn: PartialKnowledge, trends=None):
    if trends is None:
        trends = compute_trends(kn, model.hops, model.trend_self_recursion)
    F = pair_feature_matrix(query.pairs, kn, model.backbone, model.abs_channel)
    T = trend_bit_matrix(query.pairs, trends)
    return sigmoid(attack_logits(model, F, T))


@dataclass
class AttackResult:
    scores: np.ndarray
    requests: int
    knowledge: PartialKnowledge


def run_attack(model: AttackModel, query: QuerySet, oracle, k=None) -> AttackResult:
    """Gather knowledge through ``oracle`` and score every query pair."""
    k = model.hops if k is None else k
    kn = gather_partial_knowledge(query, oracle, k)
    trends = compute_trends(kn, k, model.trend_self_recursion)
    return AttackResult(score_pairs(model, query, kn, trends), kn.requests, kn)


def train_attack(shadow, victim_cfg, unlearn_cfg, model_cfg: AttackConfig, seed, member_fraction=0.05,
                 arch="gcn", c_builder=None, history=None):
    """Train the scorer on a shadow graph whose victim has itself unlearned edges.

    Returns ``(AttackModel, ShadowRun)``.
    """
    from .pipeline import victim_stage, attack_oracle
    from .evaluation import build_query_set

    run = victim_stage(shadow, victim_cfg, unlearn_cfg, seed, arch=arch, c_builder=c_builder,
                       stream="shadow")
    query = build_query_set(shadow, run.delta, member_fraction, seed, stream="shadow")
    oracle = attack_oracle(run, query)
    kn = gather_partial_knowledge(query, oracle, model_cfg.hops)
    trends = compute_trends(kn, model_cfg.hops, model_cfg.trend_self_recursion)
    F = pair_feature_matrix(query.pairs, kn, model_cfg.backbone, model_cfg.abs_channel)
    T = trend_bit_matrix(query.pairs, trends)
    model = fit_attack_model(F, T, np.asarray(query.labels), model_cfg, history)
    return model, ShadowData(run, query, kn, F, T)


@dataclass
class ShadowData:
    run: object
    query: QuerySet
    knowledge: PartialKnowledge
    features: np.ndarray
    trend_bits: np.ndarray


# ---------------------------------------------------------------- hard-label baseline

ALPHA_GRID = tuple(round(0.05 * i, 2) for i in range(21))


def group_threshold_scores(query: QuerySet, kn: PartialKnowledge, alpha):
    """1 when both endpoints share the predicted class and both confidences reach ``alpha``."""
    out = np.zeros(len(query))
    for r, (i, j) in enumerate(query.pairs):
        p_i, p_j = kn.prob(i), kn.prob(j)
        same = np.argmax(p_i) == np.argmax(p_j)
        out[r] = float(same and min(confidence(p_i), confidence(p_j)) >= alpha)
    return out


def fit_group_threshold(query: QuerySet, kn: PartialKnowledge, grid=ALPHA_GRID):
    """Threshold maximizing accuracy on labeled shadow pairs; ties go to the smaller value."""
    if query.labels is None:
        raise ValidationError("threshold search needs labeled pairs")
    y = np.asarray(query.labels)
    best_alpha, best_acc = None, -1.0
    for a in sorted(grid):
        acc = float(np.mean(group_threshold_scores(query, kn, a) == y))
        if acc > best_acc:
            best_alpha, best_acc = a, acc
    return best_alpha, best_acc


def group_threshold_attack(query: QuerySet, kn: PartialKnowledge, alpha=None, shadow=None,
                           grid=ALPHA_GRID):
    """Hard-label baseline; ``alpha`` is searched on ``shadow=(query, knowledge)`` if not given."""
    if alpha is None:
        if shadow is None:
            raise ArgumentError("give alpha or shadow data for the threshold search")
        alpha, _ = fit_group_threshold(shadow[0], shadow[1], grid)
    return group_threshold_scores(query, kn, alpha)
