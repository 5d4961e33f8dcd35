"""Query-set construction, AUC metrics and the similarity / confidence studies."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .attack import TAGS, PartialKnowledge, QuerySet
from .errors import ArgumentError, ValidationError
from .graph import EdgeSet, Graph
from .numerics import js_similarity, rng_stream
from .victim import confidence


def _stream(seed, stream, label):
    return rng_stream(seed, f"{stream}-{label}" if stream else label)


def sample_non_edges(g: Graph, count, rng, exclude=()):
    """``count`` distinct node pairs that are neither edges nor in ``exclude``."""
    n = g.num_nodes
    blocked = set(g.edge_set) | set(exclude)
    available = n * (n - 1) // 2 - len(blocked)
    if count > available:
        raise ValidationError(f"need {count} non-edges but only {available} exist")
    if 2 * count > available:
        # dense graph: rejection sampling would crawl, enumerate instead
        iu, ju = np.triu_indices(n, 1)
        pool = [p for p in zip(iu.tolist(), ju.tolist()) if p not in blocked]
        return [pool[i] for i in rng.choice(len(pool), size=count, replace=False).tolist()]
    out, seen = [], set()
    while len(out) < count:
        a, b = rng.integers(0, n, size=2).tolist()
        if a == b:
            continue
        p = (a, b) if a < b else (b, a)
        if p in blocked or p in seen:
            continue
        seen.add(p)
        out.append(p)
    return out


def build_query_set(g_orig: Graph, delta, member_fraction=0.05, seed=0, stream="") -> QuerySet:
    """Unlearned edges, an equal-rate sample of retained edges, and as many non-edges."""
    if not 0 < member_fraction <= 0.5:
        raise ArgumentError("member_fraction must lie in (0, 0.5]")
    delta = delta if isinstance(delta, EdgeSet) else EdgeSet(tuple(map(tuple, delta)))
    missing = [p for p in delta if p not in g_orig.edge_set]
    if missing:
        raise ValidationError(f"unlearned pairs are not edges: {missing[:10]}")
    drop = set(delta.pairs)
    remaining = [tuple(e) for e in g_orig.edges.tolist() if tuple(e) not in drop]
    m = max(1, int(round(member_fraction * g_orig.num_edges)))
    if m > len(remaining):
        raise ValidationError(f"need {m} member edges but only {len(remaining)} remain")
    pick = _stream(seed, stream, "members").choice(len(remaining), size=m, replace=False)
    members = [remaining[i] for i in sorted(pick.tolist())]
    negatives = sample_non_edges(g_orig, len(delta) + m, _stream(seed, stream, "negatives"))
    pairs = list(delta.pairs) + members + negatives
    tags = ["unlearned"] * len(delta) + ["member"] * m + ["negative"] * len(negatives)
    labels = [0 if t == "negative" else 1 for t in tags]
    return QuerySet(tuple(pairs), tuple(labels), tuple(tags))


# ---------------------------------------------------------------- AUC

def auc(scores, labels) -> float:
    """Mann-Whitney AUC with ties counted one half."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ArgumentError("scores and labels differ in length")
    pos = int(np.sum(y == 1))
    neg = int(np.sum(y == 0))
    if pos == 0 or neg == 0:
        raise ValidationError("AUC needs at least one positive and one negative")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - pos * (pos + 1) / 2.0) / (pos * neg))


def auc_pairwise(scores, labels) -> float:
    """Quadratic reference definition."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    P, N = s[y == 1], s[y == 0]
    if P.size == 0 or N.size == 0:
        raise ValidationError("AUC needs at least one positive and one negative")
    wins = np.sum(P[:, None] > N[None, :]) + 0.5 * np.sum(P[:, None] == N[None, :])
    return float(wins / (P.size * N.size))


def grouped_auc(scores, query: QuerySet):
    """AUC on unlearned-vs-negative, member-vs-negative and the full set."""
    if query.tags is None:
        raise ValidationError("grouped AUC needs subset tags")
    s = np.asarray(scores, dtype=float)
    tags = np.asarray(query.tags)
    y = np.asarray(query.labels)
    out = {}
    for name, tag in (("unlearned", "unlearned"), ("original", "member")):
        mask = (tags == tag) | (tags == "negative")
        if not np.any(tags == tag):
            raise ValidationError(f"group {name!r} is empty")
        out[name] = auc(s[mask], y[mask])
    out["all"] = auc(s, y)
    return out


# ---------------------------------------------------------------- studies

def prob_sim_study(kn: PartialKnowledge, query: QuerySet):
    """Mean and std of JS similarity between endpoint posteriors, per subset."""
    if query.tags is None:
        raise ValidationError("similarity study needs subset tags")
    out = {}
    for tag in TAGS:
        pairs = query.subset(tag)
        if not pairs:
            raise ValidationError(f"subset {tag!r} is empty")
        sims = np.array([js_similarity(kn.prob(i), kn.prob(j)) for i, j in pairs])
        out[tag] = {"mean": float(np.mean(sims)), "std": float(np.std(sims)), "count": len(pairs)}
    return out


def confidence_pitfall_study(g_un: Graph, delta, probabilities):
    """Mean confidence grouped by hop distance to the nearest unlearned endpoint.

    Unreachable nodes go under the key ``"inf"``; other keys are ints.
    """
    delta = delta if isinstance(delta, EdgeSet) else EdgeSet(tuple(map(tuple, delta)))
    if len(delta) == 0:
        raise ValidationError("confidence study needs at least one unlearned edge")
    P = np.asarray(probabilities, dtype=float)
    if P.shape[0] != g_un.num_nodes:
        raise ArgumentError("need one probability row per node")
    dist = g_un.distances_from(delta.endpoints())
    conf = confidence(P)
    out = {}
    finite = np.isfinite(dist)
    for d in np.unique(dist[finite]).astype(int).tolist():
        sel = dist == d
        out[d] = {"mean": float(conf[sel].mean()), "count": int(sel.sum())}
    if not finite.all():
        out["inf"] = {"mean": float(conf[~finite].mean()), "count": int((~finite).sum())}
    return out


def pitfall_gap(curve):
    """``(mean at distance 0, mean over reachable distances >= 1)``, count weighted."""
    near = curve[0]["mean"]
    far = [(v["mean"], v["count"]) for k, v in curve.items() if k != "inf" and k >= 1]
    if not far:
        return near, math.nan
    tot = sum(c for _, c in far)
    return near, sum(m * c for m, c in far) / tot


# ---------------------------------------------------------------- report

@dataclass
class EvalReport:
    auc: dict
    prob_sim: dict
    confidence_by_distance: dict
    query_counts: dict
    oracle_requests: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for attack, groups in self.auc.items():
            for g, v in groups.items():
                if not 0.0 <= v <= 1.0:
                    raise ValidationError(f"AUC {attack}/{g} = {v} outside [0, 1]")

    def to_dict(self):
        return {
            "auc": self.auc,
            "prob_sim": self.prob_sim,
            "confidence_by_distance": {str(k): v for k, v in self.confidence_by_distance.items()},
            "query_counts": self.query_counts,
            "oracle_requests": self.oracle_requests,
            "config": self.config,
            **({"extra": self.extra} if self.extra else {}),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_text(self):
        name_w = max([len("attack")] + [len(a) for a in self.auc])
        lines = [f"{'attack':<{name_w}}  {'Unlearned':>9}  {'Original':>9}  {'All':>9}"]
        for attack, g in self.auc.items():
            lines.append(f"{attack:<{name_w}}  {g['unlearned']:>9.4f}  {g['original']:>9.4f}  {g['all']:>9.4f}")
        lines.append("")
        lines.append(f"{'subset':<10}  {'ProbSim':>8}  {'std':>8}  {'count':>6}")
        for tag in TAGS:
            s = self.prob_sim[tag]
            lines.append(f"{tag:<10}  {s['mean']:>8.4f}  {s['std']:>8.4f}  {s['count']:>6d}")
        return "\n".join(lines) + "\n"

    def similarity_csv(self):
        rows = ["subset,mean,std,count"]
        rows += [f"{t},{self.prob_sim[t]['mean']:.17g},{self.prob_sim[t]['std']:.17g},{self.prob_sim[t]['count']}"
                 for t in TAGS]
        return "\n".join(rows) + "\n"

    def pitfall_csv(self):
        rows = ["distance,mean_confidence,count"]
        for k, v in self.confidence_by_distance.items():
            rows.append(f"{k},{v['mean']:.17g},{v['count']}")
        return "\n".join(rows) + "\n"
