"""End-to-end experiment: partition, shadow training, target unlearning, attack, report."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .attack import (AttackConfig, LocalOracle, QuerySet, compute_trends, fit_group_threshold,
                     gather_partial_knowledge, group_threshold_scores, score_pairs, train_attack)
from .errors import ArgumentError, ValidationError
from .evaluation import (EvalReport, build_query_set, confidence_pitfall_study, grouped_auc,
                         prob_sim_study)
from .graph import EdgeSet, Graph, generate_sbm, load_graph, partition_shadow_target, remove_edges, write_graph
from .numerics import rng_stream
from .unlearn import UnlearnRequest, propagation_builder, unlearn
from .victim import (GcnParams, TrainConfig, gcn_train, linear_gcn_fit, params_to_json, predict_proba)


@dataclass(frozen=True)
class VictimConfig:
    arch: str = "gcn"
    propagation: str = "one_gcn"
    k: int = 2
    alpha: float = 0.1
    epochs: int = 100
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    hidden: int = 16
    linear_damping: float = 1e-6

    def __post_init__(self):
        if self.arch not in ("gcn", "linear"):
            raise ArgumentError("victim arch must be 'gcn' or 'linear'")

    def train_config(self, seed):
        return TrainConfig(self.epochs, self.learning_rate, self.weight_decay, self.hidden, seed=seed)

    def builder(self):
        return propagation_builder(self.propagation, self.k, self.alpha)


@dataclass(frozen=True)
class UnlearnConfig:
    method: str = "gif"
    edge_fraction: float = 0.05
    scale_lambda: float = None
    estimation_iters: int = 100
    damping: float = 0.0
    noise_std: float = 0.01
    ga_epochs: int = 1
    ga_magnitude: float = 0.5
    ga_scope: str = "endpoints"
    ga_reduction: str = "mean"

    def __post_init__(self):
        if not 0 < self.edge_fraction < 1:
            raise ArgumentError("edge_fraction must lie in (0, 1)")

    def request(self, delta, seed):
        return UnlearnRequest(delta, self.method, self.scale_lambda, self.estimation_iters, self.damping,
                              self.noise_std, self.ga_epochs, self.ga_magnitude, self.ga_scope, seed,
                              self.ga_reduction)


@dataclass(frozen=True)
class EvalConfig:
    member_fraction: float = 0.05


def _from_dict(cls, d):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ArgumentError(f"unknown {cls.__name__} keys: {unknown}")
    return cls(**d)


@dataclass(frozen=True)
class RunConfig:
    dataset: dict
    victim: VictimConfig = VictimConfig()
    unlearn: UnlearnConfig = UnlearnConfig()
    attack: AttackConfig = AttackConfig()
    eval: EvalConfig = EvalConfig()
    seed: int = 0
    output: str = None

    @classmethod
    def from_dict(cls, d, base_dir=None):
        d = dict(d)
        unknown = sorted(set(d) - {"dataset", "victim", "unlearn", "attack", "eval", "seed", "output"})
        if unknown:
            raise ArgumentError(f"unknown config keys: {unknown}")
        if "dataset" not in d:
            raise ArgumentError("config needs a 'dataset' section")
        if "seed" not in d:
            raise ArgumentError("config needs an explicit 'seed'")
        ds = dict(d["dataset"])
        if base_dir is not None:
            for key in ("nodes", "edges"):
                if key in ds and not Path(ds[key]).is_absolute():
                    ds[key] = str(Path(base_dir) / ds[key])
        seed = int(d["seed"])
        att = dict(d.get("attack") or {})
        att.setdefault("seed", seed)
        return cls(ds, _from_dict(VictimConfig, d.get("victim")), _from_dict(UnlearnConfig, d.get("unlearn")),
                   _from_dict(AttackConfig, att), _from_dict(EvalConfig, d.get("eval")), seed, d.get("output"))

    def to_dict(self):
        return {"dataset": self.dataset, "victim": asdict(self.victim), "unlearn": asdict(self.unlearn),
                "attack": asdict(self.attack), "eval": asdict(self.eval), "seed": self.seed}


def load_dataset(spec: dict) -> Graph:
    if "sbm" in spec:
        p = dict(spec["sbm"])
        return generate_sbm(p.pop("blocks"), p.pop("nodes_per_block"), p.pop("p_in"), p.pop("p_out"),
                            p.pop("feature_dim"), p.pop("feature_noise"), p.pop("seed"), **p)
    if "nodes" in spec and "edges" in spec:
        for key in ("nodes", "edges"):
            if not Path(spec[key]).is_file():
                raise ValidationError(f"{key} file not found: {spec[key]}")
        return load_graph(spec["nodes"], spec["edges"])
    raise ArgumentError("dataset needs either 'sbm' parameters or 'nodes'/'edges' paths")


# ---------------------------------------------------------------- stages

@dataclass(eq=False)
class VictimRun:
    graph: Graph
    params_orig: object
    delta: EdgeSet
    unlearned: object
    probabilities: np.ndarray

    @property
    def graph_un(self):
        return self.unlearned.graph


def select_delta(g: Graph, fraction, seed, stream=""):
    m = max(1, int(round(fraction * g.num_edges)))
    rng = rng_stream(seed, f"{stream}-delta-select" if stream else "delta-select")
    pick = np.sort(rng.choice(g.num_edges, size=m, replace=False))
    return EdgeSet(tuple(map(tuple, g.edges[pick].tolist())))


def train_victim(g, victim_cfg: VictimConfig, seed, C=None):
    C = victim_cfg.builder()(g) if C is None else C
    if victim_cfg.arch == "linear":
        return linear_gcn_fit(g, C, damping=victim_cfg.linear_damping), C
    return gcn_train(g, C, victim_cfg.train_config(seed)), C


def victim_stage(g, victim_cfg, unlearn_cfg, seed, arch=None, c_builder=None, stream="", delta=None):
    """Train on ``g``, pick the edges to forget, unlearn them."""
    if isinstance(victim_cfg, TrainConfig):
        victim_cfg = VictimConfig(arch=arch or "gcn", epochs=victim_cfg.epochs,
                                  learning_rate=victim_cfg.learning_rate,
                                  weight_decay=victim_cfg.weight_decay, hidden=victim_cfg.hidden)
    builder = c_builder or victim_cfg.builder()
    params, C = train_victim(g, victim_cfg, seed, builder(g))
    if delta is None:
        delta = select_delta(g, unlearn_cfg.edge_fraction, seed, stream)
    request = unlearn_cfg.request(delta, seed)
    model = unlearn(params, g, C, builder, request, cfg=victim_cfg.train_config(seed),
                    arch=victim_cfg.arch)
    P = predict_proba(model.graph, model.propagation, model.params)
    return VictimRun(g, params, delta, model, P)


def visible_graph(g_un: Graph, query: QuerySet) -> Graph:
    """``g_un`` without the member pairs under test, so neighborhoods cannot leak labels."""
    hidden = EdgeSet(tuple(p for p in query.subset("member") if g_un.has_edge(*p)))
    return remove_edges(g_un, hidden)


def attack_oracle(run: VictimRun, query: QuerySet, budget=None, expose_features=True):
    return LocalOracle(run.probabilities, visible_graph(run.graph_un, query), run.graph.features,
                       budget=budget, expose_features=expose_features)


@dataclass
class PipelineResult:
    report: EvalReport
    shadow_model: object
    bare_model: object
    target: VictimRun
    query: QuerySet
    scores: dict
    alpha: float
    split: object = field(default=None)


def run_pipeline(cfg: RunConfig, stage_hook=None) -> PipelineResult:
    """Run every stage; ``stage_hook(name)`` is called as each one starts."""
    hook = stage_hook or (lambda name: None)
    hook("dataset")
    g = load_dataset(cfg.dataset)
    hook("partition")
    split = partition_shadow_target(g, cfg.seed)
    builder = cfg.victim.builder()
    hook("shadow")
    trend_model, shadow = train_attack(split.shadow, cfg.victim, cfg.unlearn, cfg.attack, cfg.seed,
                                       cfg.eval.member_fraction, c_builder=builder)
    bare_cfg = AttackConfig(**{**asdict(cfg.attack), "use_trend": False})
    from .attack import fit_attack_model
    bare_model = fit_attack_model(shadow.features, np.zeros_like(shadow.trend_bits),
                                  np.asarray(shadow.query.labels), bare_cfg)
    alpha, _ = fit_group_threshold(shadow.query, shadow.knowledge)
    hook("target")
    target = victim_stage(split.target, cfg.victim, cfg.unlearn, cfg.seed, c_builder=builder, stream="target")
    hook("query")
    query = build_query_set(split.target, target.delta, cfg.eval.member_fraction, cfg.seed, stream="target")
    hook("attack")
    oracle = attack_oracle(target, query)
    kn = gather_partial_knowledge(query, oracle, cfg.attack.hops)
    trends = compute_trends(kn, cfg.attack.hops, cfg.attack.trend_self_recursion)
    scores = {
        "trend_attack": score_pairs(trend_model, query, kn, trends),
        "backbone": score_pairs(bare_model, query, kn, trends),
        "group_threshold": group_threshold_scores(query, kn, alpha),
    }
    hook("evaluate")
    aucs = {name: grouped_auc(s, query) for name, s in scores.items()}
    pitfall = confidence_pitfall_study(target.graph_un, target.delta, target.probabilities)
    report = EvalReport(
        auc=aucs,
        prob_sim=prob_sim_study(kn, query),
        confidence_by_distance=pitfall,
        query_counts=query.counts(),
        oracle_requests={"requests": kn.requests, "probability_calls": kn.probability_calls,
                         "neighbor_calls": kn.neighbor_calls},
        config=cfg.to_dict(),
        extra={"group_threshold_alpha": alpha,
               "trend_weight": [round(float(v), 12) for v in trend_model.h],
               "shadow_nodes": split.shadow.num_nodes, "target_nodes": split.target.num_nodes,
               "cut_edges": split.cut_edges},
    )
    return PipelineResult(report, trend_model, bare_model, target, query, scores, alpha, split)


def write_outputs(result: PipelineResult, outdir):
    out = Path(outdir)
    (out / "artifacts").mkdir(parents=True, exist_ok=True)
    r = result.report
    (out / "report.json").write_text(r.to_json())
    (out / "report.txt").write_text(r.to_text())
    (out / "similarity.csv").write_text(r.similarity_csv())
    (out / "pitfall.csv").write_text(r.pitfall_csv())
    art = out / "artifacts"
    t = result.target
    write_graph(t.graph_un, art / "target_nodes.csv", art / "target_edges.csv")
    vis = visible_graph(t.graph_un, result.query)
    (art / "visible_edges.csv").write_text(
        "src,dst\n" + "".join(f"{vis.node_ids[a]},{vis.node_ids[b]}\n" for a, b in vis.edges.tolist()))
    (art / "unlearned_params.json").write_text(params_to_json(t.unlearned.params) + "\n")
    (art / "attack_model.json").write_text(result.shadow_model.to_json() + "\n")
    (art / "backbone_model.json").write_text(result.bare_model.to_json() + "\n")
    (art / "query.json").write_text(json.dumps(result.query.to_dict(), sort_keys=True) + "\n")
    victim = r.config["victim"]
    (art / "victim.json").write_text(json.dumps(
        {"propagation": victim["propagation"], "k": victim["k"], "alpha": victim["alpha"],
         "hops": r.config["attack"]["hops"]}, sort_keys=True) + "\n")
    return out
