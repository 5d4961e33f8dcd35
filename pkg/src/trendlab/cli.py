"""Command-line entry point: ``trendlab <subcommand> ...``.

Exit codes: 0 ok, 1 validation failure, 2 input error, 3 transport
error, 4 budget or authentication error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import (ArgumentError, AuthError, BudgetError, NumericError, TransportError,
                     ValidationError)

EXIT_OK, EXIT_VALIDATION, EXIT_INPUT, EXIT_TRANSPORT, EXIT_BUDGET = 0, 1, 2, 3, 4


class _Stage:
    name = "startup"


def _fail(stage, exc, code):
    print(f"error [{stage}]: {exc}", file=sys.stderr)
    return code


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None


# ---------------------------------------------------------------- pipeline

def cmd_pipeline(args, stage):
    from .pipeline import RunConfig, run_pipeline, write_outputs

    stage.name = "config"
    doc = _read_json(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    cfg = RunConfig.from_dict(doc, base_dir=Path(args.config).parent)
    out = args.out or cfg.output
    if not out:
        raise ArgumentError("no output directory: pass --out or set 'output' in the config")

    def hook(name):
        stage.name = name

    result = run_pipeline(cfg, stage_hook=hook)
    stage.name = "write"
    write_outputs(result, out)
    print(result.report.to_text(), end="")
    return EXIT_OK


def cmd_validate_theory(args, stage):
    from .influence import run_theory_validation

    stage.name = "config"
    opts = _read_json(args.config) if args.config else {}
    allowed = {"instances", "seed", "tolerance", "decomposition_tolerance", "max_nodes", "max_dim",
               "damping", "include_empty"}
    unknown = sorted(set(opts) - allowed)
    if unknown:
        raise ArgumentError(f"unknown validate-theory keys: {unknown}")
    for key in ("instances", "seed", "tolerance"):
        if getattr(args, key) is not None:
            opts[key] = getattr(args, key)
    stage.name = "validate"
    report = run_theory_validation(**opts)
    for row in report["instances"]:
        flag = "ok" if row["passed"] else "FAIL"
        print(f"instance {row['instance']:>2}  n={row['nodes']:>2} d={row['dim']} removed={row['removed_edges']}  "
              f"weight {row['weight_rel_error']:.2e}  output {row['output_rel_error']:.2e}  "
              f"decomposition {row['decomposition_error']:.2e}  {flag}")
    print(f"max relative error: weight {report['max_weight_rel_error']:.3e}, "
          f"output {report['max_output_rel_error']:.3e}, decomposition {report['max_decomposition_error']:.3e}")
    if args.out:
        Path(args.out).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    return EXIT_OK if report["passed"] else EXIT_VALIDATION


# ---------------------------------------------------------------- serving

def _load_artifacts(art):
    from .graph import build_propagation, load_graph
    from .victim import params_from_json, predict_proba

    art = Path(art)
    for name in ("target_nodes.csv", "target_edges.csv", "visible_edges.csv", "unlearned_params.json",
                 "victim.json"):
        if not (art / name).is_file():
            raise ValidationError(f"artifact missing: {art / name}")
    meta = json.loads((art / "victim.json").read_text())
    g = load_graph(art / "target_nodes.csv", art / "target_edges.csv")
    visible = load_graph(art / "target_nodes.csv", art / "visible_edges.csv")
    params = params_from_json((art / "unlearned_params.json").read_text())
    C = build_propagation(g, meta["propagation"], meta["k"], meta["alpha"])
    return g, visible, predict_proba(g, C, params), meta


def cmd_serve(args, stage):
    from .service import ServerState, serve

    stage.name = "artifacts"
    g, visible, P, meta = _load_artifacts(args.artifacts)
    budget = args.budget if args.budget is not None else 10 * g.num_nodes
    keys = args.api_key or ["demo-key"]
    state = ServerState(P, visible, g.features, {k: budget for k in keys},
                        expose_features=not args.no_features,
                        expose_neighbors_hops=args.max_hops if args.max_hops is not None else max(1, meta["hops"]))
    stage.name = "serve"
    print(f"serving {g.num_nodes} nodes on http://{args.host}:{args.port} (budget {budget} per key)",
          file=sys.stderr, flush=True)
    try:
        serve(state, args.host, args.port, block=True)
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_attack_remote(args, stage):
    from .attack import AttackModel, LocalOracle, QuerySet, compute_trends, score_pairs
    from .evaluation import grouped_auc
    from .service import RemoteOracle, remote_gather

    stage.name = "artifacts"
    art = Path(args.artifacts)
    for name in ("attack_model.json", "query.json"):
        if not (art / name).is_file():
            raise ValidationError(f"artifact missing: {art / name}")
    model = AttackModel.from_json((art / "attack_model.json").read_text())
    query = QuerySet.from_dict(json.loads((art / "query.json").read_text()))
    hops = model.hops if args.hops is None else args.hops
    client = RemoteOracle(args.url, args.api_key, retries=args.retries)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    stage.name = "gather"
    try:
        kn = remote_gather(client, query, hops)
    except BudgetError as exc:
        if out and exc.partial is not None:
            (out / "partial_knowledge.json").write_text(exc.partial.to_json() + "\n")
        raise
    stage.name = "attack"
    scores = score_pairs(model, query, kn, compute_trends(kn, hops, model.trend_self_recursion))
    doc = {"scores": [format(float(s), ".17g") for s in scores], "requests": client.spent}
    if query.tags is not None:
        doc["auc"] = grouped_auc(scores, query)
    if args.check_parity:
        stage.name = "parity"
        g, visible, P, _ = _load_artifacts(art)
        local = LocalOracle(P, visible, g.features)
        from .attack import gather_partial_knowledge
        lkn = gather_partial_knowledge(query, local, hops)
        lscores = score_pairs(model, query, lkn, compute_trends(lkn, hops, model.trend_self_recursion))
        gap = float(np.max(np.abs(lscores - scores))) if len(scores) else 0.0
        doc["parity_max_abs_diff"] = gap
        if gap > 1e-12:
            print(f"parity check failed: max |local - remote| = {gap:.3e}", file=sys.stderr)
            return EXIT_VALIDATION
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if out:
        (out / "remote_report.json").write_text(text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------- data tools

def cmd_gen_sbm(args, stage):
    from .graph import generate_sbm, write_graph

    stage.name = "generate"
    g = generate_sbm(args.blocks, args.nodes_per_block, args.p_in, args.p_out, args.feature_dim,
                     args.feature_noise, args.seed, train_fraction=args.train_fraction)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_graph(g, out / "nodes.csv", out / "edges.csv")
    print(f"wrote {g.num_nodes} nodes and {g.num_edges} edges to {out}")
    return EXIT_OK


def cmd_partition(args, stage):
    from .graph import load_graph, partition_shadow_target, write_graph

    stage.name = "dataset"
    g = load_graph(args.nodes, args.edges)
    stage.name = "partition"
    split = partition_shadow_target(g, args.seed, balance=args.balance)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_graph(split.shadow, out / "shadow_nodes.csv", out / "shadow_edges.csv")
    write_graph(split.target, out / "target_nodes.csv", out / "target_edges.csv")
    print(f"shadow {split.shadow.num_nodes} nodes, target {split.target.num_nodes} nodes, "
          f"{split.cut_edges} cut edges")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="trendlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("pipeline", help="run the full shadow/target attack experiment")
    s.add_argument("config", help="JSON run configuration")
    s.add_argument("--out", help="output directory (overrides the config)")
    s.add_argument("--seed", type=int, help="override the root seed")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("validate-theory", help="check closed-form influences against finite differences")
    s.add_argument("config", nargs="?", help="optional JSON with validator options")
    s.add_argument("--instances", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--tolerance", type=float)
    s.add_argument("--out", help="write the JSON report here")
    s.set_defaults(func=cmd_validate_theory)

    s = sub.add_parser("serve", help="serve an unlearned model from pipeline artifacts")
    s.add_argument("artifacts", help="the artifacts/ directory written by 'pipeline'")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--api-key", action="append", help="accepted key (repeatable)")
    s.add_argument("--budget", type=int, help="queries per key (default 10 x nodes)")
    s.add_argument("--max-hops", type=int, help="largest neighborhood radius answered")
    s.add_argument("--no-features", action="store_true", help="refuse feature requests")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("attack-remote", help="run the trained attack against a served model")
    s.add_argument("artifacts")
    s.add_argument("--url", default="http://127.0.0.1:8000")
    s.add_argument("--api-key", default="demo-key")
    s.add_argument("--hops", type=int)
    s.add_argument("--retries", type=int, default=3)
    s.add_argument("--out", help="directory for remote_report.json / partial_knowledge.json")
    s.add_argument("--check-parity", action="store_true", help="compare against a local run on the artifacts")
    s.set_defaults(func=cmd_attack_remote)

    s = sub.add_parser("gen-sbm", help="write a stochastic block model graph as CSV")
    s.add_argument("--blocks", type=int, default=4)
    s.add_argument("--nodes-per-block", type=int, default=100)
    s.add_argument("--p-in", type=float, default=0.05)
    s.add_argument("--p-out", type=float, default=0.003)
    s.add_argument("--feature-dim", type=int, default=32)
    s.add_argument("--feature-noise", type=float, default=3.0)
    s.add_argument("--train-fraction", type=float, default=0.9)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_sbm)

    s = sub.add_parser("partition", help="split a graph into disconnected shadow and target halves")
    s.add_argument("--nodes", required=True)
    s.add_argument("--edges", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--balance", type=float, default=0.1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_partition)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    stage = _Stage()
    try:
        return args.func(args, stage)
    except (AuthError, BudgetError) as exc:
        return _fail(stage.name, exc, EXIT_BUDGET)
    except TransportError as exc:
        return _fail(stage.name, exc, EXIT_TRANSPORT)
    except (ValidationError, ArgumentError, OSError) as exc:
        return _fail(stage.name, exc, EXIT_INPUT)
    except NumericError as exc:
        return _fail(stage.name, exc, EXIT_VALIDATION)


if __name__ == "__main__":
    sys.exit(main())
