"""Command-line entry point orchestrating the pipelines.

Every command reads an optional JSON config (unknown keys rejected, seed
mandatory), applies flag overrides on top, and writes a manifest next to
its artifacts. Exit codes: 2 missing input, 3 validation failure, 1 other
runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, embed, evalsuite, sampler, service
from .corpus import CorpusError, gen_synthetic_corpus, load_corpus, save_corpus
from .embed import EmbeddingError, load_embeddings, load_word_vectors, save_embeddings
from .graph import GraphError, load_graph, save_graph, validate
from .sam import LabelVocab, SamConfig, SamModel, train

EXIT_RUNTIME = 1
EXIT_MISSING_INPUT = 2
EXIT_VALIDATION = 3

_CONFIG_KEYS = {
    "seed",
    "out",
    "graph",
    "word_vectors",
    "embeddings",
    "corpus",
    "examples",
    "tasks",
    "checkpoint",
    "log",
    "synth",
    "sam",
    "sampler",
    "eval",
    "serve",
}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {path}", EXIT_MISSING_INPUT)
    with open(p, encoding="utf-8") as f:
        doc = json.load(f)
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}", EXIT_VALIDATION)
    return doc


def resolve(cfg: dict, args, key, flag_value=None, required=True):
    value = flag_value if flag_value is not None else cfg.get(key)
    if value is None and required:
        raise CliError(f"missing required input: {key}", EXIT_MISSING_INPUT)
    return value


def require_file(path, what) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {path}", EXIT_MISSING_INPUT)
    return p


def write_manifest(out_dir: Path, command: str, cfg: dict, seed: int) -> None:
    canonical = json.dumps(cfg, sort_keys=True).encode("utf-8")
    manifest = {
        "command": command,
        "config_hash": hashlib.sha256(canonical).hexdigest(),
        "seed": seed,
        "version": __version__,
        "timestamp": time.time(),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")


def _setup(args, command: str):
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        raise CliError("seed is mandatory (config or --seed)", EXIT_VALIDATION)
    out_dir = Path(args.out or cfg.get("out") or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir, command, cfg, seed)
    return cfg, int(seed), out_dir


def _load_graph_arg(cfg, args):
    path = require_file(resolve(cfg, args, "graph", args.graph), "graph spec")
    return load_graph(path)


def _load_bundle(cfg, args, need_corpus=True, need_emb=True):
    g = _load_graph_arg(cfg, args)
    corpus = None
    emb = None
    if need_corpus:
        path = require_file(
            resolve(cfg, args, "corpus", getattr(args, "corpus", None)), "corpus"
        )
        corpus = load_corpus(path, g)
    if need_emb:
        path = require_file(
            resolve(cfg, args, "embeddings", getattr(args, "embeddings", None)),
            "embeddings",
        )
        emb = load_embeddings(path)
    return g, corpus, emb


def cmd_build_graph(args):
    cfg, seed, out_dir = _setup(args, "build-graph")
    g = _load_graph_arg(cfg, args)
    violations = validate(g)
    report = [dataclasses.asdict(v) for v in violations]
    with open(out_dir / "graph_validation.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)
        f.write("\n")
    if violations:
        print(f"graph invalid: {len(violations)} violations", file=sys.stderr)
        return EXIT_VALIDATION
    save_graph(g, out_dir / "graph.json")
    print(f"graph ok: {len(g.nodes)} nodes, {len(g.leaf_ids)} leaves")
    return 0


def cmd_propagate(args):
    cfg, seed, out_dir = _setup(args, "propagate")
    g = _load_graph_arg(cfg, args)
    wv_path = require_file(
        resolve(cfg, args, "word_vectors", args.word_vectors), "word vectors"
    )
    wv = load_word_vectors(wv_path)
    leaf_vectors = {
        leaf: embed.leaf_embedding(g.nodes[leaf].name, wv, oov_fallback=args.oov_fallback)
        for leaf in g.leaf_ids
    }
    table = embed.propagate(g, leaf_vectors)
    save_embeddings(table, out_dir / "embeddings.json")
    print(f"propagated {len(table.vectors)} node embeddings (dim {table.dim})")
    return 0


def cmd_gen_corpus(args):
    cfg, seed, out_dir = _setup(args, "gen-corpus")
    g = _load_graph_arg(cfg, args)
    synth = dict(cfg.get("synth", {}))
    per_leaf = args.per_leaf or synth.get("per_leaf", 20)
    feature_dim = args.feature_dim or synth.get("feature_dim", 16)
    noise = args.noise if args.noise is not None else synth.get("noise", 0.0)
    corpus = gen_synthetic_corpus(g, per_leaf, feature_dim, noise, seed)
    save_corpus(corpus, out_dir / "corpus.ndjson")
    print(f"generated {len(corpus.records)} records over {len(g.leaf_ids)} leaves")
    return 0


def cmd_gen_train(args):
    cfg, seed, out_dir = _setup(args, "gen-train")
    g, corpus, emb = _load_bundle(cfg, args)
    sampler_cfg = dict(cfg.get("sampler", {}))
    n = args.n or sampler_cfg.get("n", 4)
    count = args.count or sampler_cfg.get("count", 10_000)
    examples = list(
        sampler.sample_training_examples(g, corpus, emb, n=n, count=count, seed=seed)
    )
    sampler.save_examples(examples, out_dir / "train_examples.ndjson")
    print(f"sampled {len(examples)} training examples (n={n})")
    return 0


def cmd_gen_tasks(args):
    cfg, seed, out_dir = _setup(args, "gen-tasks")
    g, corpus, emb = _load_bundle(cfg, args)
    sampler_cfg = dict(cfg.get("sampler", {}))
    count = args.count or sampler_cfg.get("count", 40)
    vigilance = args.vigilance or sampler_cfg.get("vigilance", 0)
    n = args.n or sampler_cfg.get("n")
    rng = np.random.default_rng(seed)
    tasks = []
    for i in range(count):
        n_ref = n or int(rng.integers(1, 5))
        tasks.append(
            sampler.build_ranking_task(
                g, corpus, emb, n_ref, seed + i, task_id=f"task-{i:04d}"
            )
        )
    for i in range(vigilance):
        n_ref = n or int(rng.integers(1, 5))
        tasks.append(
            sampler.build_vigilance_task(
                g, corpus, emb, n_ref, seed + count + i, task_id=f"vig-{i:04d}"
            )
        )
    sampler.save_tasks(tasks, out_dir / "tasks.ndjson")
    print(f"built {count} ranking tasks + {vigilance} vigilance tasks")
    return 0


def _sam_config(cfg: dict, args, seed, corpus, vocab, emb) -> SamConfig:
    sam_cfg = dict(cfg.get("sam", {}))
    sam_cfg.pop("seed", None)
    if args.set_size:
        sam_cfg["max_set_size"] = args.set_size
    if args.pairs_only:
        sam_cfg["subset_mode"] = "pairs"
    return SamConfig(
        feature_dim=corpus.feature_dim,
        num_classes=len(vocab),
        embed_dim=emb.dim,
        seed=seed,
        **sam_cfg,
    )


def cmd_train(args):
    cfg, seed, out_dir = _setup(args, "train")
    g, corpus, emb = _load_bundle(cfg, args)
    examples_path = require_file(
        resolve(cfg, args, "examples", args.examples), "training examples"
    )
    examples = sampler.load_examples(examples_path)
    vocab = LabelVocab(tuple(g.nodes))
    model_cfg = _sam_config(cfg, args, seed, corpus, vocab, emb)
    model, metrics = train(
        model_cfg,
        corpus,
        examples,
        epochs=args.epochs,
        vocab=vocab,
        metrics_path=out_dir / "metrics.ndjson",
    )
    model.save(out_dir / "checkpoint.bin")
    final = metrics[-1] if metrics else {}
    print(f"trained {args.epochs} epochs; final: {json.dumps(final)}")
    return 0


def cmd_eval_abstraction(args):
    cfg, seed, out_dir = _setup(args, "eval-abstraction")
    g, corpus, emb = _load_bundle(cfg, args)
    model = SamModel.load(
        require_file(resolve(cfg, args, "checkpoint", args.checkpoint), "checkpoint")
    )
    eval_cfg = dict(cfg.get("eval", {}))
    n = args.n or eval_cfg.get("n", 4)
    count = args.count or eval_cfg.get("count", 200)
    items = evalsuite.build_eval_sets(g, corpus, emb, n, count, seed)
    report = evalsuite.eval_abstraction(model, items, corpus)
    freqs = evalsuite.target_frequencies(items)
    report.metrics["chance_top1"] = evalsuite.chance_level(freqs, 1)
    report.metrics["chance_top5"] = evalsuite.chance_level(freqs, min(5, len(freqs)))
    report.to_json(out_dir / "abstraction_report.json")
    (out_dir / "abstraction_report.txt").write_text(report.to_text() + "\n")
    print(report.to_text())
    return 0


def cmd_eval_completion(args):
    cfg, seed, out_dir = _setup(args, "eval-completion")
    g, corpus, emb = _load_bundle(cfg, args)
    tasks = sampler.load_tasks(
        require_file(resolve(cfg, args, "tasks", args.tasks), "tasks")
    )
    tasks = [t for t in tasks if not t.is_vigilance]
    reports = []
    if args.oracle:
        rep = evalsuite.oracle_embedding_representer(corpus, emb)
        reports.append(evalsuite.eval_completion(tasks, rep, "completion/oracle"))
    else:
        model = SamModel.load(
            require_file(resolve(cfg, args, "checkpoint", args.checkpoint), "checkpoint")
        )
        rep = evalsuite.model_completion_representer(model, corpus)
        reports.append(evalsuite.eval_completion(tasks, rep, "completion/sam"))
    baseline = evalsuite.mean_feature_representer(corpus)
    reports.append(evalsuite.eval_completion(tasks, baseline, "completion/mean-feature"))
    for r in reports:
        r.to_json(out_dir / f"{r.task.replace('/', '_')}.json")
    table = evalsuite.report_table(reports)
    (out_dir / "completion_report.txt").write_text(table + "\n")
    print(table)
    return 0


def cmd_eval_ooo(args):
    cfg, seed, out_dir = _setup(args, "eval-ooo")
    g, corpus, emb = _load_bundle(cfg, args)
    eval_cfg = dict(cfg.get("eval", {}))
    n = args.n or eval_cfg.get("n", 3)
    count = args.count or eval_cfg.get("count", 100)
    sets = evalsuite.build_odd_one_out_sets(g, corpus, n, count, seed)
    if args.oracle:
        single, rest = evalsuite.oracle_ooo_representer(corpus, emb)
        name = "odd-one-out/oracle"
    else:
        model = SamModel.load(
            require_file(resolve(cfg, args, "checkpoint", args.checkpoint), "checkpoint")
        )
        single, rest = evalsuite.model_ooo_representer(model, corpus)
        name = "odd-one-out/sam"
    report = evalsuite.eval_odd_one_out(sets, single, rest, name)
    report.to_json(out_dir / "ooo_report.json")
    (out_dir / "ooo_report.txt").write_text(report.to_text() + "\n")
    print(report.to_text())
    return 0


def cmd_serve(args):
    import uvicorn

    cfg, seed, out_dir = _setup(args, "serve")
    tasks = sampler.load_tasks(
        require_file(resolve(cfg, args, "tasks", args.tasks), "task pool")
    )
    log_path = resolve(cfg, args, "log", args.log, required=False) or str(
        out_dir / "responses.ndjson"
    )
    serve_cfg = dict(cfg.get("serve", {}))
    port = int(os.environ.get("RELSETS_PORT", serve_cfg.get("port", 8000)))
    app = service.create_app(
        tasks,
        log_path,
        seed=seed,
        vigilance_rate=serve_cfg.get("vigilance_rate", 5),
    )
    uvicorn.run(app, host="127.0.0.1", port=port)
    return 0


def cmd_report(args):
    cfg, seed, out_dir = _setup(args, "report")
    tasks = sampler.load_tasks(
        require_file(resolve(cfg, args, "tasks", args.tasks), "tasks")
    )
    log_path = require_file(resolve(cfg, args, "log", args.log), "response log")
    log = service.ResponseLog(log_path)
    report = service.human_report(log.records(), tasks)
    report.to_json(out_dir / "human_report.json")
    print(report.to_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relsets")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--graph", default=None)
        return p

    def data(p):
        p.add_argument("--corpus", default=None)
        p.add_argument("--embeddings", default=None)
        return p

    p = common(sub.add_parser("build-graph"))
    p.set_defaults(func=cmd_build_graph)

    p = common(sub.add_parser("propagate"))
    p.add_argument("--word-vectors", dest="word_vectors", default=None)
    p.add_argument("--oov-fallback", action="store_true")
    p.set_defaults(func=cmd_propagate)

    p = common(sub.add_parser("gen-corpus"))
    p.add_argument("--per-leaf", type=int, default=None)
    p.add_argument("--feature-dim", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.set_defaults(func=cmd_gen_corpus)

    p = data(common(sub.add_parser("gen-train")))
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--count", type=int, default=None)
    p.set_defaults(func=cmd_gen_train)

    p = data(common(sub.add_parser("gen-tasks")))
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--vigilance", type=int, default=None)
    p.set_defaults(func=cmd_gen_tasks)

    p = data(common(sub.add_parser("train")))
    p.add_argument("--examples", default=None)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--set-size", dest="set_size", type=int, default=None)
    p.add_argument("--pairs-only", dest="pairs_only", action="store_true")
    p.set_defaults(func=cmd_train)

    p = data(common(sub.add_parser("eval-abstraction")))
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--count", type=int, default=None)
    p.set_defaults(func=cmd_eval_abstraction)

    p = data(common(sub.add_parser("eval-completion")))
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--tasks", default=None)
    p.add_argument("--oracle", action="store_true")
    p.set_defaults(func=cmd_eval_completion)

    p = data(common(sub.add_parser("eval-ooo")))
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--oracle", action="store_true")
    p.set_defaults(func=cmd_eval_ooo)

    p = common(sub.add_parser("serve"))
    p.add_argument("--tasks", default=None)
    p.add_argument("--log", default=None)
    p.set_defaults(func=cmd_serve)

    p = common(sub.add_parser("report"))
    p.add_argument("--tasks", default=None)
    p.add_argument("--log", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (GraphError, EmbeddingError, CorpusError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
