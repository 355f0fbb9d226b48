"""Command-line entry point: prepare, train, eval, retrieve.

Every command writes a manifest recording the resolved configuration, input
file fingerprints, seed, and artifact paths.  Flag values resolve as
CLI flag > config file > built-in default; the seed additionally falls back
to the COLT_SEED environment variable.  Exit codes: 0 success, 1 usage
error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .corpus import (
    Corpus,
    derive_scenes,
    load_corpus,
    load_scene_table,
    save_corpus,
    save_edge_list,
    save_scene_table,
    split,
)
from .embeddings import EmbeddingTable, embed_texts, hash_embed, load_embeddings
from .errors import ColtError, DataError, NumericalError, UsageError
from .metrics import evaluate
from .model import MODE_PASSTHROUGH, DualViewStack, TrainedModel, passthrough_model
from .report import (
    format_report_table,
    plot_breakdown,
    plot_metrics,
    plot_training_curves,
    read_train_log,
    write_report_csv,
)
from .retrieval import RankedList, batch_retrieve, format_ranked_line, retrieve_topk, write_run
from .graph import build_graphs
from .training import EpochStats, TrainConfig, train

ENV_SEED = "COLT_SEED"
DEFAULT_SEED = 13
DEFAULT_TEST_FRACTION = 0.1
DEFAULT_DIM = 128
DEFAULT_EMBED_SEED = 0

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

TOOLS_FILENAME = "tools.jsonl"
QUERIES_FILENAME = "queries.jsonl"
SCENES_FILENAME = "scenes.jsonl"
EDGE_FILES = {
    "qs": "edges_query_scene.tsv",
    "qt": "edges_query_tool.tsv",
    "st": "edges_scene_tool.tsv",
}
TRAIN_LOG_FILENAME = "train_log.csv"
TRAIN_CURVES_FILENAME = "training_curves.png"
RUN_FILENAME = "run.jsonl"
REPORT_JSON_FILENAME = "report.json"
REPORT_CSV_FILENAME = "report.csv"
METRICS_FIGURE_FILENAME = "metrics_by_k.png"
BREAKDOWN_FIGURE_FILENAME = "breakdown_by_gold_size.png"
MANIFEST_FILENAME = "manifest.json"

ABLATIONS = ("semantic", "collab", "listwise", "contrastive")


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exceptions, not exit(2)."""

    def error(self, message: str):  # noqa: D102 - argparse hook
        raise UsageError(message)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _atomic_write_json(obj: dict, path: Path) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)


def _write_manifest(
    out_dir: Path,
    command: str,
    config: dict,
    inputs: Sequence[Path],
    artifacts: Sequence[Path],
    seed: int | None,
    started: float,
) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs if p.exists()},
        "artifacts": [str(p) for p in artifacts],
        "duration_s": round(time.monotonic() - started, 3),
    }
    _atomic_write_json(manifest, out_dir / MANIFEST_FILENAME)


def load_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` lines; keys mirror flag names without dashes."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


class Resolver:
    """CLI flag > config file > default, with typed conversion."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config: dict[str, str] = {}
        if getattr(args, "config", None):
            self.config = load_config_file(args.config)
        self.resolved: dict = {}

    def get(self, name: str, default, conv: Callable = str):
        value = getattr(self.args, name, None)
        if value is None and name in self.config:
            try:
                value = conv(self.config[name])
            except ValueError as exc:
                raise UsageError(f"config key {name}: {exc}") from exc
        if value is None:
            value = default
        self.resolved[name] = value
        return value

    def seed(self) -> int:
        value = getattr(self.args, "seed", None)
        if value is None and "seed" in self.config:
            value = int(self.config["seed"])
        if value is None and os.environ.get(ENV_SEED):
            try:
                value = int(os.environ[ENV_SEED])
            except ValueError as exc:
                raise UsageError(f"{ENV_SEED} must be an integer") from exc
        if value is None:
            value = DEFAULT_SEED
        self.resolved["seed"] = value
        return value


def _limit_threads(n: int) -> None:
    if n < 1:
        raise UsageError("--threads must be >= 1")
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=n)
    except ImportError:  # pragma: no cover - library BLAS stays as configured
        pass


def _load_prepared(prepared: Path) -> tuple[Corpus, "SceneTable"]:
    corpus = load_corpus(prepared / TOOLS_FILENAME, prepared / QUERIES_FILENAME)
    scenes = load_scene_table(prepared / SCENES_FILENAME, corpus)
    return corpus, scenes


# ----------------------------------------------------------------- prepare

def cmd_prepare(args: argparse.Namespace) -> int:
    started = time.monotonic()
    res = Resolver(args)
    seed = res.seed()
    fraction = res.get("test_fraction", DEFAULT_TEST_FRACTION, float)

    corpus = load_corpus(args.tools, args.queries)
    corpus = split(corpus, fraction, seed)
    scenes = derive_scenes(corpus)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, out / TOOLS_FILENAME, out / QUERIES_FILENAME)
    save_scene_table(scenes, out / SCENES_FILENAME)
    save_edge_list(scenes.qs_edges, out / EDGE_FILES["qs"])
    save_edge_list(scenes.qt_edges, out / EDGE_FILES["qt"])
    save_edge_list(scenes.st_edges, out / EDGE_FILES["st"])

    artifacts = [out / TOOLS_FILENAME, out / QUERIES_FILENAME, out / SCENES_FILENAME]
    artifacts += [out / name for name in EDGE_FILES.values()]
    _write_manifest(
        out, "prepare", res.resolved,
        [Path(args.tools), Path(args.queries)], artifacts, seed, started,
    )
    print(
        f"prepared {corpus.n_queries} queries ({len(corpus.train_queries())} train, "
        f"{len(corpus.test_queries())} test), {corpus.n_tools} tools, "
        f"{scenes.n_scenes} scenes -> {out}"
    )
    return EXIT_OK


# ------------------------------------------------------------------- train

def _embedding_source(res: Resolver, args: argparse.Namespace, seed: int) -> dict:
    ablate = getattr(args, "ablate", None)
    q_path = res.get("query_embeddings", None)
    t_path = res.get("tool_embeddings", None)
    use_hash = bool(res.get("hash_embed", False, lambda s: s.lower() == "true"))
    if ablate == "semantic" or use_hash or (q_path is None and t_path is None):
        dim = res.get("dim", DEFAULT_DIM, int)
        embed_seed = res.get("embed_seed", DEFAULT_EMBED_SEED, int)
        return {"kind": "hash", "dim": dim, "seed": embed_seed}
    if q_path is None or t_path is None:
        raise UsageError(
            "--query-embeddings and --tool-embeddings must be given together"
        )
    return {"kind": "files", "query_path": str(q_path), "tool_path": str(t_path)}


def _semantic_tables(
    source: dict, corpus: Corpus, query_ids: Sequence[str]
) -> tuple[EmbeddingTable, EmbeddingTable]:
    if source["kind"] == "hash":
        queries = embed_texts(
            ((qid, corpus.queries[qid].text) for qid in query_ids),
            dim=source["dim"],
            seed=source["seed"],
        )
        tools = embed_texts(
            ((t.tool_id, t.description) for t in corpus.tools.values()),
            dim=source["dim"],
            seed=source["seed"],
        )
        return queries, tools
    queries = load_embeddings(source["query_path"], query_ids)
    tools = load_embeddings(source["tool_path"], corpus.tool_ids())
    return queries, tools


def cmd_train(args: argparse.Namespace) -> int:
    started = time.monotonic()
    res = Resolver(args)
    seed = res.seed()
    _limit_threads(res.get("threads", 1, int))

    prepared = Path(args.prepared)
    corpus, scenes = _load_prepared(prepared)
    train_ids = [q.query_id for q in corpus.train_queries()]

    ablate = res.get("ablate", None)
    if ablate is not None and ablate not in ABLATIONS:
        raise UsageError(f"--ablate must be one of {', '.join(ABLATIONS)}")

    config = TrainConfig(
        learning_rate=res.get("lr", TrainConfig.learning_rate, float),
        weight_decay=res.get("weight_decay", TrainConfig.weight_decay, float),
        layers=res.get("layers", TrainConfig.layers, int),
        contrastive_weight=res.get("lambda_", TrainConfig.contrastive_weight, float),
        temperature=res.get("tau", TrainConfig.temperature, float),
        list_length=res.get("list_length", TrainConfig.list_length, int),
        batch_size=res.get("batch_size", TrainConfig.batch_size, int),
        epochs=res.get("epochs", TrainConfig.epochs, int),
        seed=seed,
    )

    source = _embedding_source(res, args, seed)
    query_table, tool_table = _semantic_tables(source, corpus, train_ids)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_rows: list[EpochStats] = []

    if ablate == "collab":
        model = passthrough_model(query_table, tool_table, config.to_dict())
    else:
        model = train(
            corpus,
            scenes,
            query_table,
            tool_table,
            config,
            ablate=ablate if ablate in ("listwise", "contrastive") else None,
            log_fn=log_rows.append,
        )

    prepared_inputs = [
        prepared / TOOLS_FILENAME,
        prepared / QUERIES_FILENAME,
        prepared / SCENES_FILENAME,
    ]
    model.save(
        out,
        extra_meta={
            "prepared": str(args.prepared),
            "prepared_fingerprints": {p.name: _sha256(p) for p in prepared_inputs},
            "embedding_source": source,
            "ablate": ablate,
        },
    )

    log_path = out / TRAIN_LOG_FILENAME
    with log_path.open("w", encoding="utf-8") as fh:
        fh.write("epoch,listwise,contrastive_queries,contrastive_scenes,total\n")
        for row in log_rows:
            fh.write(row.format_line() + "\n")
    artifacts = [out / "meta", log_path]
    if log_rows:
        plot_training_curves(read_train_log(log_path), out / TRAIN_CURVES_FILENAME)
        artifacts.append(out / TRAIN_CURVES_FILENAME)

    _write_manifest(
        out, "train", res.resolved, prepared_inputs, artifacts, seed, started
    )
    mode = "passthrough" if model.mode == MODE_PASSTHROUGH else "dual-view"
    print(f"trained {mode} model ({model.epochs_run} epochs) -> {out}")
    return EXIT_OK


# -------------------------------------------------------------------- eval

def _checkpoint_meta(ckpt: Path) -> dict:
    meta_path = ckpt / "meta"
    if not meta_path.exists():
        raise DataError(f"checkpoint meta file not found: {meta_path}")
    return json.loads(meta_path.read_text(encoding="utf-8"))


def _load_model(ckpt: Path, meta: dict, corpus: Corpus, scenes) -> TrainedModel:
    if meta["mode"] == MODE_PASSTHROUGH:
        return TrainedModel.load(ckpt)
    train_ids = [q.query_id for q in corpus.train_queries()]
    qs, qt, st = build_graphs(scenes, train_ids, corpus.tool_ids())
    stack = DualViewStack(qs, qt, st, layers=int(meta["config"]["layers"]))
    return TrainedModel.load(ckpt, stack)


def _semantic_for_queries(
    source: dict, corpus: Corpus, query_ids: Sequence[str]
) -> EmbeddingTable:
    if source["kind"] == "hash":
        return embed_texts(
            ((qid, corpus.queries[qid].text) for qid in query_ids),
            dim=source["dim"],
            seed=source["seed"],
        )
    return load_embeddings(source["query_path"], query_ids)


def cmd_eval(args: argparse.Namespace) -> int:
    started = time.monotonic()
    res = Resolver(args)
    _limit_threads(res.get("threads", 1, int))

    ckpt = Path(args.checkpoint)
    meta = _checkpoint_meta(ckpt)
    prepared_arg = res.get("prepared", meta.get("prepared"))
    if prepared_arg is None:
        raise UsageError("--prepared is required (checkpoint records none)")
    prepared = Path(prepared_arg)
    corpus, scenes = _load_prepared(prepared)

    try:
        ks = tuple(int(k) for k in str(res.get("k", "3,5")).split(",") if k != "")
    except ValueError as exc:
        raise UsageError(f"--k must be a comma-separated integer list: {exc}") from exc
    if not ks or any(k < 1 for k in ks):
        raise UsageError("--k values must be >= 1")
    breakdown = bool(res.get("breakdown", False, lambda s: s.lower() == "true"))
    eval_split = res.get("split", "test")
    if eval_split not in ("train", "test"):
        raise UsageError("--split must be 'train' or 'test'")

    model = _load_model(ckpt, meta, corpus, scenes)
    if not model.covers_tools(corpus.tool_ids()):
        raise DataError("checkpoint does not cover the corpus tool set")

    queries = [q for q in corpus.queries.values() if q.split == eval_split]
    if not queries:
        raise DataError(f"no queries in split {eval_split!r}")
    need_semantic = [
        q.query_id for q in queries if q.query_id not in model.query_scene_view
    ]
    semantic = (
        _semantic_for_queries(meta["embedding_source"], corpus, need_semantic)
        if need_semantic
        else None
    )
    depth = max(max(ks), max(len(q.gold_tools) for q in queries))
    ranked = batch_retrieve(
        model,
        [
            (q.query_id, semantic[q.query_id] if semantic and q.query_id in semantic else None)
            for q in queries
        ],
        k=depth,
    )
    run = {rl.query_id: [t for t, _ in rl.entries] for rl in ranked}
    report = evaluate(run, corpus, ks, breakdown=breakdown, split=eval_split)

    out = Path(args.out) if args.out else ckpt / f"eval_{eval_split}"
    out.mkdir(parents=True, exist_ok=True)
    write_run(ranked, out / RUN_FILENAME)
    report.save(out / REPORT_JSON_FILENAME)
    write_report_csv(report, out / REPORT_CSV_FILENAME)
    plot_metrics(report, out / METRICS_FIGURE_FILENAME)
    artifacts = [
        out / RUN_FILENAME,
        out / REPORT_JSON_FILENAME,
        out / REPORT_CSV_FILENAME,
        out / METRICS_FIGURE_FILENAME,
    ]
    if breakdown:
        plot_breakdown(report, out / BREAKDOWN_FIGURE_FILENAME)
        artifacts.append(out / BREAKDOWN_FIGURE_FILENAME)

    _write_manifest(
        out, "eval", res.resolved,
        [prepared / TOOLS_FILENAME, prepared / QUERIES_FILENAME, ckpt / "meta"],
        artifacts, meta.get("config", {}).get("seed"), started,
    )
    print(format_report_table(report))
    return EXIT_OK


# ---------------------------------------------------------------- retrieve

def cmd_retrieve(args: argparse.Namespace) -> int:
    started = time.monotonic()
    res = Resolver(args)
    _limit_threads(res.get("threads", 1, int))
    k = res.get("k", 5, int)
    if k < 1:
        raise UsageError("--k must be >= 1")

    ckpt = Path(args.checkpoint)
    meta = _checkpoint_meta(ckpt)
    source = meta["embedding_source"]

    if bool(args.query) == bool(args.query_file):
        raise UsageError("give exactly one of --query or --query-file")
    if args.query:
        requests = [("q0", args.query)]
    else:
        requests = []
        path = Path(args.query_file)
        if not path.exists():
            raise DataError(f"file not found: {path}")
        for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from exc
            if not isinstance(obj.get("query_id"), str):
                raise DataError(f"{path}:{lineno}: need a 'query_id' field")
            requests.append((obj["query_id"], obj.get("text", "")))

    # Propagated representations are available when the prepared artifacts
    # the checkpoint points at still exist; otherwise fall back to semantic.
    model = None
    prepared_arg = meta.get("prepared")
    if meta["mode"] != MODE_PASSTHROUGH and prepared_arg:
        prepared = Path(prepared_arg)
        if (prepared / TOOLS_FILENAME).exists():
            corpus, scenes = _load_prepared(prepared)
            model = _load_model(ckpt, meta, corpus, scenes)
    if model is None:
        model = TrainedModel.load(ckpt)

    if source["kind"] == "hash":
        lookup = {
            qid: hash_embed(text, dim=source["dim"], seed=source["seed"])
            for qid, text in requests
        }
    else:
        if args.query:
            raise UsageError(
                "--query needs the built-in hash embedder; this checkpoint was "
                "trained from imported embeddings, use --query-file with ids "
                "present in the embedding export"
            )
        table = load_embeddings(source["query_path"], [qid for qid, _ in requests])
        lookup = {qid: table[qid] for qid, _ in requests}

    ranked: list[RankedList] = []
    for qid, _text in requests:
        rl = retrieve_topk(model, k, query_id=qid, semantic=lookup[qid])
        ranked.append(RankedList(query_id=qid, entries=rl.entries, k=k))

    if args.out:
        write_run(ranked, args.out)
        out_dir = Path(args.out).parent
        _write_manifest(
            out_dir, "retrieve", res.resolved, [ckpt / "meta"],
            [Path(args.out)], meta.get("config", {}).get("seed"), started,
        )
    else:
        for rl in ranked:
            print(format_ranked_line(rl))
    return EXIT_OK


# -------------------------------------------------------------------- main

def build_parser() -> _Parser:
    parser = _Parser(prog="colt", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)

    p = sub.add_parser("prepare", parents=[common], help="split corpus and derive scene graphs")
    p.add_argument("--tools", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", parents=[common], help="train the collaborative model")
    p.add_argument("--prepared", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--query-embeddings", dest="query_embeddings")
    p.add_argument("--tool-embeddings", dest="tool_embeddings")
    p.add_argument("--hash-embed", dest="hash_embed", action="store_const", const=True)
    p.add_argument("--dim", type=int)
    p.add_argument("--embed-seed", dest="embed_seed", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--list-length", dest="list_length", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--ablate", choices=ABLATIONS)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prepared")
    p.add_argument("--k")
    p.add_argument("--breakdown", action="store_const", const=True)
    p.add_argument("--split", choices=("train", "test"))
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("retrieve", parents=[common], help="rank tools for ad-hoc queries")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query")
    p.add_argument("--query-file", dest="query_file")
    p.add_argument("--k", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_retrieve)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
