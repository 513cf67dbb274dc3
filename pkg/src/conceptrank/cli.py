"""Pipeline subcommands driven by one JSON configuration file.

Workdir artifacts (version 1 layout):
    corpus.jsonl queries.jsonl qrels.txt    <- synth
    graphs.jsonl                            <- build-graphs
    index.json                              <- index
    bm25_run.txt                            <- retrieve
    checkpoint.json history.csv             <- train
    rerank_run.txt                          <- rerank
    metrics.csv                             <- evaluate
    utility.csv                             <- assess-utility
    stability.csv stability_runs.csv        <- stability
    manifest.json                           <- content hashes for stage skipping
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from . import evalkit
from .conceptmap import document_to_map, iter_pretagged, read_map_store, tagged_to_map, write_map_store
from .corpus import (
    CorpusError,
    SynthConfig,
    generate_synthetic,
    load_collection,
    load_queries,
    load_topics,
    write_collection,
    write_qrels,
    write_queries,
)
from .embedstore import attach_features, hashed_table, load_embeddings, query_embedding
from .graphmodels import GnnConfig
from .lexindex import (
    build_index,
    concept_idf,
    load_index,
    read_run,
    retrieve_topk,
    save_index,
    tfidf_node_weights,
    write_run,
)
from .tensorcore import load_checkpoint, save_checkpoint
from .trainer import ModelBundle, TrainConfig, rerank, train

log = logging.getLogger(__name__)

_LAYOUT_VERSION = 1

DEFAULTS: dict = {
    "workdir": "workdir",
    "seed": 7,
    "paths": {"corpus": None, "queries": None, "qrels": None, "embeddings": None, "pretagged": None},
    "synth": {
        "n_docs": 200,
        "n_queries": 10,
        "vocab_size": 160,
        "concepts_per_query": 3,
        "noise_rate": 0.3,
        "adversarial": False,
    },
    "conceptmap": {"window": 3},
    "index": {"k1": 1.2, "b": 0.75, "top_k": 100},
    "embeddings": {"dim": 50, "fallback_seed": None},
    "model": {
        "kind": "epool",
        "layers": 2,
        "hidden_dim": 64,
        "out_dim": 64,
        "eps_init": 0.0,
        "eps_learnable": True,
        "readout": "mean",
        "walk_lengths": [2, 3, 4],
        "walks_per_node": 5,
    },
    "train": {
        "epochs": 20,
        "triplets_per_query": 8,
        "margin": 1.0,
        "lr": 0.001,
        "patience": 5,
        "val_fraction": 0.2,
    },
    "eval": {"cutoffs": [10, 20], "run": "rerank", "pair_cap": 50000, "bm_top": 20},
    "stability": {"seeds": [1, 2, 3, 4, 5], "models": ["gin", "gat", "npool", "epool", "rwpool"]},
}

COMMANDS = (
    "synth",
    "build-graphs",
    "index",
    "retrieve",
    "train",
    "rerank",
    "evaluate",
    "assess-utility",
    "stability",
)


class CliError(Exception):
    """A user-facing pipeline failure; printed without a traceback."""


class MissingArtifactError(CliError):
    pass


def _deep_merge(base: dict, override: dict, path: str = "") -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in merged:
            raise CliError(f"unknown configuration key: {where}")
        if isinstance(merged[key], dict) and isinstance(value, dict):
            merged[key] = _deep_merge(merged[key], value, where)
        else:
            merged[key] = value
    return merged


def load_config(path: str | Path | None) -> dict:
    """Defaults, overlaid by the JSON config file when one is given/present."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    path = Path(path)
    if not path.exists():
        raise CliError(f"configuration file {path} does not exist")
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise CliError(f"{path}: configuration must be a JSON object")
    return _deep_merge(DEFAULTS, data)


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply a dotted KEY=VALUE flag override; flags win over the file."""
    if "=" not in assignment:
        raise CliError(f"override {assignment!r} must look like section.key=value")
    dotted, raw = assignment.split("=", 1)
    keys = dotted.split(".")
    target = cfg
    for key in keys[:-1]:
        if not isinstance(target.get(key), dict):
            raise CliError(f"unknown configuration section {dotted!r}")
        target = target[key]
    if keys[-1] not in target:
        raise CliError(f"unknown configuration key {dotted!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    target[keys[-1]] = value


class Workspace:
    """Resolved paths plus the content-hash manifest for stage skipping."""

    def __init__(self, cfg: dict, force: bool = False) -> None:
        self.cfg = cfg
        self.force = force
        self.root = Path(cfg["workdir"])
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.root / "manifest.json"
        self._manifest: dict[str, str] = {}
        if self.manifest_path.exists():
            self._manifest = json.loads(self.manifest_path.read_text())

    def path_for(self, role: str, default_name: str) -> Path:
        configured = self.cfg["paths"].get(role)
        return Path(configured) if configured else self.root / default_name

    @property
    def corpus_path(self) -> Path:
        return self.path_for("corpus", "corpus.jsonl")

    @property
    def queries_path(self) -> Path:
        return self.path_for("queries", "queries.jsonl")

    @property
    def qrels_path(self) -> Path:
        return self.path_for("qrels", "qrels.txt")

    def artifact(self, name: str) -> Path:
        return self.root / name

    def require(self, path: Path, producer: str) -> Path:
        if not path.exists():
            raise MissingArtifactError(
                f"{path} is missing; run the `{producer}` subcommand first"
            )
        return path

    def _digest(self, inputs: Sequence[Path], config_subset: dict) -> str:
        h = hashlib.blake2b(digest_size=16)
        h.update(f"layout={_LAYOUT_VERSION}".encode())
        h.update(json.dumps(config_subset, sort_keys=True).encode())
        for path in inputs:
            h.update(str(path).encode())
            h.update(path.read_bytes())
        return h.hexdigest()

    def up_to_date(self, outputs: Sequence[Path], inputs: Sequence[Path], config_subset: dict) -> bool:
        """True when every output exists and the recorded input digest matches."""
        digest = self._digest(inputs, config_subset)
        key = ",".join(p.name for p in outputs)
        if (
            not self.force
            and all(p.exists() for p in outputs)
            and self._manifest.get(key) == digest
        ):
            log.info("skipping: %s up to date", key)
            return True
        self._manifest[key] = digest
        return False

    def save_manifest(self) -> None:
        self.manifest_path.write_text(json.dumps(self._manifest, sort_keys=True, indent=1))


def _model_config(cfg: dict, kind: str | None = None) -> GnnConfig:
    m = cfg["model"]
    return GnnConfig(
        kind=kind or m["kind"],
        layers=m["layers"],
        hidden_dim=m["hidden_dim"],
        out_dim=m["out_dim"],
        eps_init=m["eps_init"],
        eps_learnable=m["eps_learnable"],
        readout=m["readout"],
        walk_lengths=tuple(m["walk_lengths"]),
        walks_per_node=m["walks_per_node"],
    )


def _train_config(cfg: dict, seed: int | None = None) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        epochs=t["epochs"],
        triplets_per_query=t["triplets_per_query"],
        margin=t["margin"],
        lr=t["lr"],
        seed=cfg["seed"] if seed is None else seed,
        patience=t["patience"],
        val_fraction=t["val_fraction"],
    )


def _load_table(ws: Workspace):
    emb_path = ws.cfg["paths"].get("embeddings")
    fallback = ws.cfg["embeddings"]["fallback_seed"]
    if fallback is None:
        fallback = ws.cfg["seed"]
    if emb_path:
        return load_embeddings(emb_path, fallback_seed=fallback)
    return hashed_table(dim=ws.cfg["embeddings"]["dim"], fallback_seed=fallback)


def cmd_synth(ws: Workspace) -> None:
    s = ws.cfg["synth"]
    config = SynthConfig(
        n_docs=s["n_docs"],
        n_queries=s["n_queries"],
        vocab_size=s["vocab_size"],
        concepts_per_query=s["concepts_per_query"],
        noise_rate=s["noise_rate"],
        adversarial=s["adversarial"],
    )
    outputs = [ws.corpus_path, ws.queries_path, ws.qrels_path]
    if ws.up_to_date(outputs, [], {"synth": s, "seed": ws.cfg["seed"]}):
        return
    collection, queries, qrels = generate_synthetic(config, ws.cfg["seed"])
    write_collection(collection, ws.corpus_path)
    write_queries(queries, ws.queries_path)
    write_qrels(qrels, ws.qrels_path)
    log.info("synth: %d documents, %d queries, %d judgments", len(collection), len(queries), len(qrels))


def cmd_build_graphs(ws: Workspace) -> None:
    window = ws.cfg["conceptmap"]["window"]
    out = ws.artifact("graphs.jsonl")
    pretagged = ws.cfg["paths"].get("pretagged")
    if pretagged:
        source = Path(pretagged)
        if not source.exists():
            raise MissingArtifactError(f"pre-tagged input {source} does not exist")
        if ws.up_to_date([out], [source], {"window": window, "pretagged": True}):
            return
        maps = (tagged_to_map(doc_id, tagged, window=window) for doc_id, tagged in iter_pretagged(source))
        write_map_store(maps, out)
    else:
        source = ws.require(ws.corpus_path, "synth")
        if ws.up_to_date([out], [source], {"window": window}):
            return
        collection = load_collection(source)
        write_map_store((document_to_map(doc, window=window) for doc in collection), out)
    log.info("build-graphs: wrote %s", out)


def cmd_index(ws: Workspace) -> None:
    corpus = ws.require(ws.corpus_path, "synth")
    graphs = ws.require(ws.artifact("graphs.jsonl"), "build-graphs")
    out = ws.artifact("index.json")
    if ws.up_to_date([out], [corpus, graphs], {}):
        return
    collection = load_collection(corpus)
    maps = read_map_store(graphs)
    save_index(build_index(collection, maps.values()), out)
    log.info("index: wrote %s", out)


def cmd_retrieve(ws: Workspace) -> None:
    index_path = ws.require(ws.artifact("index.json"), "index")
    queries_path = ws.require(ws.queries_path, "synth")
    out = ws.artifact("bm25_run.txt")
    options = ws.cfg["index"]
    if ws.up_to_date([out], [index_path, queries_path], options):
        return
    index = load_index(index_path)
    queries = load_queries(queries_path)
    run = {}
    for query in queries:
        result = retrieve_topk(index, query, k=options["top_k"], k1=options["k1"], b=options["b"])
        run[query.id] = result.items
    write_run(out, run, tag="bm25")
    log.info("retrieve: wrote %s", out)


def _load_training_inputs(ws: Workspace):
    graphs = ws.require(ws.artifact("graphs.jsonl"), "build-graphs")
    queries_path = ws.require(ws.queries_path, "synth")
    qrels_path = ws.require(ws.qrels_path, "synth")
    run_path = ws.require(ws.artifact("bm25_run.txt"), "retrieve")
    maps = read_map_store(graphs)
    queries, qrels = load_topics(queries_path, qrels_path)
    candidates = {qid: [d for d, _ in items] for qid, items in read_run(run_path).items()}
    table = _load_table(ws)
    return maps, queries, qrels, candidates, table


def _maybe_index(ws: Workspace, model_config: GnnConfig):
    if model_config.readout != "tfidf":
        return None
    return load_index(ws.require(ws.artifact("index.json"), "index"))


def cmd_train(ws: Workspace) -> None:
    checkpoint = ws.artifact("checkpoint.json")
    history_csv = ws.artifact("history.csv")
    inputs = [
        ws.artifact("graphs.jsonl"),
        ws.queries_path,
        ws.qrels_path,
        ws.artifact("bm25_run.txt"),
    ]
    subset = {"model": ws.cfg["model"], "train": ws.cfg["train"], "seed": ws.cfg["seed"],
              "embeddings": ws.cfg["embeddings"]}
    for path, producer in zip(inputs, ("build-graphs", "synth", "synth", "retrieve")):
        ws.require(path, producer)
    if ws.up_to_date([checkpoint, history_csv], inputs, subset):
        return
    maps, queries, qrels, candidates, table = _load_training_inputs(ws)
    model_config = _model_config(ws.cfg)
    result = train(
        model_config,
        _train_config(ws.cfg),
        table,
        maps,
        queries,
        qrels,
        candidates,
        index=_maybe_index(ws, model_config),
    )
    save_checkpoint(
        checkpoint,
        result.bundle.params,
        extra={
            "model": asdict(result.bundle.config),
            "feature_dim": result.bundle.feature_dim,
            "walk_seed": result.bundle.walk_seed,
            "best_epoch": result.best_epoch,
        },
    )
    evalkit.write_history_csv(result.history, history_csv)
    log.info("train: wrote %s (best epoch %s)", checkpoint, result.best_epoch)


def _bundle_from_checkpoint(path: Path) -> ModelBundle:
    params, _optimizer, extra = load_checkpoint(path)
    model = extra["model"]
    model["walk_lengths"] = tuple(model["walk_lengths"])
    config = GnnConfig(**model)
    return ModelBundle(config, params, extra["feature_dim"], walk_seed=extra["walk_seed"])


def cmd_rerank(ws: Workspace) -> None:
    checkpoint = ws.require(ws.artifact("checkpoint.json"), "train")
    graphs = ws.require(ws.artifact("graphs.jsonl"), "build-graphs")
    queries_path = ws.require(ws.queries_path, "synth")
    run_path = ws.require(ws.artifact("bm25_run.txt"), "retrieve")
    out = ws.artifact("rerank_run.txt")
    if ws.up_to_date([out], [checkpoint, graphs, queries_path, run_path], {}):
        return
    bundle = _bundle_from_checkpoint(checkpoint)
    maps = read_map_store(graphs)
    table = _load_table(ws)
    for cmap in maps.values():
        attach_features(table, cmap)
    queries = load_queries(queries_path)
    query_vecs = {q.id: query_embedding(table, q) for q in queries}
    candidates = {qid: [d for d, _ in items] for qid, items in read_run(run_path).items()}
    weight_map = None
    if bundle.config.readout == "tfidf":
        index = load_index(ws.require(ws.artifact("index.json"), "index"))
        weight_map = {doc_id: tfidf_node_weights(index, cmap) for doc_id, cmap in maps.items()}
    run = rerank(bundle, candidates, maps, query_vecs, tfidf_weight_map=weight_map)
    write_run(out, run, tag=f"rerank-{bundle.config.kind}")
    log.info("rerank: wrote %s", out)


def cmd_evaluate(ws: Workspace) -> None:
    which = ws.cfg["eval"]["run"]
    if which == "rerank":
        run_path = ws.require(ws.artifact("rerank_run.txt"), "rerank")
    elif which == "bm25":
        run_path = ws.require(ws.artifact("bm25_run.txt"), "retrieve")
    else:
        run_path = Path(which)
        if not run_path.exists():
            raise MissingArtifactError(f"run file {run_path} does not exist")
    qrels_path = ws.require(ws.qrels_path, "synth")
    queries_path = ws.require(ws.queries_path, "synth")
    out = ws.artifact("metrics.csv")
    subset = {"cutoffs": ws.cfg["eval"]["cutoffs"], "run": which}
    if ws.up_to_date([out], [run_path, qrels_path, queries_path], subset):
        return
    _queries, qrels = load_topics(queries_path, qrels_path)
    report = evalkit.eval_run(read_run(run_path), qrels, ks=tuple(ws.cfg["eval"]["cutoffs"]))
    evalkit.write_metrics_csv(report, out, run_name=which)
    log.info("evaluate: wrote %s", out)


def cmd_assess_utility(ws: Workspace) -> None:
    qrels_path = ws.require(ws.qrels_path, "synth")
    queries_path = ws.require(ws.queries_path, "synth")
    run_path = ws.require(ws.artifact("bm25_run.txt"), "retrieve")
    graphs = ws.require(ws.artifact("graphs.jsonl"), "build-graphs")
    index_path = ws.require(ws.artifact("index.json"), "index")
    out = ws.artifact("utility.csv")
    subset = {"pair_cap": ws.cfg["eval"]["pair_cap"], "bm_top": ws.cfg["eval"]["bm_top"], "seed": ws.cfg["seed"]}
    if ws.up_to_date([out], [qrels_path, run_path, graphs, index_path], subset):
        return
    _queries, qrels = load_topics(queries_path, qrels_path)
    run = read_run(run_path)
    maps = read_map_store(graphs)
    index = load_index(index_path)
    idf = {mention: concept_idf(index, mention) for mention in index.concept_df}
    pairs = evalkit.build_pairs(
        qrels, run, cap=ws.cfg["eval"]["pair_cap"], seed=ws.cfg["seed"], bm_top=ws.cfg["eval"]["bm_top"]
    )
    rows = evalkit.utility_assessment(pairs, maps, idf)
    evalkit.write_utility_csv(rows, out)
    log.info("assess-utility: wrote %s", out)


def stability_single(ws: Workspace, kind: str, seed: int) -> dict[str, float]:
    """Train + rerank + evaluate one (model, seed); returns macro metrics."""
    maps, queries, qrels, candidates, table = _load_training_inputs(ws)
    model_config = _model_config(ws.cfg, kind=kind)
    result = train(
        model_config,
        _train_config(ws.cfg, seed=seed),
        table,
        maps,
        queries,
        qrels,
        candidates,
        index=_maybe_index(ws, model_config),
    )
    query_vecs = {q.id: query_embedding(table, q) for q in queries}
    weight_map = None
    if model_config.readout == "tfidf":
        index = _maybe_index(ws, model_config)
        weight_map = {doc_id: tfidf_node_weights(index, cmap) for doc_id, cmap in maps.items()}
    run = rerank(result.bundle, candidates, maps, query_vecs, tfidf_weight_map=weight_map)
    report = evalkit.eval_run(run, qrels, ks=tuple(ws.cfg["eval"]["cutoffs"]))
    return dict(report.macro)


def cmd_stability(ws: Workspace) -> None:
    models = ws.cfg["stability"]["models"]
    seeds = ws.cfg["stability"]["seeds"]
    if len(seeds) < 2:
        raise CliError("stability needs at least 2 seeds")
    runs_out = ws.artifact("stability_runs.csv")
    summary_out = ws.artifact("stability.csv")
    inputs = [
        ws.artifact("graphs.jsonl"),
        ws.queries_path,
        ws.qrels_path,
        ws.artifact("bm25_run.txt"),
    ]
    subset = {"stability": ws.cfg["stability"], "model": ws.cfg["model"], "train": ws.cfg["train"],
              "embeddings": ws.cfg["embeddings"]}
    for path, producer in zip(inputs, ("build-graphs", "synth", "synth", "retrieve")):
        ws.require(path, producer)
    if ws.up_to_date([runs_out, summary_out], inputs, subset):
        return
    per_model: dict[str, dict[str, tuple[float, float]]] = {}
    run_rows: list[tuple[str, int, str, float]] = []
    for kind in models:
        macros = []
        for seed in seeds:
            macro = stability_single(ws, kind, seed)
            macros.append(macro)
            for metric in sorted(macro):
                run_rows.append((kind, seed, metric, macro[metric]))
        reports = [evalkit.MetricReport(per_query={}, macro=m) for m in macros]
        per_model[kind] = evalkit.summarize_reports(reports)
        log.info("stability: finished %s over %d seeds", kind, len(seeds))
    with open(runs_out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "seed", "metric", "value"])
        for kind, seed, metric, value in run_rows:
            writer.writerow([kind, seed, metric, repr(float(value))])
    evalkit.write_stability_csv(per_model, summary_out)
    log.info("stability: wrote %s and %s", runs_out, summary_out)


_HANDLERS = {
    "synth": cmd_synth,
    "build-graphs": cmd_build_graphs,
    "index": cmd_index,
    "retrieve": cmd_retrieve,
    "train": cmd_train,
    "rerank": cmd_rerank,
    "evaluate": cmd_evaluate,
    "assess-utility": cmd_assess_utility,
    "stability": cmd_stability,
}


def dispatch(command: str, cfg: dict, force: bool = False) -> int:
    """Run one subcommand; returns a process exit status."""
    if command not in _HANDLERS:
        print(f"error: unknown subcommand {command!r}", file=sys.stderr)
        return 2
    ws = Workspace(cfg, force=force)
    try:
        _HANDLERS[command](ws)
        ws.save_manifest()
    except (CliError, CorpusError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conceptrank",
        description="Concept-map document retrieval: BM25 candidates re-ranked by graph models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    help_text = {
        "synth": "generate a deterministic planted-concept corpus, queries, and qrels",
        "build-graphs": "turn corpus documents (or pre-tagged input) into concept maps",
        "index": "build the inverted index with concept document frequencies",
        "retrieve": "BM25 top-K candidates per query (stage one)",
        "train": "train the configured graph model on triplets from the qrels",
        "rerank": "reorder BM25 candidates with the trained model (stage two)",
        "evaluate": "precision/recall/NDCG for the configured run file",
        "assess-utility": "concept-map pair similarity report with t statistics",
        "stability": "train every configured model across seeds; report mean and spread",
    }
    for name in COMMANDS:
        p = sub.add_parser(
            name, help=help_text[name], formatter_class=argparse.ArgumentDefaultsHelpFormatter
        )
        p.add_argument("--config", default="config.json", help="JSON configuration file")
        p.add_argument("--workdir", default=None, help="override the configured workdir")
        p.add_argument("--seed", type=int, default=None, help="override the global seed")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            dest="overrides",
            help="dotted config override (e.g. model.kind=rwpool); flags win over the file",
        )
        p.add_argument("--force", action="store_true", help="rebuild even if artifacts are up to date")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config_path = args.config
        if config_path == "config.json" and not Path(config_path).exists():
            config_path = None  # default file absent: run on built-in defaults
        cfg = load_config(config_path)
        for assignment in args.overrides:
            apply_override(cfg, assignment)
        if args.workdir is not None:
            cfg["workdir"] = args.workdir
        elif os.environ.get("CONCEPTRANK_WORKDIR"):
            cfg["workdir"] = os.environ["CONCEPTRANK_WORKDIR"]
        if args.seed is not None:
            cfg["seed"] = args.seed
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return dispatch(args.command, cfg, force=args.force)


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
