"""Retrieval metrics, concept-map utility assessment, and stability summaries."""

from __future__ import annotations

import csv
import logging
import math
import random
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

from .conceptmap import ConceptMap
from .corpus import Qrels

log = logging.getLogger(__name__)

DEFAULT_CUTOFFS = (10, 20)
DEFAULT_BM_TOP = 20

RunRanking = dict[str, list[tuple[str, float]]]


@dataclass
class MetricReport:
    """Per-query and macro-averaged metric values; macro = mean over evaluated queries."""

    per_query: dict[str, dict[str, float]]  # metric -> query id -> value
    macro: dict[str, float]
    skipped: list[str] = field(default_factory=list)

    def metrics(self) -> list[str]:
        return list(self.macro)


def _dcg(grades: Sequence[int], k: int) -> float:
    total = 0.0
    for rank, grade in enumerate(grades[:k], start=1):
        total += (2.0**grade - 1.0) / math.log2(rank + 1)
    return total


def eval_run(run: Mapping[str, Sequence[tuple[str, float]]], qrels: Qrels, ks: Sequence[int] = DEFAULT_CUTOFFS) -> MetricReport:
    """Precision, recall, and NDCG at each cutoff.

    Queries missing from the qrels, or with no relevant document judged, are
    excluded from the averages and reported in `skipped`.
    """
    ks = sorted(set(ks))
    if not ks or min(ks) < 1:
        raise ValueError(f"cutoffs must be positive, got {ks}")
    judged_queries = set(qrels.query_ids())
    metric_names = [f"{m}@{k}" for k in ks for m in ("p", "r", "ndcg")]
    per_query: dict[str, dict[str, float]] = {m: {} for m in metric_names}
    skipped: list[str] = []
    for qid in sorted(run):
        if qid not in judged_queries:
            skipped.append(qid)
            continue
        grades = qrels.grades_for(qid)
        n_relevant = sum(1 for g in grades.values() if g > 0)
        if n_relevant == 0:
            skipped.append(qid)
            continue
        ranked_grades = [grades.get(doc_id, 0) for doc_id, _ in run[qid]]
        ideal = sorted(grades.values(), reverse=True)
        for k in ks:
            top = ranked_grades[:k]
            hits = sum(1 for g in top if g > 0)
            per_query[f"p@{k}"][qid] = hits / k
            per_query[f"r@{k}"][qid] = hits / n_relevant
            ideal_dcg = _dcg(ideal, k)
            per_query[f"ndcg@{k}"][qid] = _dcg(ranked_grades, k) / ideal_dcg if ideal_dcg > 0 else 0.0
    macro = {}
    for name in metric_names:
        values = per_query[name]
        macro[name] = sum(values.values()) / len(values) if values else 0.0
    if skipped:
        log.warning("eval_run skipped %d queries with no usable judgments", len(skipped))
    return MetricReport(per_query=per_query, macro=macro, skipped=skipped)


# ---------------------------------------------------------------------------
# Concept-map utility assessment
# ---------------------------------------------------------------------------


@dataclass
class PairSets:
    """Document pairs per query: both relevant, relevant vs judged-irrelevant,
    and relevant vs BM25 top ranked."""

    pos_pos: list[tuple[str, str, str]] = field(default_factory=list)
    pos_neg: list[tuple[str, str, str]] = field(default_factory=list)
    pos_bm: list[tuple[str, str, str]] = field(default_factory=list)

    def by_type(self) -> dict[str, list[tuple[str, str, str]]]:
        return {"pos_pos": self.pos_pos, "pos_neg": self.pos_neg, "pos_bm": self.pos_bm}


def build_pairs(
    qrels: Qrels,
    run: Mapping[str, Sequence[tuple[str, float]]],
    cap: int | None = None,
    seed: int = 0,
    bm_top: int = DEFAULT_BM_TOP,
) -> PairSets:
    """Exhaustive pairs per query; a per-type cap triggers seeded subsampling."""
    pairs = PairSets()
    for qid in qrels.query_ids():
        positives = qrels.positives(qid)
        negatives = qrels.judged_negatives(qid)
        bm_docs = [doc_id for doc_id, _ in run.get(qid, [])[:bm_top]]
        pairs.pos_pos.extend((qid, a, b) for a, b in combinations(positives, 2))
        pairs.pos_neg.extend((qid, a, b) for a in positives for b in negatives)
        pairs.pos_bm.extend((qid, a, b) for a in positives for b in bm_docs if a != b)
    if cap is not None:
        rng = random.Random(seed)
        for name, bucket in pairs.by_type().items():
            if len(bucket) > cap:
                sampled = rng.sample(bucket, cap)
                setattr(pairs, name, sampled)
    return pairs


class SimilarityValues(NamedTuple):
    ncr: float
    ncr_plus: float
    ecr: float
    ecr_plus: float


def pair_similarity(
    map_a: ConceptMap,
    map_b: ConceptMap,
    idf: Mapping[str, float] | None = None,
) -> SimilarityValues:
    """Node and edge coincidence rates, plain and tf-idf weighted.

    Node identity is the normalized mention string.  A mention's weight is
    idf times its frequency averaged over the documents that contain it, so
    uniform weights reduce NCR+ to NCR exactly; `idf` defaults to 1 per
    mention.  Two empty maps score 0 on all four measures.
    """
    freqs_a = map_a.mention_freqs()
    freqs_b = map_b.mention_freqs()
    union = set(freqs_a) | set(freqs_b)
    inter = set(freqs_a) & set(freqs_b)

    def weight(mention: str) -> float:
        base = 1.0 if idf is None else idf.get(mention, 1.0)
        freq_a = freqs_a.get(mention, 0)
        freq_b = freqs_b.get(mention, 0)
        present = (freq_a > 0) + (freq_b > 0)
        return base * (freq_a + freq_b) / present if present else 0.0

    ncr = len(inter) / len(union) if union else 0.0
    union_weight = sum(weight(m) for m in union)
    inter_weight = sum(weight(m) for m in inter)
    ncr_plus = inter_weight / union_weight if union_weight > 0 else 0.0

    edges_a = map_a.edge_mention_pairs()
    edges_b = map_b.edge_mention_pairs()
    edge_union = edges_a | edges_b
    edge_inter = edges_a & edges_b
    ecr = len(edge_inter) / len(edge_union) if edge_union else 0.0
    union_ew = sum(weight(a) * weight(b) for a, b in edge_union)
    inter_ew = sum(weight(a) * weight(b) for a, b in edge_inter)
    ecr_plus = inter_ew / union_ew if union_ew > 0 else 0.0
    return SimilarityValues(ncr, ncr_plus, ecr, ecr_plus)


def t_score(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    """Two-sample pooled-variance (Student's) t statistic."""
    n_a, n_b = len(sample_a), len(sample_b)
    if n_a < 2 or n_b < 2:
        raise ValueError(f"both samples need >= 2 values, got {n_a} and {n_b}")
    mean_a = sum(sample_a) / n_a
    mean_b = sum(sample_b) / n_b
    var_a = sum((x - mean_a) ** 2 for x in sample_a) / (n_a - 1)
    var_b = sum((x - mean_b) ** 2 for x in sample_b) / (n_b - 1)
    pooled = ((n_a - 1) * var_a + (n_b - 1) * var_b) / (n_a + n_b - 2)
    if pooled == 0.0:
        raise ValueError("zero pooled variance: both samples are constant")
    return (mean_a - mean_b) / math.sqrt(pooled * (1.0 / n_a + 1.0 / n_b))


@dataclass
class UtilityRow:
    pair_type: str
    n_pairs: int
    ncr: float
    ncr_plus: float
    ecr: float
    ecr_plus: float
    t_ncr: float | None = None
    t_ncr_plus: float | None = None
    t_ecr: float | None = None
    t_ecr_plus: float | None = None


def utility_assessment(
    pairs: PairSets,
    maps: Mapping[str, ConceptMap],
    idf: Mapping[str, float] | None = None,
) -> list[UtilityRow]:
    """Mean similarity per pair type plus t statistics against the Pos-Pos group."""
    samples: dict[str, dict[str, list[float]]] = {}
    measures = SimilarityValues._fields
    for pair_type, bucket in pairs.by_type().items():
        values: dict[str, list[float]] = {m: [] for m in measures}
        for _qid, doc_a, doc_b in bucket:
            sims = pair_similarity(maps[doc_a], maps[doc_b], idf)
            for m in measures:
                values[m].append(getattr(sims, m))
        samples[pair_type] = values

    def safe_t(a: list[float], b: list[float]) -> float | None:
        try:
            return t_score(a, b)
        except ValueError:
            return None

    rows: list[UtilityRow] = []
    base = samples["pos_pos"]
    for pair_type in ("pos_pos", "pos_neg", "pos_bm"):
        values = samples[pair_type]
        count = len(values["ncr"])
        means = {m: (sum(values[m]) / count if count else 0.0) for m in measures}
        row = UtilityRow(pair_type, count, means["ncr"], means["ncr_plus"], means["ecr"], means["ecr_plus"])
        if pair_type != "pos_pos":
            row.t_ncr = safe_t(base["ncr"], values["ncr"])
            row.t_ncr_plus = safe_t(base["ncr_plus"], values["ncr_plus"])
            row.t_ecr = safe_t(base["ecr"], values["ecr"])
            row.t_ecr_plus = safe_t(base["ecr_plus"], values["ecr_plus"])
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Stability over seeds
# ---------------------------------------------------------------------------


def summarize_reports(reports: Sequence[MetricReport]) -> dict[str, tuple[float, float]]:
    """Mean and sample standard deviation of each macro metric across reports."""
    if len(reports) < 2:
        raise ValueError("stability needs at least 2 reports")
    names = reports[0].metrics()
    summary: dict[str, tuple[float, float]] = {}
    for name in names:
        values = [r.macro[name] for r in reports]
        mean = sum(values) / len(values)
        var = sum((v - mean) ** 2 for v in values) / (len(values) - 1)
        summary[name] = (mean, math.sqrt(var))
    return summary


# ---------------------------------------------------------------------------
# CSV writers (deterministic formatting)
# ---------------------------------------------------------------------------


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_metrics_csv(report: MetricReport, path: str | Path, run_name: str = "run") -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "query_id", "metric", "value"])
        for metric in report.metrics():
            for qid in sorted(report.per_query[metric]):
                writer.writerow([run_name, qid, metric, _fmt(report.per_query[metric][qid])])
        for metric in report.metrics():
            writer.writerow([run_name, "all", metric, _fmt(report.macro[metric])])


def write_utility_csv(rows: Iterable[UtilityRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["pair_type", "n_pairs", "ncr", "ncr_plus", "ecr", "ecr_plus",
             "t_ncr", "t_ncr_plus", "t_ecr", "t_ecr_plus"]
        )
        for row in rows:
            writer.writerow(
                [row.pair_type, row.n_pairs, _fmt(row.ncr), _fmt(row.ncr_plus),
                 _fmt(row.ecr), _fmt(row.ecr_plus), _fmt(row.t_ncr),
                 _fmt(row.t_ncr_plus), _fmt(row.t_ecr), _fmt(row.t_ecr_plus)]
            )


def write_stability_csv(
    summaries: Mapping[str, Mapping[str, tuple[float, float]]], path: str | Path
) -> None:
    """Rows (model, metric, mean, stddev), models and metrics in sorted order."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "metric", "mean", "stddev"])
        for model in sorted(summaries):
            for metric in sorted(summaries[model]):
                mean, std = summaries[model][metric]
                writer.writerow([model, metric, _fmt(mean), _fmt(std)])


def write_history_csv(history: Sequence, path: str | Path) -> None:
    """Training curve rows (epoch, mean_loss, val_ndcg20)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "val_ndcg20"])
        for row in history:
            writer.writerow([row.epoch, _fmt(row.mean_loss), _fmt(row.val_ndcg20)])
