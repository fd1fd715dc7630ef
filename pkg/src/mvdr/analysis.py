"""Query-set analysis: quality, diversity, and their link to retrieval.

Quality of generated queries is measured by the best ROUGE-L F-score
against the document's gold queries. Diversity within a document's query
set is measured by self-BLEU-4 (higher self-BLEU means the queries repeat
each other). Documents are bucketed into five equal-width diversity
levels over the observed self-BLEU range, and per-level retrieval and
quality averages expose how diversity relates to effectiveness.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import GeneratedQuerySet, tokenize

log = logging.getLogger(__name__)

N_DIVERSITY_LEVELS = 5

_BLEU_MAX_ORDER = 4
_BLEU_EPS = 1e-9


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length, O(len(a) * len(b))."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """ROUGE-L F-measure (equal precision/recall weight) over word tokens.

    0 when the texts share no common subsequence; raises if either side
    has no tokens at all.
    """
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand:
        raise ValueError(f"candidate has no tokens: {candidate!r}")
    if not ref:
        raise ValueError(f"reference has no tokens: {reference!r}")
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2.0 * precision * recall / (precision + recall)


def max_rouge_l(candidates: Sequence[str], references: Sequence[str]) -> float:
    """Best ROUGE-L of any candidate against any reference."""
    if not candidates:
        raise ValueError("no candidate queries")
    if not references:
        raise ValueError("no reference queries")
    return max(rouge_l(c, r) for c in candidates for r in references)


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _bleu4(hypothesis: Sequence[str], references: Sequence[Sequence[str]]) -> float:
    """BLEU-4 of one hypothesis against multiple references.

    Modified n-gram precision clips counts by the max reference count.
    Orders with no overlap (or no n-grams) fall back to a tiny epsilon so
    the geometric mean stays defined. Brevity penalty uses the reference
    whose length is closest to the hypothesis, ties to the shorter.
    """
    h_len = len(hypothesis)
    log_precisions = []
    for n in range(1, _BLEU_MAX_ORDER + 1):
        h_counts = _ngram_counts(hypothesis, n)
        total = sum(h_counts.values())
        if total == 0:
            log_precisions.append(math.log(_BLEU_EPS))
            continue
        max_ref: Counter = Counter()
        for ref in references:
            for gram, count in _ngram_counts(ref, n).items():
                if count > max_ref[gram]:
                    max_ref[gram] = count
        clipped = sum(min(count, max_ref[gram]) for gram, count in h_counts.items())
        precision = clipped / total if clipped > 0 else _BLEU_EPS
        log_precisions.append(math.log(precision))
    geo_mean = math.exp(sum(log_precisions) / _BLEU_MAX_ORDER)
    closest_ref_len = min((abs(len(r) - h_len), len(r)) for r in references)[1]
    if h_len >= closest_ref_len:
        bp = 1.0
    elif h_len == 0:
        bp = 0.0
    else:
        bp = math.exp(1.0 - closest_ref_len / h_len)
    return bp * geo_mean


def self_bleu_4(queries: Sequence[str]) -> float:
    """Mean BLEU-4 of each query against its siblings as references.

    High values mean the queries restate each other; identical queries
    score 1. Needs at least two queries.
    """
    if len(queries) < 2:
        raise ValueError(f"self-BLEU needs at least 2 queries, got {len(queries)}")
    token_lists = [tokenize(q) for q in queries]
    for i, tokens in enumerate(token_lists):
        if not tokens:
            raise ValueError(f"query {i} has no tokens: {queries[i]!r}")
    scores = []
    for i, hyp in enumerate(token_lists):
        refs = token_lists[:i] + token_lists[i + 1 :]
        scores.append(_bleu4(hyp, refs))
    return float(sum(scores) / len(scores))


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pearson correlation; raises on length mismatch, n < 2, or zero variance."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape:
        raise ValueError(f"length mismatch: {xs.shape} vs {ys.shape}")
    if xs.size < 2:
        raise ValueError("pearson needs at least 2 points")
    if np.ptp(xs) == 0 or np.ptp(ys) == 0:
        raise ValueError("pearson undefined for a zero-variance series")
    return float(np.corrcoef(xs, ys)[0, 1])


# ---------------------------------------------------------------------------
# Per-document records and diversity bucketing


@dataclass(frozen=True)
class QualityRecord:
    """Generated-query quality for one document."""

    doc_id: str
    max_rouge_l: float


@dataclass(frozen=True)
class DiversityRecord:
    """Within-set diversity for one document (level set after bucketing)."""

    doc_id: str
    self_bleu: float
    level: int


@dataclass(frozen=True)
class LevelSummary:
    """Aggregates over the documents in one diversity level."""

    level: int
    lo: float
    hi: float
    n_docs: int
    mean_metric: float | None
    mean_quality: float | None


def quality_records(
    generated: Sequence[GeneratedQuerySet], gold_by_doc: Mapping[str, Sequence[str]]
) -> list[QualityRecord]:
    """Max-ROUGE-L per document, for documents that have gold queries."""
    records = []
    for qset in generated:
        gold = gold_by_doc.get(qset.doc_id)
        if not gold:
            continue
        records.append(QualityRecord(qset.doc_id, max_rouge_l(qset.queries, gold)))
    return records


def assign_levels(values: Sequence[float]) -> list[int]:
    """Bucket values into equal-width levels over their observed range.

    Level ``N_DIVERSITY_LEVELS`` holds the highest values. A degenerate
    range (all values equal) puts everything in the top level.
    """
    if not values:
        return []
    lo = min(values)
    hi = max(values)
    if hi == lo:
        return [N_DIVERSITY_LEVELS] * len(values)
    width = (hi - lo) / N_DIVERSITY_LEVELS
    return [min(N_DIVERSITY_LEVELS, int((v - lo) / width) + 1) for v in values]


def diversity_records(generated: Sequence[GeneratedQuerySet]) -> list[DiversityRecord]:
    """Self-BLEU per document plus its diversity level."""
    scores = [self_bleu_4(qset.queries) for qset in generated]
    levels = assign_levels(scores)
    return [
        DiversityRecord(qset.doc_id, score, level)
        for qset, score, level in zip(generated, scores, levels)
    ]


def level_summaries(
    records: Sequence[DiversityRecord],
    metric_by_doc: Mapping[str, float] | None = None,
    quality_by_doc: Mapping[str, float] | None = None,
) -> list[LevelSummary]:
    """Per-level document counts and mean metric/quality.

    Levels with no documents are omitted. A level's mean is None when no
    document in it has the corresponding value.
    """
    if not records:
        return []
    scores = [r.self_bleu for r in records]
    lo, hi = min(scores), max(scores)
    width = (hi - lo) / N_DIVERSITY_LEVELS if hi > lo else 0.0
    summaries = []
    for level in range(1, N_DIVERSITY_LEVELS + 1):
        members = [r for r in records if r.level == level]
        if not members:
            continue
        metric_vals = (
            [metric_by_doc[r.doc_id] for r in members if r.doc_id in metric_by_doc]
            if metric_by_doc is not None
            else []
        )
        quality_vals = (
            [quality_by_doc[r.doc_id] for r in members if r.doc_id in quality_by_doc]
            if quality_by_doc is not None
            else []
        )
        if width > 0:
            level_lo = lo + (level - 1) * width
            level_hi = lo + level * width
        else:
            level_lo = level_hi = lo
        summaries.append(
            LevelSummary(
                level=level,
                lo=level_lo,
                hi=level_hi,
                n_docs=len(members),
                mean_metric=float(np.mean(metric_vals)) if metric_vals else None,
                mean_quality=float(np.mean(quality_vals)) if quality_vals else None,
            )
        )
    return summaries


def doc_metric_from_queries(
    per_query_metric: Mapping[str, float], positives: Mapping[str, Sequence[str]]
) -> dict[str, float]:
    """Roll a per-query metric up to documents via their linked queries.

    ``positives`` maps query_id to the doc_ids it is relevant to; a
    document's value is the mean over the queries linked to it.
    """
    by_doc: dict[str, list[float]] = {}
    for query_id, value in per_query_metric.items():
        for doc_id in positives.get(query_id, ()):
            by_doc.setdefault(doc_id, []).append(value)
    return {doc_id: float(np.mean(vals)) for doc_id, vals in by_doc.items()}


@dataclass(frozen=True)
class SweepPoint:
    """Quality (and optionally retrieval) using only the first k views."""

    k: int
    mean_max_rouge_l: float
    retrieval_metric: float | None


def sweep_views(
    k_values: Sequence[int],
    generated: Sequence[GeneratedQuerySet],
    gold_by_doc: Mapping[str, Sequence[str]],
    retrieval_eval: Callable[[Sequence[GeneratedQuerySet]], float] | None = None,
) -> list[SweepPoint]:
    """Evaluate truncated query sets at each k.

    ``retrieval_eval``, when given, receives the truncated sets and
    returns an aggregate retrieval metric (it typically rebuilds an index
    and runs evaluation). Raises if any k exceeds the available views.
    """
    if not generated:
        raise ValueError("no generated query sets to sweep")
    available = min(len(qset.queries) for qset in generated)
    points = []
    for k in k_values:
        if k < 1 or k > available:
            raise ValueError(f"cannot sweep k={k}: only {available} views available")
        truncated = [
            GeneratedQuerySet(qset.doc_id, qset.queries[:k]) for qset in generated
        ]
        quality = quality_records(truncated, gold_by_doc)
        if not quality:
            raise ValueError("no documents with gold queries to score")
        mean_quality = float(np.mean([r.max_rouge_l for r in quality]))
        metric = retrieval_eval(truncated) if retrieval_eval is not None else None
        points.append(SweepPoint(k, mean_quality, metric))
    return points


# ---------------------------------------------------------------------------
# CSV writers


def write_quality_csv(records: Sequence[QualityRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("doc_id,max_rouge_l\n")
        for r in records:
            handle.write(f"{r.doc_id},{r.max_rouge_l:.6f}\n")


def write_diversity_csv(records: Sequence[DiversityRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("doc_id,self_bleu_4,level\n")
        for r in records:
            handle.write(f"{r.doc_id},{r.self_bleu:.6f},{r.level}\n")


def write_level_csv(summaries: Sequence[LevelSummary], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("level,lo,hi,n_docs,mean_metric,mean_quality\n")
        for s in summaries:
            metric = f"{s.mean_metric:.6f}" if s.mean_metric is not None else ""
            quality = f"{s.mean_quality:.6f}" if s.mean_quality is not None else ""
            handle.write(f"{s.level},{s.lo:.6f},{s.hi:.6f},{s.n_docs},{metric},{quality}\n")


def write_sweep_csv(points: Sequence[SweepPoint], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("k,mean_max_rouge_l,retrieval_metric\n")
        for p in points:
            metric = f"{p.retrieval_metric:.6f}" if p.retrieval_metric is not None else ""
            handle.write(f"{p.k},{p.mean_max_rouge_l:.6f},{metric}\n")
