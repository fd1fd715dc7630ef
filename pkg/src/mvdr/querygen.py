"""Pseudo-query generation from document term salience.

Each document gets k short queries built from a question template plus a
few salient content terms. Salience is tf-idf over the corpus the
generator was fitted on. Sampling is top-k in both choice points: the
template is drawn uniformly from the first ``top_k`` templates, and
content terms are drawn salience-weighted (without replacement) from the
document's ``top_k`` most salient terms. With ``top_k`` of 1 every draw
collapses to the argmax, so all k queries of a document are identical.

Every document is generated with its own RNG stream derived from the base
seed and the doc_id, so outputs do not depend on corpus order or on how
the work is sharded across threads.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import Document, GeneratedQuerySet, tokenize
from .hashing import derive_seed

log = logging.getLogger(__name__)

DEFAULT_TEMPLATES = (
    "what is",
    "what",
    "how does",
    "how many",
    "when was",
    "where is",
    "why does",
    "who",
)

# content terms appended to a template per query
_TERMS_PER_QUERY = 3


@dataclass(frozen=True)
class SamplingConfig:
    """Knobs for one generation pass."""

    k_views: int = 10
    top_k: int = 10
    max_query_tokens: int = 16

    def __post_init__(self) -> None:
        if self.k_views < 1:
            raise ValueError(f"k_views must be >= 1, got {self.k_views}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.max_query_tokens < 1:
            raise ValueError(f"max_query_tokens must be >= 1, got {self.max_query_tokens}")


@dataclass(frozen=True)
class QGModel:
    """A fitted generator: per-document term salience plus templates."""

    salience: Mapping[str, Mapping[str, float]]
    templates: tuple[str, ...]
    rng_seed: int

    def __post_init__(self) -> None:
        if not self.templates:
            raise ValueError("QGModel needs at least one template")


def fit_qg(
    corpus: Sequence[Document],
    seed: int = 0,
    templates: Sequence[str] = DEFAULT_TEMPLATES,
) -> QGModel:
    """Fit tf-idf salience over the corpus.

    idf uses add-one smoothing, ``log((1 + N) / (1 + df)) + 1``, so a
    single-document corpus still yields positive weights.
    """
    if not corpus:
        raise ValueError("cannot fit a query generator on an empty corpus")
    doc_terms: dict[str, dict[str, int]] = {}
    df: dict[str, int] = {}
    for doc in corpus:
        counts: dict[str, int] = {}
        for token in tokenize(doc.text):
            counts[token] = counts.get(token, 0) + 1
        doc_terms[doc.doc_id] = counts
        for term in counts:
            df[term] = df.get(term, 0) + 1
    n_docs = len(corpus)
    idf = {
        term: math.log((1 + n_docs) / (1 + count)) + 1.0 for term, count in df.items()
    }
    salience = {
        doc_id: {term: tf * idf[term] for term, tf in counts.items()}
        for doc_id, counts in doc_terms.items()
    }
    return QGModel(salience=salience, templates=tuple(templates), rng_seed=seed)


def _term_pool(
    weights: Mapping[str, float], top_k: int
) -> tuple[list[str], np.ndarray]:
    """The document's top-salience terms, ties broken alphabetically."""
    ranked = sorted(weights.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    terms = [t for t, _ in ranked]
    return terms, np.asarray([w for _, w in ranked], dtype=np.float64)


def generate(
    model: QGModel, doc: Document, cfg: SamplingConfig, seed: int | None = None
) -> GeneratedQuerySet:
    """Generate ``cfg.k_views`` queries for one document.

    The document must belong to the fitted corpus and have at least one
    in-vocabulary token. Identical (model, doc, cfg, seed) always yields
    identical queries.
    """
    weights = model.salience.get(doc.doc_id)
    if weights is None:
        raise ValueError(f"document {doc.doc_id!r} is not in the generator's corpus")
    if not weights:
        raise ValueError(f"document {doc.doc_id!r} has no usable terms")
    if seed is None:
        seed = model.rng_seed
    rng = np.random.Generator(np.random.PCG64(seed))
    pool_terms, pool_weights = _term_pool(weights, cfg.top_k)
    n_templates = min(cfg.top_k, len(model.templates))
    queries = []
    for _ in range(cfg.k_views):
        template_tokens = model.templates[int(rng.integers(0, n_templates))].split()
        budget = max(0, cfg.max_query_tokens - len(template_tokens))
        n_terms = min(_TERMS_PER_QUERY, len(pool_terms), budget)
        chosen: list[str] = []
        avail_terms = list(pool_terms)
        avail_weights = pool_weights.copy()
        for _ in range(n_terms):
            probs = avail_weights / avail_weights.sum()
            j = int(rng.choice(len(avail_terms), p=probs))
            chosen.append(avail_terms.pop(j))
            avail_weights = np.delete(avail_weights, j)
        tokens = (template_tokens + chosen)[: cfg.max_query_tokens]
        queries.append(" ".join(tokens))
    return GeneratedQuerySet(doc_id=doc.doc_id, queries=tuple(queries))


def generate_corpus(
    model: QGModel,
    corpus: Sequence[Document],
    cfg: SamplingConfig,
    seed: int | None = None,
    threads: int | None = None,
) -> list[GeneratedQuerySet]:
    """Generate query sets for every document.

    Each document's RNG stream is derived from (seed, doc_id), so results
    are invariant to corpus order and thread count.
    """
    if seed is None:
        seed = model.rng_seed

    def one(doc: Document) -> GeneratedQuerySet:
        return generate(model, doc, cfg, seed=derive_seed(seed, doc.doc_id))

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sets = list(pool.map(one, corpus))
    else:
        sets = [one(doc) for doc in corpus]
    log.info("generated %d queries for %d documents", cfg.k_views, len(sets))
    return sets
