"""Synthetic retrieval collection for end-to-end training tests.

The collection makes one embedding per document a structurally poor fit
by combining multi-intent documents with a bounded encoder window:

* every document covers two unrelated topics, each expressed through six
  document-specific content terms, and both topics carry gold queries, so
  a single document vector has to encode twelve distinct query terms and
  the whole corpus needs far more separable directions than the embedding
  has dimensions;
* the second topic's section sits entirely beyond ``DOC_TOKEN_CAP``
  tokens, so an encoder that truncates the document there never sees it;
  pseudo-query generation reads the full text, so generated views can
  re-inject the hidden topic's terms into the encoded window;
* gold queries are keyword queries over one topic's terms: training
  queries use two terms, evaluation queries use three different terms of
  the same topic, and the remaining term never occurs in any query, so a
  model cannot memorize its way to evaluation performance through the
  training triples alone.

Hard negatives per query are the same entity's other documents; entity
names appear only in document text, never in queries, so entity matching
cannot substitute for topic matching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mvdr.corpus import Document, Qrels, Query, TrainingTriple

# Stems for document-specific content terms; a term is a stem plus the
# document ordinal and a slot digit, e.g. "harbor1023".
STEMS = (
    "harbor", "ledger", "turbine", "orchard", "granite", "lantern",
    "furnace", "paddock", "quarry", "saddle", "timber", "vessel",
    "anchor", "barrel", "copper", "dagger", "ember", "falcon",
    "garnet", "hammer", "ingot", "jetty", "kettle", "lattice",
)

FILLER = ("records", "notes", "describe", "general", "background", "material")

# Document-encoder window used by the training tests. The first topic
# section fits inside it; the second starts exactly at this boundary.
DOC_TOKEN_CAP = 16

_TERMS_PER_TOPIC = 6


@dataclass(frozen=True)
class SynthCollection:
    docs: list[Document]
    queries: list[Query]  # held-out evaluation queries
    qrels: Qrels  # judgments for the evaluation queries
    triples: list[TrainingTriple]  # built from the training queries only
    # evaluation query texts per doc_id, for quality analysis
    gold_by_doc: dict[str, list[str]]


def _entity_name(i: int) -> str:
    # pronounceable unique names keep entity tokens distinctive
    first = ("zan", "bel", "cor", "dus", "fen", "gil", "hob", "jar", "kel", "lum")
    second = ("ara", "enta", "iris", "osta", "umbra", "yxa", "ephor", "aldo", "inea", "ovak")
    return f"{first[i % 10]}{second[(i // 10) % 10]}{i}"


def _topic_terms(doc_ordinal: int, topic: int, rng: np.random.Generator) -> list[str]:
    start = int(rng.integers(0, len(STEMS)))
    return [
        f"{STEMS[(start + s) % len(STEMS)]}{doc_ordinal}{topic * _TERMS_PER_TOPIC + s}"
        for s in range(_TERMS_PER_TOPIC)
    ]


def build_synth(
    n_entities: int = 125,
    docs_per_entity: int = 4,
    negatives: int = 7,
    seed: int = 1234,
) -> SynthCollection:
    """Build the collection; 125 * 4 gives the standard 500 documents."""
    if negatives < docs_per_entity - 1:
        raise ValueError("need at least the entity's other documents as negatives")
    rng = np.random.default_rng(seed)
    docs: list[Document] = []
    queries: list[Query] = []
    qrels_entries: dict[tuple[str, str], int] = {}
    gold_by_doc: dict[str, list[str]] = {}
    doc_ids_by_entity: list[list[str]] = []
    train_items: list[tuple[Query, str, int]] = []  # (query, positive id, entity)

    ordinal = 0
    for e in range(n_entities):
        entity = _entity_name(e)
        entity_docs: list[str] = []
        for j in range(docs_per_entity):
            doc_id = f"e{e:03d}d{j}"
            topic1 = _topic_terms(ordinal, 0, rng)
            topic2 = _topic_terms(ordinal, 1, rng)
            ordinal += 1
            shown1 = list(topic1)
            shown2 = list(topic2)
            rng.shuffle(shown1)
            rng.shuffle(shown2)
            # visible window: entity + first topic, padded with filler to
            # exactly DOC_TOKEN_CAP tokens
            visible = [entity] + shown1
            while len(visible) < DOC_TOKEN_CAP:
                visible.append(FILLER[int(rng.integers(0, len(FILLER)))])
            if len(visible) != DOC_TOKEN_CAP:
                raise AssertionError("visible section exceeds the token cap")
            # hidden tail: second topic, past the encoder window
            hidden = shown2 + [entity]
            docs.append(Document(doc_id, " ".join(visible + hidden)))
            entity_docs.append(doc_id)

            # per topic: one two-term training query and one held-out
            # three-term evaluation query over disjoint picks; the last
            # term stays out of every query
            for topic_idx, terms in enumerate((topic1, topic2)):
                picked = rng.permutation(len(terms))
                suffix = "v" if topic_idx == 0 else "h"
                train_text = f"{terms[picked[0]]} {terms[picked[1]]}"
                train_items.append(
                    (Query(f"t{e:03d}{j}{suffix}", train_text), doc_id, e)
                )
                eval_id = f"q{e:03d}{j}{suffix}"
                eval_text = (
                    f"{terms[picked[2]]} {terms[picked[3]]} {terms[picked[4]]}"
                )
                queries.append(Query(eval_id, eval_text))
                qrels_entries[(eval_id, doc_id)] = 1
                gold_by_doc.setdefault(doc_id, []).append(eval_text)
        doc_ids_by_entity.append(entity_docs)

    doc_by_id = {d.doc_id: d for d in docs}
    qrels = Qrels(qrels_entries)

    triples: list[TrainingTriple] = []
    for query, positive_id, e in train_items:
        own = [d for d in doc_ids_by_entity[e] if d != positive_id]
        others = [d.doc_id for d in docs if not d.doc_id.startswith(f"e{e:03d}")]
        picks = rng.choice(len(others), size=negatives - len(own), replace=False)
        neg_ids = own + [others[int(i)] for i in picks]
        triples.append(
            TrainingTriple(
                query=query,
                positive=doc_by_id[positive_id],
                negatives=tuple(doc_by_id[n] for n in neg_ids),
            )
        )
    return SynthCollection(docs, queries, qrels, triples, gold_by_doc)
