"""Descriptor ranking and the retrieval metric suite.

Protocol: every database record is used once as a query against all the
others (the query never ranks itself). Ordering is by descending cosine
similarity, which on unit vectors is the dot product; ties break by
ascending object id. Relevance is binary: same class label as the query.

Metrics per query, with R = number of same-class records excluding the
query (metrics are 0 when R = 0):

  AP      mean of precision@k over the ranks k holding relevant items,
          divided by R (computed over the full list)
  F1@N    harmonic mean of precision and recall in the top N, N = R
  NDCG@N  binary-gain DCG over the top N divided by the ideal DCG, N = R

Aggregation: micro averages over all queries, macro averages the per-class
means, and micro+macro is the arithmetic mean of the two.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .formats import DescriptorRecord

METRIC_NAMES = ("f1_at_n", "map", "ndcg_at_n")
SETTINGS = ("micro", "macro", "micro_macro")


@dataclass
class RankedList:
    query_id: str
    ordered_ids: list[str]
    relevance: np.ndarray  # same length as ordered_ids, 1 where class matches


@dataclass
class MetricReport:
    values: dict  # setting -> metric -> float
    per_class: dict  # label -> {"count": int, metric -> float}

    def fmt(self) -> str:
        lines = ["metric\t" + "\t".join(SETTINGS)]
        for metric in METRIC_NAMES:
            row = "\t".join(f"{self.values[s][metric]:.6f}" for s in SETTINGS)
            lines.append(f"{metric}\t{row}")
        lines.append("")
        lines.append("class\tcount\t" + "\t".join(METRIC_NAMES))
        for label in sorted(self.per_class):
            stats = self.per_class[label]
            row = "\t".join(f"{stats[m]:.6f}" for m in METRIC_NAMES)
            lines.append(f"{label}\t{stats['count']}\t{row}")
        return "\n".join(lines) + "\n"


def rank_all(records: list[DescriptorRecord]) -> list[RankedList]:
    """Rank every record against all others by cosine similarity."""
    if len(records) < 2:
        raise ContractError("ranking needs at least two records")
    vectors = np.stack([r.vector for r in records])
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        worst = float(np.abs(norms - 1.0).max())
        raise ContractError(f"descriptors must be unit-norm (max deviation {worst:.3g})")
    labels = np.array([r.label for r in records])
    ids = [r.object_id for r in records]
    sims = vectors @ vectors.T
    out: list[RankedList] = []
    for qi in range(len(records)):
        others = [i for i in range(len(records)) if i != qi]
        # sort by (-similarity, id); python sort is stable and exact on tuples
        others.sort(key=lambda i: (-sims[qi, i], ids[i]))
        rel = (labels[others] == labels[qi]).astype(np.int64)
        out.append(RankedList(ids[qi], [ids[i] for i in others], rel))
    return out


def average_precision(ranked: RankedList) -> float:
    rel = ranked.relevance
    total = int(rel.sum())
    if total == 0:
        return 0.0
    hits = np.cumsum(rel)
    ranks = np.arange(1, len(rel) + 1)
    return float((hits[rel == 1] / ranks[rel == 1]).sum() / total)


def f1_at_n(ranked: RankedList) -> float:
    rel = ranked.relevance
    total = int(rel.sum())
    if total == 0:
        return 0.0
    hits = int(rel[:total].sum())
    precision = hits / total
    recall = hits / total
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def ndcg_at_n(ranked: RankedList) -> float:
    rel = ranked.relevance
    total = int(rel.sum())
    if total == 0:
        return 0.0
    discounts = 1.0 / np.log2(np.arange(2, total + 2))
    dcg = float((rel[:total] * discounts).sum())
    ideal = float(discounts.sum())
    return dcg / ideal


_PER_QUERY = {"map": average_precision, "f1_at_n": f1_at_n, "ndcg_at_n": ndcg_at_n}


def aggregate_metrics(ranked_lists: list[RankedList], labels: dict[str, int]) -> MetricReport:
    """Micro/macro/micro+macro aggregation plus a per-class breakdown."""
    if not ranked_lists:
        raise ContractError("cannot aggregate over an empty corpus")
    per_query = {
        m: np.array([fn(r) for r in ranked_lists]) for m, fn in _PER_QUERY.items()
    }
    query_labels = np.array([labels[r.query_id] for r in ranked_lists])
    classes = sorted(set(query_labels.tolist()))
    values = {s: {} for s in SETTINGS}
    per_class: dict[int, dict] = {
        c: {"count": int((query_labels == c).sum())} for c in classes
    }
    for metric in METRIC_NAMES:
        scores = per_query[metric]
        micro = float(scores.mean())
        class_means = []
        for c in classes:
            mean_c = float(scores[query_labels == c].mean())
            per_class[c][metric] = mean_c
            class_means.append(mean_c)
        macro = float(np.mean(class_means))
        values["micro"][metric] = micro
        values["macro"][metric] = macro
        values["micro_macro"][metric] = (micro + macro) / 2.0
    return MetricReport(values, per_class)


def evaluate_records(records: list[DescriptorRecord]) -> MetricReport:
    ranked = rank_all(records)
    labels = {r.object_id: r.label for r in records}
    return aggregate_metrics(ranked, labels)
