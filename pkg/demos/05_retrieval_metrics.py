"""Retrieval scoring: cosine ranking, AP, F1@N, NDCG@N, micro/macro.

Run:  python3 demos/05_retrieval_metrics.py
"""

import numpy as np

from shapefuse.formats import DescriptorRecord
from shapefuse.retrieval import evaluate_records, rank_all

# Six unit descriptors in two classes; class 0 is tightly clustered,
# class 1 is spread out, so per-query quality differs by class.
rng = np.random.default_rng(3)
anchors = {0: np.array([1.0, 0.0, 0.0, 0.0]), 1: np.array([0.0, 1.0, 0.0, 0.0])}
records = []
for i in range(6):
    label = i // 3
    noise = rng.normal(scale=0.15 if label == 0 else 0.7, size=4)
    vec = anchors[label] + noise
    records.append(DescriptorRecord(f"obj{i}", label, vec / np.linalg.norm(vec)))

# Every record queries all the others; ties break by ascending id and the
# query never ranks itself.
ranked = rank_all(records)
for r in ranked[:2]:
    print(f"query {r.query_id}: ranked {r.ordered_ids} relevance {r.relevance.tolist()}")

# Per query, with R = same-class corpus size excluding the query:
#   AP     averages precision at each relevant rank over the full list
#   F1@N   precision==recall at the cutoff N = R, so F1 equals both
#   NDCG@N binary-gain DCG over the top R, against the ideal ordering
report = evaluate_records(records)
print("\nmetric table (micro averages over queries, macro over class means):")
print(report.fmt())
