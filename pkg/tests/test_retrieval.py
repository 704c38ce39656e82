"""Ranking and metric suite against scalar oracles."""

import numpy as np
import pytest

from oracles import (
    ap_bruteforce,
    f1_bruteforce,
    metrics_bruteforce,
    ndcg_bruteforce,
    rank_bruteforce,
)
from shapefuse.errors import ContractError
from shapefuse.formats import DescriptorRecord
from shapefuse.retrieval import (
    RankedList,
    aggregate_metrics,
    average_precision,
    evaluate_records,
    f1_at_n,
    ndcg_at_n,
    rank_all,
)


def _records(vectors, labels, ids=None):
    ids = ids or [f"obj{i:02d}" for i in range(len(labels))]
    return [DescriptorRecord(ids[i], labels[i], vectors[i]) for i in range(len(labels))]


def _unit(rng, n, d):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _rl(relevance):
    rel = np.array(relevance)
    return RankedList("q", [f"x{i}" for i in range(len(rel))], rel)


# ---------------------------------------------------------------------------
# ranking
# ---------------------------------------------------------------------------


def test_rank_two_orthogonal_same_class():
    recs = _records(np.eye(2), [3, 3])
    ranked = rank_all(recs)
    assert ranked[0].ordered_ids == ["obj01"] and ranked[0].relevance.tolist() == [1]
    assert ranked[1].ordered_ids == ["obj00"]


def test_rank_ties_break_by_ascending_id():
    v = np.array([1.0, 0.0])
    recs = _records(np.stack([v, v, v]), [0, 0, 0], ids=["c", "a", "b"])
    ranked = rank_all(recs)
    assert ranked[0].ordered_ids == ["a", "b"]  # query "c"


def test_rank_excludes_query():
    rng = np.random.default_rng(0)
    recs = _records(_unit(rng, 6, 4), [0, 1, 0, 1, 0, 1])
    for r in rank_all(recs):
        assert r.query_id not in r.ordered_ids
        assert len(r.ordered_ids) == 5


def test_rank_matches_bruteforce_oracle():
    rng = np.random.default_rng(1)
    vectors = _unit(rng, 10, 5)
    labels = rng.integers(0, 3, size=10).tolist()
    ids = [f"obj{i:02d}" for i in range(10)]
    ranked = rank_all(_records(vectors, labels, ids))
    expected = rank_bruteforce(vectors, ids, labels)
    for got, (qid, order, rel) in zip(ranked, expected):
        assert got.query_id == qid
        assert got.ordered_ids == order
        assert got.relevance.tolist() == rel


def test_rank_rejects_non_unit_vectors():
    with pytest.raises(ContractError):
        rank_all(_records(np.eye(2) * 0.5, [0, 0]))


def test_rank_needs_two_records():
    with pytest.raises(ContractError):
        rank_all(_records(np.eye(1), [0]))


def test_rank_invariant_under_orthogonal_transform():
    rng = np.random.default_rng(2)
    vectors = _unit(rng, 12, 6)
    labels = rng.integers(0, 3, size=12).tolist()
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    base = rank_all(_records(vectors, labels))
    rotated = rank_all(_records(vectors @ q, labels))
    for a, b in zip(base, rotated):
        assert a.ordered_ids == b.ordered_ids


# ---------------------------------------------------------------------------
# per-query metrics
# ---------------------------------------------------------------------------


def test_ap_perfect_ranking():
    assert average_precision(_rl([1, 1, 1, 0, 0])) == 1.0


def test_ap_hand_computed():
    np.testing.assert_allclose(average_precision(_rl([1, 0, 1, 0])), 5 / 6, rtol=1e-15)


def test_ap_no_relevant_items():
    assert average_precision(_rl([0, 0, 0])) == 0.0


def test_f1_perfect_topn():
    assert f1_at_n(_rl([1, 1, 1, 0, 0, 0])) == 1.0


def test_f1_hand_computed():
    # R=4, two relevant in the top 4
    assert f1_at_n(_rl([1, 0, 1, 0, 0, 1, 1])) == 0.5


def test_f1_no_relevant():
    assert f1_at_n(_rl([0, 0])) == 0.0


def test_ndcg_ideal_ordering():
    assert ndcg_at_n(_rl([1, 1, 0, 0])) == 1.0


def test_ndcg_hand_computed():
    # R=2, relevant at ranks 1 and 3: DCG@2 = 1, IDCG = 1 + 1/log2(3)
    np.testing.assert_allclose(ndcg_at_n(_rl([1, 0, 1, 0])), 0.6131471927654584, rtol=1e-12)


def test_ndcg_no_relevant():
    assert ndcg_at_n(_rl([0, 0, 0])) == 0.0


def test_per_query_metrics_match_oracles_random():
    rng = np.random.default_rng(3)
    for _ in range(50):
        rel = rng.integers(0, 2, size=int(rng.integers(1, 30))).tolist()
        rl = _rl(rel)
        np.testing.assert_allclose(average_precision(rl), ap_bruteforce(rel), atol=1e-12)
        np.testing.assert_allclose(f1_at_n(rl), f1_bruteforce(rel), atol=1e-12)
        np.testing.assert_allclose(ndcg_at_n(rl), ndcg_bruteforce(rel), atol=1e-12)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def test_single_class_micro_equals_macro():
    rng = np.random.default_rng(4)
    report = evaluate_records(_records(_unit(rng, 5, 4), [0] * 5))
    for metric in ("map", "f1_at_n", "ndcg_at_n"):
        assert report.values["micro"][metric] == report.values["macro"][metric]


def test_balanced_classes_micro_equals_macro():
    rng = np.random.default_rng(5)
    report = evaluate_records(_records(_unit(rng, 8, 4), [0, 0, 0, 0, 1, 1, 1, 1]))
    for metric in ("map", "f1_at_n", "ndcg_at_n"):
        np.testing.assert_allclose(report.values["micro"][metric],
                                   report.values["macro"][metric], rtol=1e-12)


def test_unbalanced_corpus_matches_flat_recomputation():
    rng = np.random.default_rng(6)
    vectors = _unit(rng, 8, 4)
    labels = [0, 0, 1, 1, 1, 1, 1, 1]
    report = evaluate_records(_records(vectors, labels))
    ids = [f"obj{i:02d}" for i in range(8)]
    expected = metrics_bruteforce(vectors, ids, labels)
    for metric in ("map", "f1_at_n", "ndcg_at_n"):
        for setting in ("micro", "macro", "micro_macro"):
            np.testing.assert_allclose(report.values[setting][metric],
                                       expected[metric][setting], atol=1e-12)


def test_micro_macro_identity_exact():
    rng = np.random.default_rng(7)
    report = evaluate_records(_records(_unit(rng, 9, 5), [0, 0, 1, 1, 1, 2, 2, 2, 2]))
    for metric in ("map", "f1_at_n", "ndcg_at_n"):
        micro = report.values["micro"][metric]
        macro = report.values["macro"][metric]
        assert report.values["micro_macro"][metric] == (micro + macro) / 2.0


def test_metrics_in_unit_interval_random_corpora():
    rng = np.random.default_rng(8)
    for trial in range(50):
        n = int(rng.integers(3, 51))
        k = int(rng.integers(1, 6))
        vectors = _unit(rng, n, 6)
        labels = rng.integers(0, k, size=n).tolist()
        report = evaluate_records(_records(vectors, labels))
        ids = [f"obj{i:02d}" for i in range(n)]
        expected = metrics_bruteforce(vectors, ids, labels)
        for metric in ("map", "f1_at_n", "ndcg_at_n"):
            for setting in ("micro", "macro", "micro_macro"):
                value = report.values[setting][metric]
                assert 0.0 <= value <= 1.0
                np.testing.assert_allclose(value, expected[metric][setting], atol=1e-9,
                                           err_msg=f"trial {trial} {metric} {setting}")


def test_aggregate_empty_rejected():
    with pytest.raises(ContractError):
        aggregate_metrics([], {})


def test_report_formatting_six_decimals():
    rng = np.random.default_rng(9)
    report = evaluate_records(_records(_unit(rng, 4, 3), [0, 0, 1, 1]))
    text = report.fmt()
    assert "metric\tmicro\tmacro\tmicro_macro" in text
    for token in text.split():
        if "." in token and token.replace(".", "").isdigit():
            assert len(token.split(".")[1]) == 6
