import json

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metric_oracles import (gap_oracle, mrr_oracle, random_ranking_fixture, recall_oracle,
                            tanimoto_oracle)
from specret import evaluation as ev


def _batch(seed, n=20):
    rng = np.random.default_rng(seed)
    return [random_ranking_fixture(rng) for _ in range(n)]


@pytest.mark.parametrize("seed", range(20))
def test_ranking_metrics_match_reference(seed):
    results = _batch(seed)
    for k in (1, 3, 5, 20, 100):
        assert ev.recall_at_k(results, k) == pytest.approx(recall_oracle(results, k), abs=1e-12)
    assert ev.mrr(results) == pytest.approx(mrr_oracle(results), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_recall_is_monotone_in_k(seed):
    results = _batch(seed)
    values = [ev.recall_at_k(results, k) for k in range(1, 32)]
    assert values == sorted(values)
    assert ev.mrr(results) <= values[-1] + 1e-12


def test_rank_of_truth_is_derived_and_checked():
    assert ev.QueryResult("a", ["x", "y"], "y").rank_of_truth == 2
    assert ev.QueryResult("a", ["x"], "z").rank_of_truth is None
    with pytest.raises(ValueError):
        ev.QueryResult("a", ["x", "y"], "y", rank_of_truth=1)


def test_empty_inputs():
    assert ev.recall_at_k([], 1) == 0.0 and ev.mrr([]) == 0.0
    with pytest.raises(ValueError):
        ev.recall_at_k(_batch(0), 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 64), st.integers(0, 2**31 - 1))
def test_tanimoto_matches_reference(width, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random(width) < rng.random(), rng.random(width) < rng.random()
    assert ev.tanimoto(a, b) == pytest.approx(tanimoto_oracle(a, b), abs=1e-12)
    assert ev.tanimoto(a, b) == ev.tanimoto(b, a)
    assert 0.0 <= ev.tanimoto(a, b) <= 1.0


def test_tanimoto_edge_cases():
    assert ev.tanimoto(np.zeros(8), np.zeros(8)) == 1.0
    assert ev.tanimoto([1, 0, 1, 0], [1, 1, 0, 0]) == pytest.approx(1 / 3)
    with pytest.raises(ev.WidthMismatch):
        ev.tanimoto(np.zeros(4), np.zeros(5))
    assert ev.morgan_tanimoto("CCO", "OCC") == 1.0


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 32), st.integers(0, 2**31 - 1))
def test_modality_gap_matches_reference(width, seed):
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=width), rng.normal(size=width)
    assert ev.modality_gap(u, v) == pytest.approx(gap_oracle(u, v), abs=1e-12)
    assert 0.0 <= ev.modality_gap(u, v) <= 2.0
    assert ev.modality_gap(u, 3 * u) == pytest.approx(0.0, abs=1e-12)
    assert ev.modality_gap(u, -u) == pytest.approx(2.0, abs=1e-12)


def test_zero_vector_gap_raises():
    with pytest.raises(ev.ZeroVector):
        ev.modality_gap(np.zeros(3), np.ones(3))


def test_mces_at_one_skips_unparseable_rankings():
    results = [
        ev.QueryResult("a", ["CCO", "CCC"], "CCCO"),
        ev.QueryResult("b", ["CCO"], "CCO"),
        ev.QueryResult("c", ["C1CC"], "CCO"),
        ev.QueryResult("d", [], "CCO"),
    ]
    summary = ev.mces_at_1(results)
    assert summary.mean == pytest.approx(0.5)
    assert summary.counted == 2
    assert set(summary.errors) == {"c", "d"}


def test_gap_histogram_bins():
    counts = ev.gap_histogram([0.0, 0.01, 1.0, 1.999, 2.0])
    assert len(counts) == 100 and sum(counts) == 5
    assert counts[0] == 2 and counts[50] == 1 and counts[99] == 2


def test_report_round_trip_and_schema():
    results = _batch(3, n=8)
    results = [ev.QueryResult(r.identifier, ["CCO", "CCC"], "CCC") for r in results]
    report = ev.evaluate(results)
    body = json.loads(report.to_json())
    jsonschema.validate(body, ev.REPORT_SCHEMA)
    assert body["recall_at"] == {"1": 0.0, "5": 100.0, "20": 100.0}
    assert body["mrr"] == pytest.approx(50.0)
    table = report.summary_table("desk").splitlines()
    assert table[0].split() == ["Method", "Recall@1", "Recall@5", "Recall@20", "MRR", "MCES@1"]
    assert table[1].split()[0] == "desk"


def test_report_without_mces_serializes_null():
    body = json.loads(ev.evaluate(_batch(1, 4), with_mces=False).to_json())
    assert body["mces_at_1"] is None
