"""Retrieval metrics (Recall@k, MRR, MCES@1), fingerprint Tanimoto and the
modality-gap diagnostic, plus report serialization."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import mces as mc
from . import smiles as sm
from .index import ZeroVector, cosine

RECALL_KS = (1, 5, 20)
GAP_BINS = 100


class WidthMismatch(ValueError):
    pass


@dataclass
class QueryResult:
    identifier: str
    ranking: list[str]  # canonical SMILES, best first
    truth: str
    rank_of_truth: int | None = None

    def __post_init__(self):
        if self.rank_of_truth is None:
            try:
                self.rank_of_truth = self.ranking.index(self.truth) + 1
            except ValueError:
                self.rank_of_truth = None
        elif self.ranking[self.rank_of_truth - 1] != self.truth:
            raise ValueError("rank_of_truth does not point at the ground truth")


def recall_at_k(results: Sequence[QueryResult], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not results:
        return 0.0
    hits = sum(1 for r in results if r.rank_of_truth is not None and r.rank_of_truth <= k)
    return 100.0 * hits / len(results)


def mrr(results: Sequence[QueryResult]) -> float:
    if not results:
        return 0.0
    total = sum(1.0 / r.rank_of_truth for r in results if r.rank_of_truth is not None)
    return 100.0 * total / len(results)


def modality_gap(e_query, e_mol) -> float:
    return 1.0 - cosine(e_query, e_mol)


def tanimoto(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise WidthMismatch("fingerprints differ in width")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


def morgan_tanimoto(smiles_a: str, smiles_b: str, radius: int = 2, bits: int = 2048) -> float:
    fa = sm.morgan_fingerprint(sm.parse(smiles_a), radius, bits)
    fb = sm.morgan_fingerprint(sm.parse(smiles_b), radius, bits)
    return tanimoto(fa, fb)


@dataclass
class MCESSummary:
    mean: float
    counted: int
    errors: dict[str, str] = field(default_factory=dict)
    non_optimal: int = 0


def mces_at_1(results: Sequence[QueryResult], node_budget: int = mc.DEFAULT_NODE_BUDGET) -> MCESSummary:
    """Mean MCES distance between the top-1 candidate and the truth; queries
    that fail to parse are reported and left out of the mean."""
    dists, errors, non_opt = [], {}, 0
    for r in results:
        if not r.ranking:
            errors[r.identifier] = "empty ranking"
            continue
        try:
            res = mc.mces_exact(r.ranking[0], r.truth, node_budget)
        except sm.SmilesError as exc:
            errors[r.identifier] = f"{type(exc).__name__}: {exc}"
            continue
        non_opt += not res.optimal
        dists.append(res.distance)
    mean = float(np.mean(dists)) if dists else float("nan")
    return MCESSummary(mean, len(dists), errors, non_opt)


def gap_histogram(values: Sequence[float], bins: int = GAP_BINS) -> list[int]:
    counts, _ = np.histogram(np.asarray(values, dtype=np.float64), bins=bins, range=(0.0, 2.0))
    return counts.tolist()


@dataclass
class EvalReport:
    recall_at: dict[int, float]
    mrr: float
    mces_at_1: float
    queries: int
    found: int
    mces_counted: int
    mces_errors: dict[str, str]
    per_query: list[dict]

    def to_json(self) -> str:
        body = asdict(self)
        body["recall_at"] = {str(k): v for k, v in self.recall_at.items()}
        if math.isnan(body["mces_at_1"]):
            body["mces_at_1"] = None
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    def summary_table(self, label: str = "model") -> str:
        head = ["Method"] + [f"Recall@{k}" for k in self.recall_at] + ["MRR", "MCES@1"]
        row = [label] + [f"{v:.2f}" for v in self.recall_at.values()] + [f"{self.mrr:.2f}", f"{self.mces_at_1:.2f}"]
        widths = [max(len(h), len(c)) for h, c in zip(head, row)]
        fmt = "  ".join(f"{{:<{w}}}" if i == 0 else f"{{:>{w}}}" for i, w in enumerate(widths))
        return fmt.format(*head) + "\n" + fmt.format(*row) + "\n"


REPORT_SCHEMA = {
    "type": "object",
    "required": ["recall_at", "mrr", "mces_at_1", "queries", "found", "mces_counted",
                 "mces_errors", "per_query"],
    "properties": {
        "recall_at": {"type": "object", "additionalProperties": {"type": "number"}},
        "mrr": {"type": "number", "minimum": 0, "maximum": 100},
        "mces_at_1": {"type": ["number", "null"]},
        "queries": {"type": "integer"},
        "found": {"type": "integer"},
        "mces_counted": {"type": "integer"},
        "mces_errors": {"type": "object"},
        "per_query": {"type": "array"},
    },
}


def evaluate(results: Sequence[QueryResult], ks: Sequence[int] = RECALL_KS,
             with_mces: bool = True) -> EvalReport:
    summary = mces_at_1(results) if with_mces else MCESSummary(float("nan"), 0)
    per_query = [{"identifier": r.identifier, "truth": r.truth, "rank_of_truth": r.rank_of_truth,
                  "top1": r.ranking[0] if r.ranking else None} for r in results]
    return EvalReport(
        recall_at={k: recall_at_k(results, k) for k in ks},
        mrr=mrr(results),
        mces_at_1=summary.mean,
        queries=len(results),
        found=sum(r.rank_of_truth is not None for r in results),
        mces_counted=summary.counted,
        mces_errors=summary.errors,
        per_query=per_query,
    )


__all__ = [
    "QueryResult", "EvalReport", "MCESSummary", "WidthMismatch", "ZeroVector", "recall_at_k", "mrr",
    "modality_gap", "tanimoto", "morgan_tanimoto", "mces_at_1", "gap_histogram", "evaluate",
    "REPORT_SCHEMA", "RECALL_KS",
]
