"""Retrieval metrics and tuning: AP/MAP, proposal recall, grid search.

Average precision uses greedy one-to-one matching of ranked hits against
ground-truth word boxes: a hit is relevant iff it overlaps an unmatched
ground-truth instance of the query label with IoU strictly above t_o, and
each ground-truth box can credit at most one hit.  MAP is the arithmetic
mean of AP over the query set (unique labels for string queries, every
ground-truth crop for by-example queries).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import NoRelevantInstances
from .geometry import Box, iou


@dataclass(frozen=True)
class GroundTruth:
    """One annotated word on a page."""

    page_id: str
    box: Box
    label: str


@dataclass(frozen=True)
class EvalConfig:
    overlap_thresholds: tuple[float, ...] = (0.25, 0.5)
    stopwords: tuple[str, ...] = ()
    grid_t_s: tuple[float, ...] = (0.3, 0.5, 0.7, 0.9)
    grid_t_nms: tuple[float, ...] = (0.25, 0.4, 0.6)

    def __post_init__(self):
        for t in self.overlap_thresholds:
            if not 0.0 < t <= 1.0:
                raise ValueError(f"overlap threshold {t} outside (0, 1]")


def ap_from_relevance(relevance: Sequence[bool], n_relevant: int) -> float:
    """Average precision of a binary relevance ranking.

    AP = sum over ranks k of precision@k for relevant k, divided by the
    total number of relevant instances (retrieved or not).
    """
    if n_relevant <= 0:
        return 0.0
    hits = 0
    total = 0.0
    for k, rel in enumerate(relevance, start=1):
        if rel:
            hits += 1
            total += hits / k
    return total / n_relevant


def match_hits(
    hits: Sequence, gts: Sequence[GroundTruth], query_label: str, t_o: float
) -> list[bool]:
    """Greedy rank-order matching; each gt box credits at most one hit."""
    pool = [g for g in gts if g.label == query_label]
    matched = [False] * len(pool)
    relevance = []
    for hit in hits:
        best, best_iou = -1, t_o
        for j, g in enumerate(pool):
            if matched[j] or g.page_id != hit.page_id:
                continue
            ov = iou(hit.box, g.box)
            if ov > best_iou:
                best, best_iou = j, ov
        if best >= 0:
            matched[best] = True
            relevance.append(True)
        else:
            relevance.append(False)
    return relevance


def average_precision(
    ranked: Sequence, gts: Sequence[GroundTruth], query_label: str, t_o: float
) -> float:
    n_relevant = sum(1 for g in gts if g.label == query_label)
    if n_relevant == 0:
        raise NoRelevantInstances(f"no ground truth labeled {query_label!r}")
    relevance = match_hits(ranked, gts, query_label, t_o)
    return ap_from_relevance(relevance, n_relevant)


def qbs_queries(gts: Sequence[GroundTruth], stopwords: Sequence[str] = ()) -> list[str]:
    """Unique ground-truth labels, sorted, minus any stopwords."""
    drop = set(stopwords)
    return sorted({g.label for g in gts} - drop)


def qbe_queries(gts: Sequence[GroundTruth]) -> list[GroundTruth]:
    """Every ground-truth crop acts as one query."""
    return list(gts)


def evaluate_queries(
    run_query: Callable[[object], Sequence],
    queries: Sequence,
    query_labels: Sequence[str],
    gts: Sequence[GroundTruth],
    t_o: float,
) -> dict:
    """AP per query plus the mean; `run_query` maps a query to ranked hits."""
    per_query = []
    aps = []
    for query, label in zip(queries, query_labels):
        ranked = run_query(query)
        ap = average_precision(ranked, gts, label, t_o)
        r = sum(1 for g in gts if g.label == label)
        name = query if isinstance(query, str) else f"{label}@{query.page_id}"
        per_query.append({"query": name, "ap": ap, "r": r})
        aps.append(ap)
    return {"map": float(np.mean(aps)) if aps else 0.0, "per_query": per_query}


def proposal_recall(
    proposals_by_page: Mapping[str, Sequence[Box]],
    gts: Sequence[GroundTruth],
    t_o: float,
) -> float:
    """Mean over pages of the fraction of gt words covered by a proposal
    with IoU > t_o.  Pages without ground truth are skipped."""
    by_page: dict[str, list[GroundTruth]] = {}
    for g in gts:
        by_page.setdefault(g.page_id, []).append(g)
    if not by_page:
        return 0.0
    fractions = []
    for page_id, page_gts in sorted(by_page.items()):
        props = list(proposals_by_page.get(page_id, ()))
        covered = 0
        for g in page_gts:
            if any(iou(p, g.box) > t_o for p in props):
                covered += 1
        fractions.append(covered / len(page_gts))
    return float(np.mean(fractions))


@dataclass(frozen=True)
class GridPoint:
    t_s: float
    t_nms: float
    map: float


def grid_search(
    eval_point: Callable[[float, float], float],
    t_s_values: Sequence[float],
    t_nms_values: Sequence[float],
) -> GridPoint:
    """Exhaustive search maximizing validation MAP.

    Ties prefer the smaller t_s, then the smaller t_nms; the grids are
    sorted internally so the result does not depend on input order.
    """
    if not t_s_values or not t_nms_values:
        raise ValueError("grid must be non-empty")
    best: GridPoint | None = None
    for t_s in sorted(t_s_values):
        for t_nms in sorted(t_nms_values):
            score = eval_point(t_s, t_nms)
            if best is None or score > best.map:
                best = GridPoint(t_s=t_s, t_nms=t_nms, map=score)
    return best


# ---------------------------------------------------------------------------
# Report serialization


def report_to_json(report: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")


def report_to_csv(report: dict, path) -> None:
    """Flat table: metric,mode,t_o,query,value rows for every number."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "mode", "t_o", "query", "value"])
        for mode, by_t in report.get("modes", {}).items():
            for t_o, res in by_t.items():
                w.writerow(["map", mode, t_o, "", res["map"]])
                for pq in res["per_query"]:
                    w.writerow(["ap", mode, t_o, pq["query"], pq["ap"]])
        for t_o, value in report.get("recall", {}).items():
            w.writerow(["recall", "", t_o, "", value])
