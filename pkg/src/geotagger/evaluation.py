"""Detection and geolocation metrics against ground-truth asset positions."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .geodesy import GeoPoint, haversine_distance

TP_RADIUS_M = 6.0


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]] = field(default_factory=list)
    unmatched_predictions: list[int] = field(default_factory=list)
    unmatched_truths: list[int] = field(default_factory=list)


@dataclass
class EvalReport:
    n_actual: int
    n_detected: int
    tp: int
    precision: float
    recall: float
    f_measure: float
    mean_error_m: float

    def as_dict(self) -> dict:
        d = asdict(self)
        if math.isnan(d["mean_error_m"]):
            d["mean_error_m"] = None  # no matched pairs
        return d

    def rounded(self, digits: int = 2) -> tuple[float, float, float]:
        """(precision, recall, F) truncated to ``digits`` decimals, as printed in results tables."""
        return tuple(truncate(v, digits) for v in (self.precision, self.recall, self.f_measure))


def truncate(x: float, digits: int = 2) -> float:
    k = 10**digits
    return math.floor(x * k + 1e-9) / k


def match_predictions(
    predictions: Sequence[GeoPoint],
    truths: Sequence[GeoPoint],
    tp_radius: float = TP_RADIUS_M,
) -> MatchResult:
    """Greedy one-to-one matching, nearest pairs first, within ``tp_radius`` meters.

    Ties in distance go to the lower prediction index, then the lower truth index.
    """
    if tp_radius <= 0:
        raise ValueError("tp_radius must be positive")
    cand = []
    for i, p in enumerate(predictions):
        for j, t in enumerate(truths):
            d = haversine_distance(p, t)
            if d <= tp_radius:
                cand.append((d, i, j))
    cand.sort()
    used_p, used_t = set(), set()
    res = MatchResult()
    for d, i, j in cand:
        if i in used_p or j in used_t:
            continue
        used_p.add(i)
        used_t.add(j)
        res.pairs.append((i, j, d))
    res.unmatched_predictions = [i for i in range(len(predictions)) if i not in used_p]
    res.unmatched_truths = [j for j in range(len(truths)) if j not in used_t]
    return res


def metrics_from_counts(n_actual: int, n_detected: int, tp: int, mean_error_m: float = 0.0) -> EvalReport:
    if tp > min(n_actual, n_detected) or tp < 0:
        raise ValueError(f"tp={tp} inconsistent with n_actual={n_actual}, n_detected={n_detected}")
    precision = tp / n_detected if n_detected else 0.0
    recall = tp / n_actual if n_actual else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalReport(n_actual, n_detected, tp, precision, recall, f, mean_error_m)


def compute_metrics(match: MatchResult, n_actual: int, n_detected: int) -> EvalReport:
    tp = len(match.pairs)
    if tp + len(match.unmatched_predictions) != n_detected or tp + len(match.unmatched_truths) != n_actual:
        raise ValueError("counts do not agree with the match result")
    err = sum(d for _, _, d in match.pairs) / tp if tp else math.nan
    return metrics_from_counts(n_actual, n_detected, tp, err)


def evaluate(predictions: Sequence[GeoPoint], truths: Sequence[GeoPoint], tp_radius: float = TP_RADIUS_M) -> EvalReport:
    return compute_metrics(match_predictions(predictions, truths, tp_radius), len(truths), len(predictions))
