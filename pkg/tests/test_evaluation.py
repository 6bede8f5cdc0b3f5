import math

import numpy as np
import pytest

from geotagger.evaluation import (
    compute_metrics,
    evaluate,
    match_predictions,
    metrics_from_counts,
    truncate,
)
from geotagger.geodesy import EnuPoint, GeoPoint, LocalFrame

FRAME = LocalFrame(GeoPoint(53.3498, -6.2603))


def geo(x, y):
    return FRAME.from_enu(EnuPoint(x, y))


def test_match_examples():
    m = match_predictions([geo(3, 0)], [geo(0, 0)])
    assert [(i, j) for i, j, _ in m.pairs] == [(0, 0)]
    assert m.pairs[0][2] == pytest.approx(3.0, abs=1e-3)
    m = match_predictions([geo(7, 0)], [geo(0, 0)])
    assert m.pairs == [] and m.unmatched_predictions == [0] and m.unmatched_truths == [0]
    m = match_predictions([geo(4, 0), geo(-2, 0)], [geo(0, 0)])
    assert [(i, j) for i, j, _ in m.pairs] == [(1, 0)]
    assert m.unmatched_predictions == [0]


@pytest.mark.parametrize(
    "counts, expected",
    [((76, 94, 58), (0.61, 0.76, 0.68)), ((76, 89, 57), (0.64, 0.75, 0.69))],
)
def test_results_table_rows(counts, expected):
    assert metrics_from_counts(*counts).rounded() == expected


def test_results_table_third_row_within_tolerance():
    p, r, f = metrics_from_counts(76, 92, 54).rounded()
    assert abs(p - 0.57) <= 0.02 and abs(r - 0.72) <= 0.02 and abs(f - 0.64) <= 0.02


def test_truncate():
    assert truncate(0.617) == 0.61
    assert truncate(0.68) == 0.68
    assert truncate(0.69) == 0.69  # 0.69 * 100 is 68.99999999999999 in binary
    assert truncate(0.7105) == 0.71
    assert truncate(1.0) == 1.0


def test_perfect_predictions():
    truths = [geo(0, 0), geo(20, 0), geo(0, 20)]
    rep = evaluate(list(truths), truths)
    assert (rep.precision, rep.recall, rep.f_measure) == (1.0, 1.0, 1.0)
    assert rep.mean_error_m == 0.0


def test_empty_predictions():
    rep = evaluate([], [geo(0, 0)])
    assert (rep.tp, rep.precision, rep.recall, rep.f_measure) == (0, 0.0, 0.0, 0.0)
    assert rep.as_dict()["mean_error_m"] is None


def test_inconsistent_counts():
    with pytest.raises(ValueError):
        metrics_from_counts(5, 3, 4)
    with pytest.raises(ValueError):
        compute_metrics(match_predictions([geo(0, 0)], [geo(0, 0)]), 2, 1)


def random_sets(seed, n_p=25, n_t=20):
    rng = np.random.default_rng(seed)
    preds = [geo(*p) for p in rng.uniform(0, 60, (n_p, 2))]
    truths = [geo(*t) for t in rng.uniform(0, 60, (n_t, 2))]
    return preds, truths


@pytest.mark.parametrize("seed", range(5))
def test_tp_monotone_in_radius(seed):
    preds, truths = random_sets(seed)
    tps = [evaluate(preds, truths, r).tp for r in np.linspace(0.5, 20, 40)]
    assert all(b >= a for a, b in zip(tps, tps[1:]))


@pytest.mark.parametrize("seed", range(5))
def test_matching_permutation_invariant(seed):
    preds, truths = random_sets(seed)
    base = {(i, j) for i, j, _ in match_predictions(preds, truths).pairs}
    rng = np.random.default_rng(seed)
    for _ in range(5):
        pp, tp = rng.permutation(len(preds)), rng.permutation(len(truths))
        m = match_predictions([preds[k] for k in pp], [truths[k] for k in tp])
        assert {(pp[i], tp[j]) for i, j, _ in m.pairs} == base


@pytest.mark.parametrize("seed", range(5))
def test_matching_is_one_to_one_and_within_radius(seed):
    preds, truths = random_sets(seed)
    m = match_predictions(preds, truths)
    assert len({i for i, _, _ in m.pairs}) == len(m.pairs) == len({j for _, j, _ in m.pairs})
    assert all(d <= 6.0 for _, _, d in m.pairs)
    rep = compute_metrics(m, len(truths), len(preds))
    assert rep.tp <= min(rep.n_actual, rep.n_detected)


def test_integer_identity():
    for n_a in range(1, 40):
        for n_d in range(1, 40):
            for tp in range(0, min(n_a, n_d) + 1):
                r = metrics_from_counts(n_a, n_d, tp)
                assert round(r.precision * n_d) == tp and math.isclose(r.precision * n_d, tp, abs_tol=1e-9)
                assert round(r.recall * n_a) == tp and math.isclose(r.recall * n_a, tp, abs_tol=1e-9)
