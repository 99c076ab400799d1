import json
import math

import numpy as np
import pytest

from neuralOp.fitMetrics import (
    MetricError,
    aggregate,
    mse,
    nl2,
    nrmse,
    percent_error_share,
    r2,
    r2_checked,
    json_safe,
    score_window,
)


def test_nl2_is_a_sum():
    assert nl2([110.0], [100.0]) == pytest.approx(0.1)
    assert nl2([110.0, 220.0], [100.0, 200.0]) == pytest.approx(0.2)
    assert nl2([5.0, 7.0], [5.0, 7.0]) == 0.0


def test_mse_and_nrmse_examples():
    assert mse([2.0, 2.0], [0.0, 2.0]) == pytest.approx(2.0)
    assert mse([3.0], [3.0]) == 0.0
    assert nrmse([110.0], [100.0]) == pytest.approx(0.1)
    assert nrmse([90.0, 110.0], [100.0, 100.0]) == pytest.approx(0.1)
    # An average absolute error of 10 degrees shows up as an MSE of 100.
    truth = np.full(50, 600.0)
    assert mse(truth + 10.0, truth) == pytest.approx(100.0)


def test_r2_examples():
    truth = np.array([100.0, 200.0, 400.0, 300.0])
    assert r2(truth, truth) == 1.0
    assert r2(np.full(4, truth.mean()), truth) == pytest.approx(0.0)
    assert r2(truth[::-1] * 3, truth) < 0.0


def test_mask_selects_voxels():
    pred = np.array([[110.0, 0.0], [50.0, 7.0]])
    truth = np.array([[100.0, 0.0], [50.0, 9.0]])
    mask = np.array([[True, False], [True, False]])
    assert nl2(pred, truth, mask) == pytest.approx(0.1)
    with pytest.raises(MetricError):
        nl2(pred, truth)
    with pytest.raises(MetricError):
        mse(pred, truth, np.zeros_like(mask))
    with pytest.raises(MetricError):
        r2([1.0], [1.0])
    with pytest.raises(MetricError):
        mse([1.0, 2.0], [1.0])


def test_metric_identities():
    rng = np.random.default_rng(0)
    truth = rng.uniform(50.0, 1500.0, size=200)
    pred = truth + rng.normal(scale=20.0, size=200)
    for c in (-30.0, 7.5, 1000.0):
        assert r2(pred + c, truth + c) == pytest.approx(r2(pred, truth), abs=1e-12)
    for s in (0.5, 3.0):
        assert mse(s * pred, s * truth) == pytest.approx(s**2 * mse(pred, truth), rel=1e-12)
        assert nl2(s * pred, s * truth) == pytest.approx(nl2(pred, truth), rel=1e-12)
        assert nrmse(s * pred, s * truth) == pytest.approx(nrmse(pred, truth), rel=1e-12)
    for _ in range(20):
        assert r2(rng.normal(size=10), rng.normal(size=10)) <= 1.0


def test_degenerate_windows_are_flagged():
    flat = np.full(9, 25.0)
    assert r2_checked(flat, flat) == (1.0, False)
    value, degenerate = r2_checked(flat + 1.0, flat)
    assert math.isnan(value) and degenerate


def test_percent_error_share():
    assert percent_error_share([100.0, 104.0], [100.0, 100.0]) == pytest.approx(0.5)


def test_aggregate_single_window_equals_the_window():
    truth = np.array([100.0, 200.0, 300.0])
    score = score_window(truth + [5.0, -5.0, 10.0], truth)
    report = aggregate([score], k=7)
    assert report.mean_mse == score.mse
    assert report.mean_nl2 == score.nl2
    assert report.mean_r2 == score.r2
    assert report.worst == [("0", score.r2)]


def test_aggregate_worst_list_and_permutation():
    rng = np.random.default_rng(1)
    truth = rng.uniform(100.0, 900.0, size=(6, 27))
    scores = [
        score_window(t + rng.normal(scale=10.0 * (n + 1), size=27), t)
        for n, t in enumerate(truth)
    ]
    flat = np.full(27, 25.0)
    scores.append(score_window(flat + 1.0, flat))
    ids = [f"w{n}" for n in range(len(scores))]

    report = aggregate(scores, k=10, ids=ids)
    assert report.n_windows == 7 and report.n_degenerate == 1
    assert len(report.worst) == 6
    values = [value for _, value in report.worst]
    assert values == sorted(values)
    assert report.mean_r2 == pytest.approx(np.mean([s.r2 for s in scores[:6]]))

    order = rng.permutation(len(scores))
    shuffled = aggregate([scores[i] for i in order], k=10, ids=[ids[i] for i in order])
    assert shuffled.mean_mse == pytest.approx(report.mean_mse, rel=1e-12)
    assert shuffled.mean_r2 == pytest.approx(report.mean_r2, rel=1e-12)
    assert shuffled.worst == report.worst
    assert report.to_dict()["worst"][0]["window"] == report.worst[0][0]

    with pytest.raises(MetricError):
        aggregate([])


def test_all_degenerate_report_serialises_as_null():
    flat = np.full(8, 25.0)
    scores = [score_window(flat + 1.0, flat), score_window(flat - 2.0, flat)]
    report = aggregate(scores, ids=["a", "b"])
    assert math.isnan(report.mean_r2) and report.n_degenerate == 2
    data = report.to_dict()
    assert data["mean_r2"] is None and data["worst"] == []
    assert json.loads(json.dumps(data, allow_nan=False))["mean_r2"] is None


def test_json_safe_walks_nested_values():
    value = {"a": [1.0, math.nan, (math.inf, 2)], "b": {"c": -math.inf, "d": "x"}, "e": 3}
    assert json_safe(value) == {
        "a": [1.0, None, [None, 2]],
        "b": {"c": None, "d": "x"},
        "e": 3,
    }
    assert json_safe(np.float64("nan")) is None
