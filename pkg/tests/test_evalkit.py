from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roadlabel.datasetio import Manifest
from roadlabel.evalkit import (
    EvalError,
    PredictionRecord,
    accuracy,
    evaluate,
    mae,
    read_predictions,
    recommend,
    write_predictions,
)
from roadlabel.labelgen import CropSpec, LabeledSample, Task


def s(sid: str, task: Task, label, split: str = "test", way: int = 1) -> LabeledSample:
    return LabeledSample(sid, CropSpec(sid, 0.0), task, label, way, split)


def pred(sid: str, task: Task, value: float) -> PredictionRecord:
    return PredictionRecord(sid, task, value)


def test_nine_of_ten():
    labels = [True, False] * 5
    samples = [s(f"s{i}", Task.ONE_WAY, lab) for i, lab in enumerate(labels)]
    probs = [0.9 if lab else 0.1 for lab in labels]
    probs[3] = 0.7  # s3 is negative, predicted positive
    preds = [pred(f"s{i}", Task.ONE_WAY, p) for i, p in enumerate(probs)]
    assert accuracy(preds, samples, Task.ONE_WAY) == 90.0


def test_threshold_tie_counts_positive():
    samples = [s("a", Task.INTERSECTION, True), s("b", Task.INTERSECTION, False)]
    preds = [pred("a", Task.INTERSECTION, 0.5), pred("b", Task.INTERSECTION, 0.5)]
    assert accuracy(preds, samples, Task.INTERSECTION) == 50.0


def test_perfect_predictions():
    samples = [s(f"s{i}", Task.DRIVEABLE, i % 3 == 0) for i in range(9)]
    preds = [pred(x.sample_id, Task.DRIVEABLE, 1.0 if x.label else 0.0) for x in samples]
    assert accuracy(preds, samples, Task.DRIVEABLE) == 100.0


def test_mae_examples():
    samples = [s("a", Task.SPEED_LIMIT, 10.0), s("b", Task.SPEED_LIMIT, 20.0)]
    assert mae([pred("a", Task.SPEED_LIMIT, 12.0), pred("b", Task.SPEED_LIMIT, 16.0)], samples, "speed_limit") == 3.0
    assert mae([pred("a", Task.SPEED_LIMIT, 10.0), pred("b", Task.SPEED_LIMIT, 20.0)], samples, "speed_limit") == 0.0


def test_unknown_sample_is_error():
    with pytest.raises(EvalError):
        accuracy([pred("zz", Task.ONE_WAY, 0.3)], [s("a", Task.ONE_WAY, True)], Task.ONE_WAY)


def test_empty_overlap_is_error():
    with pytest.raises(EvalError):
        mae([], [s("a", Task.SPEED_LIMIT, 10.0)], Task.SPEED_LIMIT)


def test_probability_range_checked():
    with pytest.raises(EvalError):
        PredictionRecord("a", Task.ONE_WAY, 1.2)
    PredictionRecord("a", Task.HEADING_ANGLE, -40.0)


def test_wrong_metric_for_task():
    with pytest.raises(EvalError):
        mae([pred("a", Task.ONE_WAY, 0.3)], [s("a", Task.ONE_WAY, True)], Task.ONE_WAY)
    with pytest.raises(EvalError):
        accuracy([pred("a", Task.SPEED_LIMIT, 3)], [s("a", Task.SPEED_LIMIT, 3.0)], Task.SPEED_LIMIT)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.floats(0, 1)), min_size=1, max_size=40), st.floats(0.05, 0.95))
def test_accuracy_invariant_under_monotone_transform(rows, thr):
    samples = [s(f"s{i}", Task.BIKE_LANE, lab) for i, (lab, _) in enumerate(rows)]
    preds = [pred(f"s{i}", Task.BIKE_LANE, p) for i, (_, p) in enumerate(rows)]
    # piecewise-linear increasing map that keeps thr fixed
    squash = [pred(p.sample_id, p.task, thr * (p.value / thr) ** 2 if p.value < thr
                   else thr + (1 - thr) * ((p.value - thr) / (1 - thr)) ** 0.5) for p in preds]
    a = accuracy(preds, samples, Task.BIKE_LANE, thr)
    assert a == accuracy(squash, samples, Task.BIKE_LANE, thr)
    assert 0.0 <= a <= 100.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-60, 60), min_size=1, max_size=30), st.floats(-20, 20))
def test_mae_detects_translation(labels, c):
    samples = [s(f"s{i}", Task.HEADING_ANGLE, lab) for i, lab in enumerate(labels)]
    preds = [pred(f"s{i}", Task.HEADING_ANGLE, lab + c) for i, lab in enumerate(labels)]
    assert mae(preds, samples, Task.HEADING_ANGLE) == pytest.approx(abs(c), abs=1e-9)


def test_evaluate_reports_balanced_and_unbalanced():
    samples = [
        s("a", Task.ONE_WAY, True), s("a.d1", Task.ONE_WAY, True), s("a.d2", Task.ONE_WAY, True),
        s("b", Task.ONE_WAY, False), s("c", Task.ONE_WAY, False), s("d", Task.ONE_WAY, False),
        s("x", Task.ONE_WAY, True, split="train"),
    ]
    preds = [pred("a", Task.ONE_WAY, 0.1), pred("b", Task.ONE_WAY, 0.2), pred("c", Task.ONE_WAY, 0.3),
             pred("d", Task.ONE_WAY, 0.4)]
    rep = evaluate(preds, Manifest(samples))
    assert rep["one_way"]["balanced"] == 50.0  # a and its two duplicates wrong, b c d right
    assert rep["one_way"]["unbalanced"] == 75.0
    assert rep["one_way"]["count"] == 6


def test_recommend_speed_example():
    samples = [s("a", Task.SPEED_LIMIT, 50.0, way=77)]
    [r] = recommend([pred("a", Task.SPEED_LIMIT, 30.0)], samples)
    assert (r.kind, r.way_id, r.ground_truth, r.model_value, r.severity) == ("speed-limit-review", 77, 50.0, 30.0, 20.0)


def test_recommend_rules():
    samples = [s("a", Task.SPEED_LIMIT, 25.0), s("b", Task.ONE_WAY, False), s("c", Task.ONE_WAY, True),
               s("d", Task.ONE_WAY, False)]
    preds = [pred("a", Task.SPEED_LIMIT, 27.0), pred("b", Task.ONE_WAY, 0.95), pred("c", Task.ONE_WAY, 0.99),
             pred("d", Task.ONE_WAY, 0.5)]
    recs = recommend(preds, samples)
    assert [(r.sample_id, r.kind) for r in recs] == [("b", "two-way-marking-review")]


def test_recommend_empty_when_predictions_match():
    samples = [s("a", Task.SPEED_LIMIT, 25.0), s("b", Task.ONE_WAY, False), s("c", Task.ONE_WAY, True)]
    preds = [pred("a", Task.SPEED_LIMIT, 25.0), pred("b", Task.ONE_WAY, 0.0), pred("c", Task.ONE_WAY, 1.0)]
    assert recommend(preds, samples) == []


def test_predictions_round_trip(tmp_path):
    preds = [pred("b", Task.ONE_WAY, 0.25), pred("a", Task.SPEED_LIMIT, 31.5)]
    write_predictions(preds, tmp_path / "p.jsonl")
    assert sorted(read_predictions(tmp_path / "p.jsonl"), key=lambda p: p.sample_id) == sorted(
        preds, key=lambda p: p.sample_id
    )


def test_malformed_predictions(tmp_path):
    p = tmp_path / "p.jsonl"
    p.write_text('{"sample_id": "a", "task": "one_way", "value": 0.3}\n{"sample_id": "b"}\n')
    with pytest.raises(EvalError, match=":2:"):
        read_predictions(p)


def test_severity_order():
    rng = np.random.default_rng(0)
    samples = [s(f"s{i}", Task.SPEED_LIMIT, 40.0) for i in range(20)]
    preds = [pred(f"s{i}", Task.SPEED_LIMIT, float(v)) for i, v in enumerate(rng.uniform(0, 80, 20))]
    sev = [r.severity for r in recommend(preds, samples)]
    assert sev == sorted(sev, reverse=True) and all(v >= 10 for v in sev)
