"""Scoring of external model predictions and infrastructure-review recommendations."""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

from .datasetio import Manifest, _encode, original_id
from .labelgen import CATEGORICAL, LabeledSample, Task


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    task: Task
    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "task", Task(self.task))
        if self.task in CATEGORICAL and not 0.0 <= self.value <= 1.0:
            raise EvalError(f"{self.sample_id}: probability {self.value} outside [0, 1]")


@dataclass(frozen=True)
class RecommendationRecord:
    sample_id: str
    way_id: int
    kind: str  # speed-limit-review | two-way-marking-review
    ground_truth: float | bool
    model_value: float
    severity: float


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(PredictionRecord(str(rec["sample_id"]), Task(rec["task"]), float(rec["value"])))
            except (ValueError, KeyError, TypeError) as e:
                raise EvalError(f"{path}:{lineno}: malformed prediction: {e}") from None
    return out


def write_predictions(preds: Iterable[PredictionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in sorted(preds, key=lambda p: (p.task.value, p.sample_id)):
            fh.write(json.dumps({"sample_id": p.sample_id, "task": p.task.value, "value": p.value}) + "\n")


def _samples(manifest: Manifest | Sequence[LabeledSample]) -> dict[str, LabeledSample]:
    samples = manifest.samples if isinstance(manifest, Manifest) else manifest
    return {s.sample_id: s for s in samples}


def _pairs(
    preds: Iterable[PredictionRecord], manifest: Manifest | Sequence[LabeledSample], task: Task
) -> list[tuple[PredictionRecord, LabeledSample]]:
    by_id = _samples(manifest)
    pairs = []
    for p in preds:
        if p.task is not task:
            continue
        s = by_id.get(p.sample_id)
        if s is None:
            raise EvalError(f"prediction for unknown sample {p.sample_id!r}")
        if s.task is not task:
            raise EvalError(f"sample {p.sample_id!r} belongs to task {s.task.value}, not {task.value}")
        pairs.append((p, s))
    if not pairs:
        raise EvalError(f"no predictions overlap the manifest for task {task.value}")
    return pairs


def accuracy(
    preds: Iterable[PredictionRecord],
    manifest: Manifest | Sequence[LabeledSample],
    task: Task | str,
    decision_threshold: float = 0.5,
) -> float:
    """Percent correct; a probability equal to the threshold counts as positive."""
    task = Task(task)
    if task not in CATEGORICAL:
        raise EvalError(f"{task.value} is not categorical")
    pairs = _pairs(preds, manifest, task)
    correct = sum((p.value >= decision_threshold) == bool(s.label) for p, s in pairs)
    return 100.0 * correct / len(pairs)


def mae(preds: Iterable[PredictionRecord], manifest: Manifest | Sequence[LabeledSample], task: Task | str) -> float:
    task = Task(task)
    if task in CATEGORICAL:
        raise EvalError(f"{task.value} is categorical; use accuracy")
    pairs = _pairs(preds, manifest, task)
    return sum(abs(p.value - float(s.label)) for p, s in pairs) / len(pairs)


def expand_duplicates(
    preds: Iterable[PredictionRecord], manifest: Manifest | Sequence[LabeledSample]
) -> list[PredictionRecord]:
    """Give balancing duplicates the prediction of the sample they copy."""
    preds = list(preds)
    have = {p.sample_id: p for p in preds}
    out = list(preds)
    for sid, s in _samples(manifest).items():
        if sid not in have:
            src = have.get(original_id(sid))
            if src is not None:
                out.append(PredictionRecord(sid, src.task, src.value))
    return out


def evaluate(
    preds: Iterable[PredictionRecord],
    manifest: Manifest | Sequence[LabeledSample],
    split: str | None = "test",
    decision_threshold: float = 0.5,
) -> dict[str, dict[str, Any]]:
    """Per-task metrics on the balanced split and on originals only."""
    samples = [s for s in _samples(manifest).values() if split is None or s.split == split]
    preds = expand_duplicates(preds, samples)
    ids = {s.sample_id for s in samples}
    preds = [p for p in preds if p.sample_id in ids]
    originals = [s for s in samples if original_id(s.sample_id) == s.sample_id]
    report: dict[str, dict[str, Any]] = {}
    for task in Task:
        tp = [p for p in preds if p.task is task]
        if not tp:
            continue
        orig_ids = {s.sample_id for s in originals}
        tp_orig = [p for p in tp if p.sample_id in orig_ids]
        if task in CATEGORICAL:
            rec = {
                "metric": "accuracy_percent",
                "balanced": accuracy(tp, samples, task, decision_threshold),
                "unbalanced": accuracy(tp_orig, originals, task, decision_threshold) if tp_orig else None,
            }
        else:
            rec = {
                "metric": "mae",
                "balanced": mae(tp, samples, task),
                "unbalanced": mae(tp_orig, originals, task) if tp_orig else None,
            }
        rec["count"] = len(tp)
        rec["count_unbalanced"] = len(tp_orig)
        report[task.value] = rec
    return report


def recommend(
    preds: Iterable[PredictionRecord],
    manifest: Manifest | Sequence[LabeledSample],
    speed_delta_mph: float = 10.0,
    oneway_prob: float = 0.9,
) -> list[RecommendationRecord]:
    """Flag roads whose look disagrees with their map attributes.

    A speed limit is flagged when the model's estimate differs from the
    posted limit by at least ``speed_delta_mph``; a two-way road is flagged
    when the model is at least ``oneway_prob`` sure it is one-way.
    """
    by_id = _samples(manifest)
    out = []
    for p in preds:
        s = by_id.get(p.sample_id)
        if s is None or s.task is not p.task:
            continue
        if p.task is Task.SPEED_LIMIT:
            dev = abs(p.value - float(s.label))
            if dev >= speed_delta_mph:
                out.append(RecommendationRecord(s.sample_id, s.way_id, "speed-limit-review", float(s.label), p.value, dev))
        elif p.task is Task.ONE_WAY:
            if not s.label and p.value >= oneway_prob:
                out.append(RecommendationRecord(s.sample_id, s.way_id, "two-way-marking-review", False, p.value, p.value))
    out.sort(key=lambda r: (-r.severity, r.sample_id))
    return out


def write_records(records: Iterable[Any], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(_encode(asdict(r) if hasattr(r, "__dataclass_fields__") else r) + "\n")


def write_metrics(report: Mapping[str, Mapping[str, Any]], path: str | Path) -> None:
    write_records(({"task": t, **rec} for t, rec in report.items()), path)


def format_metrics(report: Mapping[str, Mapping[str, Any]]) -> str:
    rows = [f"{'task':<22}{'metric':<18}{'balanced':>10}{'unbalanced':>12}{'n':>8}"]
    for task, rec in report.items():
        unb = "-" if rec["unbalanced"] is None else f"{rec['unbalanced']:.3f}"
        rows.append(f"{task:<22}{rec['metric']:<18}{rec['balanced']:>10.3f}{unb:>12}{rec['count']:>8}")
    return "\n".join(rows)
