"""Dataset manifests: JSONL serialization, longitude split, class balancing, summaries."""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .config import ThresholdConfig
from .labelgen import CATEGORICAL, CropSpec, LabeledSample, Task
from .panograph import PanoMeta

FORMAT_VERSION = 1
SPLITS = ("unassigned", "train", "test")


class ManifestError(ValueError):
    pass


@dataclass
class Manifest:
    samples: list[LabeledSample] = field(default_factory=list)
    seed: int = 0
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    sources: dict[str, str] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def header(self) -> dict[str, Any]:
        return {
            "kind": "header",
            "format_version": self.format_version,
            "seed": self.seed,
            "thresholds": self.thresholds.as_dict(),
            "sources": dict(sorted(self.sources.items())),
            "count": len(self.samples),
        }


def file_digest(path: str | Path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _encode(obj: Any) -> str:
    """Compact JSON with every float written to exactly six decimals."""
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ManifestError(f"cannot serialize non-finite number {obj}")
        s = f"{obj:.6f}"
        return "0.000000" if s == "-0.000000" else s
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, Mapping):
        return "{" + ",".join(f"{json.dumps(str(k))}:{_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_encode(v) for v in obj) + "]"
    raise ManifestError(f"cannot serialize {type(obj).__name__}")


def sample_record(s: LabeledSample) -> dict[str, Any]:
    return {
        "sample_id": s.sample_id,
        "pano_id": s.pano_id,
        "task": s.task.value,
        "crop": {
            "heading_deg": float(s.crop.heading_deg),
            "pitch_deg": float(s.crop.pitch_deg),
            "fov_deg": float(s.crop.fov_deg),
            "width": int(s.crop.width_px),
            "height": int(s.crop.height_px),
        },
        "label": _typed_label(s.task, s.label),
        "way_id": int(s.way_id),
        "split": s.split,
        "note": s.note,
    }


def _typed_label(task: Task, value: Any) -> bool | int | float:
    if task in CATEGORICAL:
        if not isinstance(value, (bool, np.bool_)):
            raise ManifestError(f"{task.value} label must be boolean, got {value!r}")
        return bool(value)
    if task is Task.NUM_LANES:
        if isinstance(value, bool) or int(value) != value:
            raise ManifestError(f"num_lanes label must be an integer, got {value!r}")
        return int(value)
    if isinstance(value, bool):
        raise ManifestError(f"{task.value} label must be numeric")
    return float(value)


def sample_from_record(rec: Mapping[str, Any]) -> LabeledSample:
    task = Task(rec["task"])
    c = rec["crop"]
    crop = CropSpec(
        rec["pano_id"], float(c["heading_deg"]), float(c["pitch_deg"]), float(c["fov_deg"]),
        int(c["width"]), int(c["height"]),
    )
    split = rec.get("split", "unassigned")
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    return LabeledSample(
        str(rec["sample_id"]), crop, task, _typed_label(task, rec["label"]), int(rec["way_id"]),
        split, str(rec.get("note", "")),
    )


def write_manifest(manifest: Manifest, path: str | Path, final: bool = False) -> None:
    ids = Counter(s.sample_id for s in manifest.samples)
    dups = sorted(k for k, n in ids.items() if n > 1)
    if dups:
        raise ManifestError(f"duplicate sample_id(s): {dups[:5]}")
    if final and any(s.split == "unassigned" for s in manifest.samples):
        raise ManifestError("final manifest has samples without a split")
    samples = sorted(manifest.samples, key=lambda s: s.sample_id)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_encode(manifest.header()) + "\n")
        for s in samples:
            fh.write(_encode(sample_record(s)) + "\n")


def read_manifest(path: str | Path) -> Manifest:
    samples: list[LabeledSample] = []
    header: dict[str, Any] | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if header is None:
                    if rec.get("kind") != "header":
                        raise ValueError("first record must be the header")
                    header = rec
                    continue
                samples.append(sample_from_record(rec))
            except (ValueError, KeyError, TypeError, ManifestError) as e:
                raise ManifestError(f"{path}:{lineno}: malformed manifest line: {e}") from None
    if header is None:
        raise ManifestError(f"{path}: missing header")
    return Manifest(
        samples=samples,
        seed=int(header.get("seed", 0)),
        thresholds=ThresholdConfig.from_dict(header.get("thresholds", {})),
        sources=dict(header.get("sources", {})),
        format_version=int(header.get("format_version", FORMAT_VERSION)),
    )


def verify_sources(manifest: Manifest, **paths: str | Path | None) -> list[str]:
    """Warn about and return the names of source files whose digest changed."""
    bad = []
    for name, path in sorted(paths.items()):
        if path is None or name not in manifest.sources:
            continue
        if file_digest(path) != manifest.sources[name]:
            warnings.warn(f"source {name!r} ({path}) does not match the manifest digest", stacklevel=2)
            bad.append(name)
    return bad


def split_by_longitude(
    samples: Sequence[LabeledSample], panos: Mapping[str, PanoMeta], train_fraction: float = 0.8
) -> tuple[float, list[LabeledSample]]:
    """Assign train (west) / test (east) by panorama longitude.

    The boundary is the longitude of the ``ceil(f * N)``-th westernmost
    panorama; every panorama at or west of it trains, so ties at the
    boundary all land in train.
    """
    pano_ids = sorted({s.pano_id for s in samples})
    missing = [p for p in pano_ids if p not in panos]
    if missing:
        raise ManifestError(f"no metadata for panoramas: {missing[:5]}")
    lons = sorted(panos[p].loc.lon_deg for p in pano_ids)
    if len(set(lons)) < 2:
        raise ManifestError("need at least two distinct panorama longitudes to split")
    k = max(1, math.ceil(round(train_fraction * len(lons), 9)))
    boundary = lons[k - 1]
    out = [replace(s, split="train" if panos[s.pano_id].loc.lon_deg <= boundary else "test") for s in samples]
    return boundary, out


def original_id(sample_id: str) -> str:
    return sample_id.split(".d", 1)[0]


def balance(
    samples: Sequence[LabeledSample], rng: np.random.Generator, scope: str | None = None
) -> list[LabeledSample]:
    """Duplicate random minority-class samples until every class matches the majority.

    ``scope`` restricts the operation to one split; the result holds only the
    samples in scope, originals first (sorted by id) followed by duplicates.
    """
    pool = [s for s in samples if scope is None or s.split == scope]
    tasks = {s.task for s in pool}
    if len(tasks) > 1:
        raise ManifestError(f"balance expects a single task, got {sorted(t.value for t in tasks)}")
    if not pool:
        return []
    task = next(iter(tasks))
    if task not in CATEGORICAL:
        raise ManifestError(f"{task.value} is not categorical")
    classes: dict[bool, list[LabeledSample]] = {True: [], False: []}
    for s in sorted(pool, key=lambda s: s.sample_id):
        classes[bool(s.label)].append(s)
    for label, members in classes.items():
        if not members:
            raise ManifestError(f"{task.value}/{scope}: class {label} has no instances, cannot balance")
    target = max(len(m) for m in classes.values())
    out = [s for m in classes.values() for s in m]
    dups = []
    for label in (False, True):
        members = classes[label]
        extra = target - len(members)
        if extra == 0:
            continue
        picks = rng.integers(0, len(members), size=extra)
        ordinal: Counter[str] = Counter()
        for i in picks.tolist():
            src = members[i]
            ordinal[src.sample_id] += 1
            dups.append(replace(src, sample_id=f"{src.sample_id}.d{ordinal[src.sample_id]}"))
    return sorted(out, key=lambda s: s.sample_id) + dups


def balance_rng(seed: int, task: Task, scope: str) -> np.random.Generator:
    key = f"balance|{seed}|{task.value}|{scope}".encode("utf-8")
    return np.random.default_rng(int.from_bytes(hashlib.sha256(key).digest()[:8], "little"))


def balance_all(samples: Iterable[LabeledSample], seed: int, scopes: Sequence[str] = ("train", "test")) -> list[LabeledSample]:
    """Balance every categorical task within each split; numeric tasks pass through."""
    samples = list(samples)
    out = [s for s in samples if s.task not in CATEGORICAL or s.split not in scopes]
    for task in sorted(CATEGORICAL, key=lambda t: t.value):
        for scope in scopes:
            part = [s for s in samples if s.task is task and s.split == scope]
            if part:
                out.extend(balance(part, balance_rng(seed, task, scope), scope))
    return sorted(out, key=lambda s: s.sample_id)


def stats(manifest: Manifest | Sequence[LabeledSample]) -> dict[str, Any]:
    samples = manifest.samples if isinstance(manifest, Manifest) else list(manifest)
    out: dict[str, Any] = {"total": len(samples), "tasks": {}}
    for task in Task:
        part = [s for s in samples if s.task is task]
        rec: dict[str, Any] = {
            "count": len(part),
            "splits": {sp: sum(1 for s in part if s.split == sp) for sp in SPLITS},
        }
        if task in CATEGORICAL:
            rec["classes"] = {"true": sum(1 for s in part if s.label), "false": sum(1 for s in part if not s.label)}
        else:
            vals = [float(s.label) for s in part]
            rec["min"] = min(vals) if vals else 0.0
            rec["mean"] = sum(vals) / len(vals) if vals else 0.0
            rec["max"] = max(vals) if vals else 0.0
        out["tasks"][task.value] = rec
    return out


def format_stats(st: Mapping[str, Any]) -> str:
    rows = [f"{'task':<22}{'count':>8}{'train':>8}{'test':>8}  detail"]
    for name, rec in st["tasks"].items():
        if "classes" in rec:
            detail = f"true={rec['classes']['true']} false={rec['classes']['false']}"
        else:
            detail = f"min={rec['min']:.3f} mean={rec['mean']:.3f} max={rec['max']:.3f}"
        sp = rec["splits"]
        rows.append(f"{name:<22}{rec['count']:>8}{sp['train']:>8}{sp['test']:>8}  {detail}")
    rows.append(f"{'total':<22}{st['total']:>8}")
    return "\n".join(rows)
