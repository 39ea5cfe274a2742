"""In-process stage functions shared by the CLI and the tests."""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import ThresholdConfig
from .datasetio import _encode
from .geo import PlanePoint
from .labelgen import JunctionLocator, LabelContext, LabeledSample, generate_samples
from .osmnet import JunctionMode, RoadNetwork, find_junctions
from .panograph import PanoMeta
from .roadmatch import MatchResult, SpatialIndex, build_index, filter_offroad, nearest_way


@dataclass
class MatchRun:
    kept: list[MatchResult]
    rejected: list[MatchResult]


def match_panos(
    net: RoadNetwork, panos: Sequence[PanoMeta], cfg: ThresholdConfig, cell_size_m: float = 50.0
) -> tuple[SpatialIndex, MatchRun]:
    index = build_index(net, net.projector(), cell_size_m)
    matches = [nearest_way(index, p) for p in sorted(panos, key=lambda m: m.pano_id)]
    kept, rejected = filter_offroad(matches, cfg)
    return index, MatchRun(kept, rejected)


def match_record(m: MatchResult, kept: bool) -> dict:
    return {
        "pano_id": m.pano_id,
        "way_id": m.way_id,
        "segment_index": m.segment_index,
        "distance_m": m.distance_m,
        "closest": [m.closest[0], m.closest[1]],
        "forward_heading_deg": m.forward_heading_deg,
        "side": m.side,
        "node_order_forward": m.node_order_forward,
        "kept": kept,
    }


def write_matches(run: MatchRun, path: str | Path) -> None:
    rows = [(m, True) for m in run.kept] + [(m, False) for m in run.rejected]
    rows.sort(key=lambda r: r[0].pano_id)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for m, kept in rows:
            # repr-precision floats: labels downstream depend on these values
            fh.write(json.dumps(match_record(m, kept), separators=(",", ":")) + "\n")


def read_matches(path: str | Path) -> MatchRun:
    kept, rejected = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                m = MatchResult(
                    r["pano_id"], int(r["way_id"]), int(r["segment_index"]), float(r["distance_m"]),
                    PlanePoint(*r["closest"]), float(r["forward_heading_deg"]), r["side"],
                    bool(r["node_order_forward"]),
                )
            except (ValueError, KeyError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: malformed match record: {e}") from None
            (kept if r["kept"] else rejected).append(m)
    return MatchRun(kept, rejected)


def make_context(
    net: RoadNetwork,
    cfg: ThresholdConfig,
    seed: int,
    junction_mode: JunctionMode | str = JunctionMode.CONTINUATION_FILTERED,
    right_hand: bool = True,
    n_headings: int = 4,
    repeat: int = 1,
    cell_size_m: float = 50.0,
) -> LabelContext:
    proj = net.projector()
    index = build_index(net, proj, cell_size_m)
    junctions = JunctionLocator(find_junctions(net, junction_mode, proj), index.xy)
    return LabelContext(net, index, junctions, cfg, seed, right_hand, n_headings, repeat)


def label_matches(
    ctx: LabelContext, panos: Sequence[PanoMeta], kept: Sequence[MatchResult], workers: int = 1
) -> list[LabeledSample]:
    by_id = {p.pano_id: p for p in panos}
    pairs = [(by_id[m.pano_id], m) for m in sorted(kept, key=lambda m: m.pano_id) if m.pano_id in by_id]
    return generate_samples(ctx, pairs, workers)


def _crop_one(args):
    from .panoimage import read_png, unwarp, write_png

    image_path, meta, samples, out_dir = args
    pano = read_png(image_path)
    written = []
    for s in samples:
        out = Path(out_dir) / f"{s.sample_id}.png"
        write_png(unwarp(pano, meta, s.crop), out)
        written.append(s.sample_id)
    return written


def crop_samples(
    samples: Sequence[LabeledSample], panos: Sequence[PanoMeta], image_dir: str | Path, out_dir: str | Path,
    workers: int = 1,
) -> tuple[int, list[str]]:
    """Write one PNG per distinct crop; returns (written count, pano ids lacking images)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_id = {p.pano_id: p for p in panos}
    groups: dict[str, list[LabeledSample]] = {}
    for s in sorted(samples, key=lambda s: s.sample_id):
        if "." in s.sample_id:
            continue  # balancing duplicates reuse the original image
        groups.setdefault(s.pano_id, []).append(s)
    jobs, missing = [], []
    for pid in sorted(groups):
        path = Path(image_dir) / f"{pid}.png"
        if not path.exists() or pid not in by_id:
            missing.append(pid)
            continue
        jobs.append((path, by_id[pid], groups[pid], out_dir))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            done = list(pool.map(_crop_one, jobs, chunksize=max(1, math.ceil(len(jobs) / (workers * 4)))))
    else:
        done = [_crop_one(j) for j in jobs]
    return sum(len(d) for d in done), missing


def summary_line(stage: str, **fields) -> str:
    return _encode({"stage": stage, **fields})
