"""Map-to-image label transfer for the nine road-layout attributes."""

from __future__ import annotations

import hashlib
import math
import re
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from .config import ANGLE_EPS_DEG, DIST_EPS_M, ThresholdConfig
from .geo import PlanePoint, angdiff, bearing, wrap360
from .osmnet import Junction, OsmWay, RoadNetwork, Travel, travel_directions
from .panograph import PanoMeta
from .roadmatch import MatchResult, SpatialIndex

KMH_TO_MPH = 0.621371


class Task(str, Enum):
    INTERSECTION = "intersection"
    INTERSECTION_DISTANCE = "intersection_distance"
    DRIVEABLE = "driveable"
    HEADING_ANGLE = "heading_angle"
    BIKE_LANE = "bike_lane"
    SPEED_LIMIT = "speed_limit"
    ONE_WAY = "one_way"
    WRONG_WAY = "wrong_way"
    NUM_LANES = "num_lanes"


CATEGORICAL = frozenset({Task.INTERSECTION, Task.DRIVEABLE, Task.BIKE_LANE, Task.ONE_WAY, Task.WRONG_WAY})
NUMERIC = frozenset(set(Task) - CATEGORICAL)


def q6(x: float) -> float:
    """Round to the 6 decimals the manifest keeps, so values survive serialization unchanged."""
    return round(x, 6) + 0.0


def q6_heading(x: float) -> float:
    return wrap360(q6(wrap360(x)))


@dataclass(frozen=True)
class CropSpec:
    pano_id: str
    heading_deg: float
    pitch_deg: float = 0.0
    fov_deg: float = 100.0
    width_px: int = 227
    height_px: int = 227

    def __post_init__(self) -> None:
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError(f"fov must be in (0, 180), got {self.fov_deg}")
        if not 0.0 <= self.heading_deg < 360.0:
            raise ValueError(f"heading must be in [0, 360), got {self.heading_deg}")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("crop size must be positive")


@dataclass(frozen=True)
class LabeledSample:
    sample_id: str
    crop: CropSpec
    task: Task
    label: bool | int | float
    way_id: int
    split: str = "unassigned"
    note: str = ""

    @property
    def pano_id(self) -> str:
        return self.crop.pano_id


def make_sample_id(pano_id: str, task: Task | str, heading_deg: float) -> str:
    key = f"{pano_id}|{Task(task).value}|{heading_deg:.6f}"
    return hashlib.sha1(key.encode("utf-8")).hexdigest()[:16]


def task_rng(seed: int, pano_id: str, task: Task | str, repeat: int = 0) -> np.random.Generator:
    """Independent stream per (seed, pano, task) so worker scheduling cannot change draws."""
    key = f"{seed}|{pano_id}|{Task(task).value}|{repeat}".encode("utf-8")
    return np.random.default_rng(int.from_bytes(hashlib.sha256(key).digest()[:8], "little"))


class JunctionLocator:
    """Nearest-junction queries in the projected plane."""

    def __init__(self, junctions: Sequence[Junction], xy: dict[int, PlanePoint]):
        self.junctions = sorted(junctions, key=lambda j: j.node_id)
        self.points = np.array([xy[j.node_id] for j in self.junctions], dtype=float).reshape(-1, 2)
        self.tree = cKDTree(self.points) if len(self.junctions) else None

    def __len__(self) -> int:
        return len(self.junctions)

    def _exact(self, p: PlanePoint, i: int) -> float:
        dx = p[0] - self.points[i, 0]
        dy = p[1] - self.points[i, 1]
        return math.sqrt(dx * dx + dy * dy)

    def nearest(self, p: PlanePoint) -> tuple[Junction | None, float]:
        i, d = self.nearest_index(p)
        return (None, d) if i is None else (self.junctions[i], d)

    def nearest_index(self, p: PlanePoint) -> tuple[int | None, float]:
        if self.tree is None:
            return None, math.inf
        d, _ = self.tree.query(p)
        # re-rank the near-tied candidates so ties resolve to the smallest node id
        cand = self.tree.query_ball_point(p, d * (1 + 1e-9) + 1e-9)
        best = min(cand, key=lambda i: (self._exact(p, i), i))
        return best, self._exact(p, best)

    def within(self, p: PlanePoint, radius: float) -> list[tuple[Junction, float]]:
        if self.tree is None:
            return []
        out = []
        for i in sorted(self.tree.query_ball_point(p, radius + 1e-6)):
            d = self._exact(p, i)
            if d <= radius:
                out.append((self.junctions[i], d))
        return out


@dataclass
class LabelContext:
    net: RoadNetwork
    index: SpatialIndex
    junctions: JunctionLocator
    cfg: ThresholdConfig = field(default_factory=ThresholdConfig)
    seed: int = 0
    right_hand: bool = True
    n_headings: int = 4
    repeat: int = 1

    def crop(self, pano_id: str, heading: float) -> CropSpec:
        return CropSpec(
            pano_id, q6_heading(heading), fov_deg=self.cfg.crop_fov_deg,
            width_px=int(self.cfg.crop_px), height_px=int(self.cfg.crop_px),
        )

    def sample(self, task: Task, crop: CropSpec, label, match: MatchResult, note: str = "") -> LabeledSample:
        return LabeledSample(make_sample_id(crop.pano_id, task, crop.heading_deg), crop, task, label, match.way_id, note=note)

    def xy(self, pano: PanoMeta) -> PlanePoint:
        return self.index.proj.project(pano.loc)


def label_intersection(ctx: LabelContext, pano: PanoMeta, match: MatchResult) -> LabeledSample | None:
    """Positive within ``inter_pos_max_m`` of a junction (crop toward it), negative beyond ``inter_neg_min_m``."""
    p = ctx.xy(pano)
    i, d = ctx.junctions.nearest_index(p)
    j = None if i is None else ctx.junctions.junctions[i]
    cfg = ctx.cfg
    if j is not None and d <= cfg.inter_pos_max_m + DIST_EPS_M:
        jxy = PlanePoint(*ctx.junctions.points[i])
        heading = bearing(p, jxy) if d > 0 else match.forward_heading_deg
        return ctx.sample(Task.INTERSECTION, ctx.crop(pano.pano_id, heading), True, match, f"junction {j.node_id} d={d:.3f}m")
    if j is None or d >= cfg.inter_neg_min_m - DIST_EPS_M:
        crop = ctx.crop(pano.pano_id, match.forward_heading_deg)
        return ctx.sample(Task.INTERSECTION, crop, False, match, "no junction" if j is None else f"junction {j.node_id} d={d:.3f}m")
    return None


def label_intersection_distance(ctx: LabelContext, pano: PanoMeta, match: MatchResult) -> LabeledSample | None:
    pos = label_intersection(ctx, pano, match)
    if pos is None or pos.label is not True:
        return None
    _, d = ctx.junctions.nearest(ctx.xy(pano))
    return ctx.sample(Task.INTERSECTION_DISTANCE, pos.crop, q6(d), match, pos.note)


def true_road_headings(ctx: LabelContext, pano: PanoMeta, match: MatchResult) -> list[float]:
    """Both senses of the matched segment plus every arm of any junction close by."""
    fwd = match.forward_heading_deg
    out = [fwd, wrap360(fwd + 180.0)]
    for j, _ in ctx.junctions.within(ctx.xy(pano), ctx.cfg.inter_pos_max_m + DIST_EPS_M):
        out.extend(h for _, h in j.arms)
    return out


def is_driveable(heading: float, road_headings: Iterable[float], tol_deg: float) -> bool:
    return min(abs(angdiff(heading, h)) for h in road_headings) <= tol_deg + ANGLE_EPS_DEG


def label_driveable(
    ctx: LabelContext, pano: PanoMeta, match: MatchResult, headings: Sequence[float] | None = None
) -> list[LabeledSample]:
    if headings is None:
        rng = task_rng(ctx.seed, pano.pano_id, Task.DRIVEABLE)
        headings = rng.uniform(0.0, 360.0, size=ctx.n_headings).tolist()
    roads = true_road_headings(ctx, pano, match)
    out = []
    for h in headings:
        crop = ctx.crop(pano.pano_id, h)
        lab = is_driveable(crop.heading_deg, roads, ctx.cfg.driveable_tol_deg)
        out.append(ctx.sample(Task.DRIVEABLE, crop, lab, match))
    return out


def label_heading_angle(
    ctx: LabelContext, pano: PanoMeta, match: MatchResult, offsets: Sequence[float] | None = None
) -> list[LabeledSample]:
    """Crops offset from the forward heading by up to ``heading_max_offset_deg``; away from junctions only."""
    cfg = ctx.cfg
    _, d = ctx.junctions.nearest(ctx.xy(pano))
    if d < cfg.heading_excl_m - DIST_EPS_M:
        return []
    lim = cfg.heading_max_offset_deg
    if offsets is None:
        offsets = [task_rng(ctx.seed, pano.pano_id, Task.HEADING_ANGLE, r).uniform(-lim, lim) for r in range(ctx.repeat)]
    out = []
    for delta in offsets:
        delta = q6(delta)
        if abs(delta) > lim + ANGLE_EPS_DEG:
            raise ValueError(f"heading offset {delta} exceeds {lim}")
        crop = ctx.crop(pano.pano_id, match.forward_heading_deg + delta)
        out.append(ctx.sample(Task.HEADING_ANGLE, crop, delta, match))
    return out


def bike_lane_tag(way: OsmWay, side: str = "right") -> bool | None:
    """True for a painted lane, False when untagged or ``no``, None for anything else."""
    vals = [way.tags.get(k) for k in ("cycleway", f"cycleway:{side}", "cycleway:both")]
    present = [v.strip().lower() for v in vals if v is not None]
    if "lane" in present:
        return True
    if all(v == "no" for v in present):
        return False
    return None


def label_bike_lane(ctx: LabelContext, pano: PanoMeta, match: MatchResult) -> LabeledSample | None:
    way = ctx.net.ways[match.way_id]
    # the curb side of travel is the way's right side only when driving in node order
    curb_right = ctx.right_hand == match.node_order_forward
    lab = bike_lane_tag(way, "right" if curb_right else "left")
    if lab is None:
        return None
    sign = 1.0 if ctx.right_hand else -1.0
    crop = ctx.crop(pano.pano_id, match.forward_heading_deg + sign * ctx.cfg.bike_crop_offset_deg)
    return ctx.sample(Task.BIKE_LANE, crop, lab, match)


_MAXSPEED_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(mph|km/h|kmh|kph)?\s*$", re.IGNORECASE)


def parse_maxspeed(text: str | None) -> float | None:
    """OSM ``maxspeed`` in mph; bare numbers are km/h. Returns None when unusable."""
    if text is None:
        return None
    m = _MAXSPEED_RE.match(text)
    if not m:
        return None
    v = float(m.group(1))
    if v <= 0:
        return None
    unit = (m.group(2) or "").lower()
    return v if unit == "mph" else v * KMH_TO_MPH


def label_speed_limit(ctx: LabelContext, pano: PanoMeta, match: MatchResult) -> LabeledSample | None:
    mph = parse_maxspeed(ctx.net.ways[match.way_id].tags.get("maxspeed"))
    if mph is None:
        return None
    return ctx.sample(Task.SPEED_LIMIT, ctx.crop(pano.pano_id, match.forward_heading_deg), q6(mph), match)


def label_one_way(ctx: LabelContext, pano: PanoMeta, match: MatchResult) -> LabeledSample:
    one = travel_directions(ctx.net.ways[match.way_id]) is not Travel.BOTH
    return ctx.sample(Task.ONE_WAY, ctx.crop(pano.pano_id, match.forward_heading_deg), one, match)


def label_wrong_way(
    ctx: LabelContext, pano: PanoMeta, match: MatchResult, offsets: tuple[float, float] | None = None
) -> list[LabeledSample]:
    """One right-way crop near the forward heading and one wrong-way crop near the reverse."""
    tol = ctx.cfg.wrongway_tol_deg
    if offsets is None:
        rng = task_rng(ctx.seed, pano.pano_id, Task.WRONG_WAY)
        offsets = (rng.uniform(-tol, tol), rng.uniform(-tol, tol))
    fwd = match.forward_heading_deg
    right = ctx.crop(pano.pano_id, fwd + offsets[0])
    wrong = ctx.crop(pano.pano_id, fwd + 180.0 + offsets[1])
    out = []
    for crop in (right, wrong):
        lab = wrong_way_label(crop.heading_deg, fwd, tol)
        if lab is not None:
            out.append(ctx.sample(Task.WRONG_WAY, crop, lab, match))
    return out


def wrong_way_label(heading: float, forward: float, tol_deg: float) -> bool | None:
    if abs(angdiff(heading, forward)) <= tol_deg + ANGLE_EPS_DEG:
        return False
    if abs(angdiff(heading, forward + 180.0)) <= tol_deg + ANGLE_EPS_DEG:
        return True
    return None


def parse_lanes(text: str | None) -> int | None:
    if text is None or not text.strip().isdigit():
        return None
    n = int(text.strip())
    return n if n >= 1 else None


def label_num_lanes(ctx: LabelContext, pano: PanoMeta, match: MatchResult) -> LabeledSample | None:
    way = ctx.net.ways[match.way_id]
    if travel_directions(way) is Travel.BOTH:
        return None
    n = parse_lanes(way.tags.get("lanes"))
    if n is None:
        return None
    return ctx.sample(Task.NUM_LANES, ctx.crop(pano.pano_id, match.forward_heading_deg), n, match)


def label_pano(ctx: LabelContext, pano: PanoMeta, match: MatchResult) -> list[LabeledSample]:
    """Every sample one matched, on-road panorama contributes."""
    out: list[LabeledSample] = []
    for single in (label_intersection, label_intersection_distance, label_bike_lane, label_speed_limit,
                   label_one_way, label_num_lanes):
        s = single(ctx, pano, match)
        if s is not None:
            out.append(s)
    out.extend(label_driveable(ctx, pano, match))
    out.extend(label_heading_angle(ctx, pano, match))
    out.extend(label_wrong_way(ctx, pano, match))
    return out


_WORKER_CTX: LabelContext | None = None


def _init_worker(ctx: LabelContext) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _label_chunk(chunk: list[tuple[PanoMeta, MatchResult]]) -> list[LabeledSample]:
    assert _WORKER_CTX is not None
    out = []
    for pano, match in chunk:
        out.extend(label_pano(_WORKER_CTX, pano, match))
    return out


def generate_samples(
    ctx: LabelContext, pairs: Sequence[tuple[PanoMeta, MatchResult]], workers: int = 1
) -> list[LabeledSample]:
    """Label all pairs, deduplicate ids, and return samples sorted by sample_id."""
    if workers > 1 and len(pairs) > 1:
        size = max(1, math.ceil(len(pairs) / (workers * 4)))
        chunks = [list(pairs[i : i + size]) for i in range(0, len(pairs), size)]
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(ctx,)) as pool:
            parts = list(pool.map(_label_chunk, chunks))
        samples = [s for part in parts for s in part]
    else:
        samples = [s for pano, match in pairs for s in label_pano(ctx, pano, match)]
    by_id: dict[str, LabeledSample] = {}
    for s in samples:
        by_id.setdefault(s.sample_id, s)
    return [by_id[k] for k in sorted(by_id)]


def with_split(sample: LabeledSample, split: str) -> LabeledSample:
    return replace(sample, split=split)
