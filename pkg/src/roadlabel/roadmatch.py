"""Nearest-road matching of panoramas over a uniform-grid segment index."""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable
from dataclasses import dataclass, replace

from .config import DIST_EPS_M, ThresholdConfig
from .geo import PlanePoint, Projector, angdiff, bearing, point_segment_distance, wrap360
from .osmnet import RoadNetwork, Travel, travel_directions
from .panograph import PanoMeta

log = logging.getLogger(__name__)

__all__ = [
    "MatchResult",
    "SpatialIndex",
    "ThresholdConfig",
    "build_index",
    "filter_offroad",
    "forward_heading",
    "nearest_way",
]


class EmptyNetworkError(ValueError):
    pass


@dataclass(frozen=True)
class MatchResult:
    pano_id: str
    way_id: int
    segment_index: int
    distance_m: float
    closest: PlanePoint
    forward_heading_deg: float = 0.0
    side: str = "on"  # left | right | on, relative to the forward direction
    node_order_forward: bool = True


class SpatialIndex:
    """Uniform grid over the projected network.

    Every segment is registered in every cell its bounding box overlaps.
    Segment numbers follow ``(way_id, segment_index)`` order, so comparing
    numbers implements the tie-break rule.
    """

    def __init__(self, net: RoadNetwork, proj: Projector, cell_size_m: float = 50.0):
        if not net.ways:
            raise EmptyNetworkError("cannot index an empty road network")
        if not cell_size_m > 0:
            raise ValueError("cell_size_m must be positive")
        self.net = net
        self.proj = proj
        self.cell = float(cell_size_m)
        xy = {}
        for w in net.ways.values():
            for nid in w.node_ids:
                if nid not in xy:
                    xy[nid] = proj.project(net.nodes[nid].loc)
        self.xy = xy
        keys: list[tuple[int, int]] = []
        segs: list[tuple[float, float, float, float]] = []
        for wid in sorted(net.ways):
            ids = net.ways[wid].node_ids
            for i in range(len(ids) - 1):
                a, b = xy[ids[i]], xy[ids[i + 1]]
                keys.append((wid, i))
                segs.append((a[0], a[1], b[0], b[1]))
        self.keys = keys
        self.segs = segs
        self.x0 = min(min(s[0], s[2]) for s in segs)
        self.y0 = min(min(s[1], s[3]) for s in segs)
        cells: dict[tuple[int, int], list[int]] = {}
        c = self.cell
        for k, (ax, ay, bx, by) in enumerate(segs):
            i0 = math.floor((min(ax, bx) - self.x0) / c)
            i1 = math.floor((max(ax, bx) - self.x0) / c)
            j0 = math.floor((min(ay, by) - self.y0) / c)
            j1 = math.floor((max(ay, by) - self.y0) / c)
            for i in range(i0, i1 + 1):
                for j in range(j0, j1 + 1):
                    cells.setdefault((i, j), []).append(k)
        self.cells = cells
        self.imin = min(i for i, _ in cells)
        self.imax = max(i for i, _ in cells)
        self.jmin = min(j for _, j in cells)
        self.jmax = max(j for _, j in cells)

    def __len__(self) -> int:
        return len(self.segs)

    def cell_of(self, p: PlanePoint) -> tuple[int, int]:
        return math.floor((p[0] - self.x0) / self.cell), math.floor((p[1] - self.y0) / self.cell)

    def _ring(self, ci: int, cj: int, k: int) -> Iterable[tuple[int, int]]:
        if k == 0:
            yield ci, cj
            return
        for i in range(ci - k, ci + k + 1):
            yield i, cj - k
            yield i, cj + k
        for j in range(cj - k + 1, cj + k):
            yield ci - k, j
            yield ci + k, j

    def nearest(self, p: PlanePoint) -> tuple[int, float, float, PlanePoint]:
        """Exact nearest segment: ``(segment number, distance, t, closest)``.

        Rings of cells are scanned outward; once ring ``k`` is done, any
        segment not yet seen lies at least ``k * cell`` away, so the search
        stops as soon as the best distance is strictly below that bound.
        """
        ci, cj = self.cell_of(p)
        max_ring = max(abs(ci - self.imin), abs(ci - self.imax), abs(cj - self.jmin), abs(cj - self.jmax))
        cells = self.cells
        segs = self.segs
        seen: set[int] = set()
        best_k = -1
        best = (math.inf, 0.0, PlanePoint(0.0, 0.0))
        k = 0
        while True:
            for key in self._ring(ci, cj, k):
                for s in cells.get(key, ()):
                    if s in seen:
                        continue
                    seen.add(s)
                    ax, ay, bx, by = segs[s]
                    d, t, q = point_segment_distance(p, (ax, ay), (bx, by))
                    if d < best[0] or (d == best[0] and s < best_k):
                        best = (d, t, q)
                        best_k = s
            # small margin covers floor() round-off at cell borders
            if best[0] < k * self.cell - 1e-9 or k >= max_ring:
                break
            k += 1
        return best_k, best[0], best[1], best[2]


def build_index(net: RoadNetwork, proj: Projector, cell_size_m: float = 50.0) -> SpatialIndex:
    return SpatialIndex(net, proj, cell_size_m)


def _side(direction: tuple[float, float], closest: PlanePoint, p: PlanePoint) -> str:
    cross = direction[0] * (p[1] - closest[1]) - direction[1] * (p[0] - closest[0])
    if cross < 0:
        return "right"
    if cross > 0:
        return "left"
    return "on"


def forward_heading(match: MatchResult, net: RoadNetwork, pano: PanoMeta, index: SpatialIndex) -> MatchResult:
    """Resolve the direction of travel on the matched segment.

    One-way roads follow their tags. Two-way roads take whichever tangent
    sense is closer to the capture vehicle's azimuth, preferring node order
    on an exact tie.
    """
    way = net.ways[match.way_id]
    a = index.xy[way.node_ids[match.segment_index]]
    b = index.xy[way.node_ids[match.segment_index + 1]]
    fwd = bearing(a, b)
    bwd = wrap360(fwd + 180.0)
    travel = travel_directions(way)
    if travel is Travel.BOTH:
        along = abs(angdiff(fwd, pano.azimuth_deg)) <= abs(angdiff(bwd, pano.azimuth_deg))
    else:
        along = travel is Travel.FORWARD
        chosen = fwd if along else bwd
        if abs(angdiff(chosen, pano.azimuth_deg)) > 90.0:
            log.warning(
                "pano %s: vehicle azimuth %.1f opposes one-way way %d (%.1f); keeping tag direction",
                pano.pano_id, pano.azimuth_deg, way.id, chosen,
            )
    heading = fwd if along else bwd
    direction = (b[0] - a[0], b[1] - a[1]) if along else (a[0] - b[0], a[1] - b[1])
    p = index.proj.project(pano.loc)
    return replace(
        match, forward_heading_deg=heading, side=_side(direction, match.closest, p), node_order_forward=along
    )


def nearest_way(index: SpatialIndex, pano: PanoMeta) -> MatchResult:
    p = index.proj.project(pano.loc)
    s, d, _, q = index.nearest(p)
    wid, seg = index.keys[s]
    m = MatchResult(pano.pano_id, wid, seg, d, q)
    return forward_heading(m, index.net, pano, index)


def filter_offroad(
    matches: Iterable[MatchResult], cfg: ThresholdConfig = ThresholdConfig()
) -> tuple[list[MatchResult], list[MatchResult]]:
    kept, rejected = [], []
    for m in matches:
        (kept if m.distance_m <= cfg.offroad_max_m + DIST_EPS_M else rejected).append(m)
    return kept, rejected
