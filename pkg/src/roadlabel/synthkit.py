"""Synthetic grid cities, panorama graphs and schematic panoramas with exact ground truth.

Everything is laid out in a local metric plane first and converted to
latitude/longitude last, with the projection reference at the center of the
node bounding box. A pipeline projecting around the same bounding-box
center therefore reproduces the generator's plane coordinates to within
round-off, which lets the label checks run at zero tolerance.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .geo import GeoPoint, PlanePoint, Projector, angdiff, wrap360
from .labelgen import KMH_TO_MPH
from .panograph import PANO_HEIGHT, PANO_WIDTH, PanoMeta

SPEED_PALETTE: tuple[tuple[str | None, float | None], ...] = (
    ("25 mph", 25.0),
    ("30 mph", 30.0),
    ("35 mph", 35.0),
    ("45 mph", 45.0),
    ("50", 50 * KMH_TO_MPH),
    ("80", 80 * KMH_TO_MPH),
    ("signals", None),
    (None, None),
)
# (tag value, parsed count) -- "2;3" is deliberately unusable
LANES_PALETTE: tuple[tuple[str | None, int | None], ...] = (
    ("1", 1),
    ("2", 2),
    ("3", 3),
    ("2;3", None),
    (None, None),
)
HIGHWAYS = ("residential", "tertiary", "secondary", "primary")


@dataclass(frozen=True)
class CityParams:
    rows: int = 4
    cols: int = 4
    block_m: float = 240.0
    stub_m: float = 120.0
    rotation_deg: float = 0.0
    oneway_fraction: float = 0.4
    bike_fraction: float = 0.3
    split_fraction: float = 0.2
    footway_fraction: float = 0.2
    diagonal_fraction: float = 0.0
    spur_fraction: float = 0.0
    center: GeoPoint = GeoPoint(37.7749, -122.4194)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1 or self.block_m <= 0 or self.stub_m <= 0:
            raise ValueError("grid dimensions must be positive")
        for name in ("oneway_fraction", "bike_fraction", "split_fraction", "footway_fraction",
                     "diagonal_fraction", "spur_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass
class WayTruth:
    way_id: int
    node_ids: list[int]
    highway: str
    tags: dict[str, str]
    travel: str  # both | forward-only | backward-only
    speed_mph: float | None
    bike_lane: bool | None
    lanes: int | None
    heading_deg: float  # bearing of node order; every generated way is straight


@dataclass
class JunctionTruth:
    node_id: int
    xy: tuple[float, float]
    arms: list[float]


@dataclass
class PanoTruth:
    pano_id: str
    xy: tuple[float, float]
    offroad: bool
    way_id: int | None = None
    distance_m: float | None = None
    forward_deg: float | None = None
    junction_id: int | None = None
    junction_distance_m: float | None = None
    junction_bearing_deg: float | None = None
    driveable_deg: list[float] = field(default_factory=list)


@dataclass
class GroundTruth:
    ref: GeoPoint
    nodes: dict[int, tuple[float, float]]
    ways: dict[int, WayTruth]
    footways: list[int]
    junctions: dict[int, JunctionTruth]
    shared_nodes: list[int]
    panos: dict[str, PanoTruth] = field(default_factory=dict)

    @property
    def road_count(self) -> int:
        return len(self.ways)

    @property
    def segment_count(self) -> int:
        return sum(len(w.node_ids) - 1 for w in self.ways.values())

    def projector(self) -> Projector:
        return Projector(self.ref)

    def to_json(self) -> dict[str, Any]:
        return {
            "ref": list(self.ref),
            "nodes": {str(k): list(v) for k, v in sorted(self.nodes.items())},
            "ways": {str(k): asdict(v) for k, v in sorted(self.ways.items())},
            "footways": self.footways,
            "junctions": {str(k): asdict(v) for k, v in sorted(self.junctions.items())},
            "shared_nodes": self.shared_nodes,
            "panos": {k: asdict(v) for k, v in sorted(self.panos.items())},
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> GroundTruth:
        return cls(
            ref=GeoPoint(*d["ref"]),
            nodes={int(k): tuple(v) for k, v in d["nodes"].items()},
            ways={int(k): WayTruth(**v) for k, v in d["ways"].items()},
            footways=list(d["footways"]),
            junctions={int(k): JunctionTruth(**{**v, "xy": tuple(v["xy"])}) for k, v in d["junctions"].items()},
            shared_nodes=list(d["shared_nodes"]),
            panos={k: PanoTruth(**{**v, "xy": tuple(v["xy"])}) for k, v in d["panos"].items()},
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> GroundTruth:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


class _Builder:
    def __init__(self) -> None:
        self.pts: dict[int, tuple[float, float]] = {}
        self.next_node = 1
        self.next_way = 1

    def node(self, x: float, y: float) -> int:
        nid = self.next_node
        self.next_node += 1
        self.pts[nid] = (x, y)
        return nid

    def way_id(self) -> int:
        wid = self.next_way
        self.next_way += 1
        return wid


def _draw_tags(rng: np.random.Generator, p: CityParams, highway: str | None = None) -> tuple[dict[str, str], WayTruth]:
    tags = {"highway": highway or HIGHWAYS[int(rng.integers(len(HIGHWAYS)))]}
    travel = "both"
    if rng.random() < p.oneway_fraction:
        if rng.random() < 0.75:
            tags["oneway"] = "yes"
            travel = "forward-only"
        else:
            tags["oneway"] = "-1"
            travel = "backward-only"
    elif rng.random() < 0.3:
        tags["oneway"] = "no"
    speed_text, speed = SPEED_PALETTE[int(rng.integers(len(SPEED_PALETTE)))]
    if speed_text is not None:
        tags["maxspeed"] = speed_text
    lanes_text, lanes = LANES_PALETTE[int(rng.integers(len(LANES_PALETTE)))]
    if lanes_text is not None:
        tags["lanes"] = lanes_text
    bike: bool | None
    if rng.random() < p.bike_fraction:
        tags["cycleway"] = "lane"
        bike = True
    else:
        choice = int(rng.integers(4))
        if choice == 0:
            tags["cycleway"] = "no"
            bike = False
        elif choice == 1:
            tags["cycleway"] = "track"
            bike = None
        else:
            bike = False
    truth = WayTruth(
        way_id=0, node_ids=[], highway=tags["highway"], tags=tags, travel=travel,
        speed_mph=speed, bike_lane=bike, lanes=lanes if travel != "both" else None, heading_deg=0.0,
    )
    return tags, truth


def _dir(deg: float) -> tuple[float, float]:
    r = math.radians(deg)
    return math.sin(r), math.cos(r)


def _analytic_bearing(dx: float, dy: float) -> float:
    return wrap360(math.degrees(math.atan2(dx, dy)))


def gen_city(params: CityParams) -> tuple[bytes, GroundTruth]:
    """Grid city as OSM XML plus ground truth.

    Streets run the full width of the grid and overshoot the outer
    intersections by ``stub_m``, so every grid crossing has four arms.
    Optional features: mid-block splits of a street into two ways, short
    dead-end spurs (three-arm junctions), block diagonals (five-arm
    junctions) and footways (filtered out before matching).
    """
    p = params
    rng = np.random.default_rng(p.seed)
    b = _Builder()
    B = p.block_m
    east = _dir(p.rotation_deg + 90.0)
    north = _dir(p.rotation_deg)

    def at(u: float, v: float) -> tuple[float, float]:
        return (u * east[0] + v * north[0], u * east[1] + v * north[1])

    grid: dict[tuple[int, int], int] = {}
    for r in range(p.rows):
        for c in range(p.cols):
            grid[r, c] = b.node(*at(c * B, r * B))

    grid_ids = set(grid.values())
    # arm headings keyed by node, filled from construction angles
    arms: dict[int, list[float]] = {nid: [] for nid in grid.values()}
    ways: dict[int, WayTruth] = {}
    shared: set[int] = set()

    def emit_way(node_ids: list[int], tags: dict[str, str], truth: WayTruth, heading: float) -> int:
        wid = b.way_id()
        truth.way_id = wid
        truth.node_ids = list(node_ids)
        truth.heading_deg = wrap360(heading)
        ways[wid] = truth
        return wid

    def street(kind: str, idx: int, n_cross: int) -> None:
        # stations along the street axis: stub end, crossings, stub end
        heading = p.rotation_deg + (90.0 if kind == "row" else 0.0)

        def pos(s: float) -> tuple[float, float]:
            return at(s, idx * B) if kind == "row" else at(idx * B, s)

        nodes: list[tuple[float, int]] = [(-p.stub_m, b.node(*pos(-p.stub_m)))]
        split_at: list[int] = []
        for k in range(n_cross):
            key = (idx, k) if kind == "row" else (k, idx)
            nodes.append((k * B, grid[key]))
            if k == n_cross - 1:
                continue
            if rng.random() < p.split_fraction:
                s = k * B + 0.25 * B
                nid = b.node(*pos(s))
                nodes.append((s, nid))
                split_at.append(len(nodes) - 1)
                shared.add(nid)
            if rng.random() < p.spur_fraction:
                s = k * B + B * float(rng.uniform(0.4, 0.6))
                nid = b.node(*pos(s))
                nodes.append((s, nid))
                side = 1.0 if rng.random() < 0.5 else -1.0
                spur_heading = heading + 90.0 * side
                tip = b.node(*[a + 0.3 * B * d for a, d in zip(b.pts[nid], _dir(spur_heading))])
                spur_tags, spur_truth = _draw_tags(rng, p, "residential")
                emit_way([nid, tip], spur_tags, spur_truth, spur_heading)
                arms[nid] = [wrap360(heading), wrap360(heading + 180.0), wrap360(spur_heading)]
        end = (n_cross - 1) * B + p.stub_m
        nodes.append((end, b.node(*pos(end))))
        for _, nid in nodes:
            if nid in grid_ids:
                arms[nid].extend([wrap360(heading), wrap360(heading + 180.0)])
        cuts = [0, *split_at, len(nodes) - 1]
        for a, z in zip(cuts, cuts[1:]):
            tags, truth = _draw_tags(rng, p)
            emit_way([nid for _, nid in nodes[a : z + 1]], tags, truth, heading)

    for r in range(p.rows):
        street("row", r, p.cols)
    for c in range(p.cols):
        street("col", c, p.rows)

    footways: list[int] = []
    footway_nodes: list[list[int]] = []
    for r in range(p.rows - 1):
        for c in range(p.cols - 1):
            if rng.random() < p.diagonal_fraction:
                a, z = grid[r, c], grid[r + 1, c + 1]
                h = p.rotation_deg + 45.0
                tags, truth = _draw_tags(rng, p, "tertiary")
                emit_way([a, z], tags, truth, h)
                arms[a].append(wrap360(h))
                arms[z].append(wrap360(h + 180.0))
            if rng.random() < p.footway_fraction:
                f0 = b.node(*at(c * B + 0.1 * B, r * B + 0.85 * B))
                f1 = b.node(*at(c * B + 0.3 * B, r * B + 0.85 * B))
                footways.append(b.way_id())
                footway_nodes.append([f0, f1])

    # center the node bounding box on the projection reference
    xs = [v[0] for v in b.pts.values()]
    ys = [v[1] for v in b.pts.values()]
    cx, cy = (min(xs) + max(xs)) / 2, (min(ys) + max(ys)) / 2
    pts = {nid: (x - cx, y - cy) for nid, (x, y) in b.pts.items()}

    junctions = {
        nid: JunctionTruth(nid, pts[nid], sorted(a)) for nid, a in sorted(arms.items()) if len(a) >= 3
    }
    truth = GroundTruth(
        ref=GeoPoint(*p.center), nodes=pts, ways=ways, footways=footways,
        junctions=junctions, shared_nodes=sorted(shared),
    )
    proj = truth.projector()
    lines = ['<?xml version="1.0" encoding="UTF-8"?>', '<osm version="0.6" generator="roadlabel-synthkit">']
    for nid in sorted(pts):
        g = proj.unproject(PlanePoint(*pts[nid]))
        lines.append(f'  <node id="{nid}" lat="{g.lat_deg!r}" lon="{g.lon_deg!r}"/>')
    for wid in sorted(ways):
        w = ways[wid]
        lines.append(f'  <way id="{wid}">')
        lines.extend(f'    <nd ref="{n}"/>' for n in w.node_ids)
        lines.extend(f'    <tag k="{k}" v="{w.tags[k]}"/>' for k in sorted(w.tags))
        lines.append("  </way>")
    for wid, nids in zip(footways, footway_nodes):
        lines.append(f'  <way id="{wid}">')
        lines.extend(f'    <nd ref="{n}"/>' for n in nids)
        lines.append('    <tag k="highway" v="footway"/>')
        lines.append("  </way>")
    lines.append("</osm>")
    return ("\n".join(lines) + "\n").encode("utf-8"), truth


def _forward(w: WayTruth, rng: np.random.Generator) -> float:
    if w.travel == "forward-only":
        return w.heading_deg
    if w.travel == "backward-only":
        return wrap360(w.heading_deg + 180.0)
    return w.heading_deg if rng.random() < 0.5 else wrap360(w.heading_deg + 180.0)


def _nearest_junction(truth: GroundTruth, xy: tuple[float, float]) -> tuple[int | None, float]:
    best, best_d = None, math.inf
    for nid in sorted(truth.junctions):
        jx, jy = truth.junctions[nid].xy
        d = math.sqrt((xy[0] - jx) ** 2 + (xy[1] - jy) ** 2)
        if d < best_d:
            best, best_d = nid, d
    return best, best_d


def gen_panos(
    truth: GroundTruth,
    spacing_m: float = 10.0,
    lateral_offset_m: float = 3.0,
    noise_m: float = 0.0,
    rng: np.random.Generator | int = 0,
    junction_clearance_m: float = 20.0,
    plaza_count: int = 0,
    dangling_links: int = 0,
    heading_noise_deg: float = 5.0,
    inter_pos_max_m: float = 30.0,
) -> list[PanoMeta]:
    """Panoramas every ``spacing_m`` along each road, offset to the right of travel.

    Stations closer than ``junction_clearance_m`` to a junction on the way,
    or closer than ``noise_m + 1`` to a node shared with a continuing way,
    are skipped so that each panorama's nearest road is unambiguous.
    Plaza panoramas are dropped deep inside blocks, far from every road.
    Fills ``truth.panos`` and returns the metadata.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    proj = truth.projector()
    truth.panos.clear()
    metas: list[dict[str, Any]] = []
    chains: list[list[int]] = []
    n = 0
    for wid in sorted(truth.ways):
        w = truth.ways[wid]
        fwd = _forward(w, rng)
        along_dir = _dir(fwd)
        right = _dir(fwd + 90.0)
        a = truth.nodes[w.node_ids[0]]
        z = truth.nodes[w.node_ids[-1]]
        start, end = (a, z) if abs(angdiff(fwd, w.heading_deg)) < 90 else (z, a)
        length = math.dist(a, z)
        guards = []
        for nid in w.node_ids:
            s = math.dist(start, truth.nodes[nid])
            if nid in truth.junctions:
                guards.append((s, junction_clearance_m))
            elif nid in truth.shared_nodes:
                guards.append((s, noise_m + 1.0))
        chain = []
        k = 0
        while k * spacing_m <= length + 1e-9:
            s = k * spacing_m
            k += 1
            if any(abs(s - g) < clear for g, clear in guards):
                continue
            du, dv = (rng.uniform(-noise_m, noise_m, size=2) if noise_m > 0 else (0.0, 0.0))
            off = lateral_offset_m + float(dv)
            s2 = s + float(du)
            x = start[0] + s2 * along_dir[0] + off * right[0]
            y = start[1] + s2 * along_dir[1] + off * right[1]
            az = wrap360(fwd + float(rng.uniform(-heading_noise_deg, heading_noise_deg)))
            pid = f"p{n:06d}"
            n += 1
            chain.append(len(metas))
            metas.append({"pano_id": pid, "xy": (x, y), "azimuth": az, "neighbors": []})
            truth.panos[pid] = _on_road_truth(truth, pid, (x, y), w, fwd, s2, length, abs(off), inter_pos_max_m)
        chains.append(chain)
    for chain in chains:
        for i, j in zip(chain, chain[1:]):
            metas[i]["neighbors"].append(metas[j]["pano_id"])
            metas[j]["neighbors"].append(metas[i]["pano_id"])
    heads = [c[0] for c in chains if c]
    for i, j in zip(heads, heads[1:]):
        metas[i]["neighbors"].append(metas[j]["pano_id"])
        metas[j]["neighbors"].append(metas[i]["pano_id"])
    on_road = list(range(len(metas)))
    for _ in range(plaza_count):
        x, y = _plaza_point(truth, rng)
        pid = f"p{n:06d}"
        n += 1
        near = min(on_road, key=lambda i: (math.dist(metas[i]["xy"], (x, y)), i))
        metas.append({"pano_id": pid, "xy": (x, y), "azimuth": float(rng.uniform(0, 360)), "neighbors": [metas[near]["pano_id"]]})
        metas[near]["neighbors"].append(pid)
        truth.panos[pid] = PanoTruth(pid, (x, y), offroad=True)
    for d in range(dangling_links):
        metas[int(rng.integers(len(metas)))]["neighbors"].append(f"missing{d:04d}")
    out = []
    for m in metas:
        out.append(PanoMeta(m["pano_id"], proj.unproject(PlanePoint(*m["xy"])), m["azimuth"], tuple(m["neighbors"])))
    return out


def _on_road_truth(
    truth: GroundTruth, pid: str, xy: tuple[float, float], w: WayTruth, fwd: float,
    s: float, length: float, lateral: float, inter_pos_max_m: float,
) -> PanoTruth:
    # beyond a dead end the closest road point is the end node itself
    overshoot = max(0.0, -s, s - length)
    dist = math.hypot(lateral, overshoot)
    jid, jd = _nearest_junction(truth, xy)
    pt = PanoTruth(pid, xy, offroad=False, way_id=w.way_id, distance_m=dist, forward_deg=fwd)
    drive = [fwd, wrap360(fwd + 180.0)]
    if jid is not None:
        jx, jy = truth.junctions[jid].xy
        pt.junction_id = jid
        pt.junction_distance_m = jd
        pt.junction_bearing_deg = _analytic_bearing(jx - xy[0], jy - xy[1])
        for nid in sorted(truth.junctions):
            j = truth.junctions[nid]
            if math.dist(j.xy, xy) <= inter_pos_max_m:
                drive.extend(j.arms)
    pt.driveable_deg = drive
    return pt


def _plaza_point(truth: GroundTruth, rng: np.random.Generator) -> tuple[float, float]:
    """A point at least 25 m from every road segment, by rejection sampling."""
    xs = [v[0] for v in truth.nodes.values()]
    ys = [v[1] for v in truth.nodes.values()]
    segs = [
        (truth.nodes[w.node_ids[i]], truth.nodes[w.node_ids[i + 1]])
        for w in truth.ways.values()
        for i in range(len(w.node_ids) - 1)
    ]
    for _ in range(10_000):
        x = float(rng.uniform(min(xs), max(xs)))
        y = float(rng.uniform(min(ys), max(ys)))
        if all(_seg_dist((x, y), a, b) >= 25.0 for a, b in segs):
            return x, y
    raise RuntimeError("could not place a plaza panorama away from roads")


def _seg_dist(p, a, b) -> float:
    dx, dy = b[0] - a[0], b[1] - a[1]
    den = dx * dx + dy * dy
    t = 0.0 if den == 0 else max(0.0, min(1.0, ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / den))
    return math.hypot(p[0] - a[0] - t * dx, p[1] - a[1] - t * dy)


SKY = (135, 206, 235)
GROUND = (70, 130, 70)
ROAD = (128, 128, 128)
STRIPE = (255, 0, 0)
BIKE = (255, 220, 0)


def render_features(
    azimuth_deg: float,
    driveable_deg: list[float] = (),
    stripe_deg: float | None = None,
    bike_deg: float | None = None,
    width: int = PANO_WIDTH,
    height: int = PANO_HEIGHT,
    wedge_half_deg: float = 22.5,
    stripe_half_deg: float = 1.0,
) -> np.ndarray:
    """Schematic equirectangular panorama with features at given world azimuths."""
    img = np.empty((height, width, 3), dtype=np.uint8)
    horizon = height // 2
    img[:horizon] = SKY
    img[horizon:] = GROUND
    az = np.mod(azimuth_deg - 180.0 + (np.arange(width) + 0.5) / width * 360.0, 360.0)

    def near(center: float, half: float) -> np.ndarray:
        d = np.abs(np.mod(az - center + 180.0, 360.0) - 180.0)
        return d <= half

    for h in driveable_deg:
        img[horizon:, near(h, wedge_half_deg)] = ROAD
    if bike_deg is not None:
        img[horizon : horizon + height // 16, near(bike_deg, 10.0)] = BIKE
    if stripe_deg is not None:
        img[:, near(stripe_deg, stripe_half_deg)] = STRIPE
    return img


def render_pano(meta: PanoMeta, truth: GroundTruth, right_hand: bool = True) -> np.ndarray:
    """832x416 panorama: road wedges, a red stripe toward the nearest junction, a bike-lane band."""
    pt = truth.panos[meta.pano_id]
    bike = None
    if not pt.offroad and truth.ways[pt.way_id].bike_lane:
        bike = wrap360(pt.forward_deg + (45.0 if right_hand else -45.0))
    return render_features(meta.azimuth_deg, [] if pt.offroad else pt.driveable_deg, pt.junction_bearing_deg, bike)
