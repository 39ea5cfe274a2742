"""OSM XML ingestion, road filtering, junction discovery and way direction helpers."""

from __future__ import annotations

import gzip
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from xml.parsers import expat
from xml.sax.saxutils import quoteattr

from .geo import GeoPoint, PlanePoint, Projector, bearing, check_geo

log = logging.getLogger(__name__)

DEFAULT_HIGHWAYS = frozenset(
    {
        "motorway",
        "trunk",
        "primary",
        "secondary",
        "tertiary",
        "unclassified",
        "residential",
        "living_street",
        "motorway_link",
        "trunk_link",
        "primary_link",
        "secondary_link",
        "tertiary_link",
    }
)


class OsmParseError(ValueError):
    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (at byte {byte_offset})")
        self.byte_offset = byte_offset


@dataclass(frozen=True)
class OsmNode:
    id: int
    loc: GeoPoint


@dataclass(frozen=True)
class OsmWay:
    id: int
    node_ids: tuple[int, ...]
    tags: dict[str, str] = field(default_factory=dict, hash=False, compare=True)


@dataclass
class RoadNetwork:
    nodes: dict[int, OsmNode]
    ways: dict[int, OsmWay]
    incidence: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    dropped_ways: int = 0

    def __post_init__(self) -> None:
        if not self.incidence:
            self.incidence = build_incidence(self.ways)

    def projector(self) -> Projector:
        """Projector centered on the bounding box of all nodes."""
        if not self.nodes:
            raise ValueError("empty network has no projection reference")
        lats = [n.loc.lat_deg for n in self.nodes.values()]
        lons = [n.loc.lon_deg for n in self.nodes.values()]
        return Projector(GeoPoint((min(lats) + max(lats)) / 2, (min(lons) + max(lons)) / 2))

    def plane_coords(self, proj: Projector) -> dict[int, PlanePoint]:
        return {nid: proj.project(n.loc) for nid, n in self.nodes.items()}

    def segment_count(self) -> int:
        return sum(len(w.node_ids) - 1 for w in self.ways.values())


def build_incidence(ways: dict[int, OsmWay]) -> dict[int, list[tuple[int, int]]]:
    inc: dict[int, list[tuple[int, int]]] = {}
    for wid in sorted(ways):
        for pos, nid in enumerate(ways[wid].node_ids):
            inc.setdefault(nid, []).append((wid, pos))
    return inc


class _Handler:
    def __init__(self) -> None:
        self.nodes: dict[int, OsmNode] = {}
        self.raw_ways: list[tuple[int, list[int], dict[str, str]]] = []
        self._way: tuple[int, list[int], dict[str, str]] | None = None
        self._in_node = False

    def start(self, name: str, attrs: dict[str, str]) -> None:
        if name == "node":
            nid = int(attrs["id"])
            loc = GeoPoint(float(attrs["lat"]), float(attrs["lon"]))
            check_geo(loc)
            self.nodes[nid] = OsmNode(nid, loc)
        elif name == "way":
            self._way = (int(attrs["id"]), [], {})
        elif self._way is not None:
            if name == "nd":
                self._way[1].append(int(attrs["ref"]))
            elif name == "tag":
                self._way[2][attrs["k"]] = attrs["v"]

    def end(self, name: str) -> None:
        if name == "way" and self._way is not None:
            self.raw_ways.append(self._way)
            self._way = None


def parse_osm(data: bytes) -> RoadNetwork:
    """Parse an OSM XML document into an unfiltered network.

    Relations are ignored. A way is dropped (and counted in
    ``dropped_ways``) if it references any node absent from the extract or
    has fewer than two nodes once consecutive repeats are collapsed.
    """
    h = _Handler()
    p = expat.ParserCreate("UTF-8")
    p.StartElementHandler = h.start
    p.EndElementHandler = h.end
    try:
        p.Parse(data, True)
    except expat.ExpatError as e:
        raise OsmParseError(expat.errors.messages[e.code], p.ErrorByteIndex) from None
    except (KeyError, ValueError) as e:
        raise OsmParseError(f"bad element attributes: {e}", p.CurrentByteIndex) from None

    ways: dict[int, OsmWay] = {}
    dropped = 0
    for wid, refs, tags in h.raw_ways:
        if any(r not in h.nodes for r in refs):
            dropped += 1
            continue
        collapsed = [r for i, r in enumerate(refs) if i == 0 or r != refs[i - 1]]
        if len(collapsed) < 2:
            dropped += 1
            continue
        ways[wid] = OsmWay(wid, tuple(collapsed), tags)
    if dropped:
        log.warning("dropped %d ways with unresolvable or too few nodes", dropped)
    return RoadNetwork(h.nodes, ways, dropped_ways=dropped)


def load_osm(path: str | Path) -> RoadNetwork:
    path = Path(path)
    data = path.read_bytes()
    if path.suffix == ".gz":
        data = gzip.decompress(data)
    return parse_osm(data)


def dump_osm(net: RoadNetwork) -> bytes:
    """Serialize to OSM XML with full-precision coordinates, ids in ascending order."""
    lines = ['<?xml version="1.0" encoding="UTF-8"?>', '<osm version="0.6" generator="roadlabel">']
    for nid in sorted(net.nodes):
        loc = net.nodes[nid].loc
        lines.append(f'  <node id="{nid}" lat="{loc.lat_deg!r}" lon="{loc.lon_deg!r}"/>')
    for wid in sorted(net.ways):
        w = net.ways[wid]
        lines.append(f'  <way id="{wid}">')
        lines.extend(f'    <nd ref="{r}"/>' for r in w.node_ids)
        for k in sorted(w.tags):
            lines.append(f"    <tag k={quoteattr(k)} v={quoteattr(w.tags[k])}/>")
        lines.append("  </way>")
    lines.append("</osm>")
    return ("\n".join(lines) + "\n").encode("utf-8")


def filter_roads(
    net: RoadNetwork, allowlist: frozenset[str] | set[str] = DEFAULT_HIGHWAYS, include_service: bool = False
) -> RoadNetwork:
    allow = set(allowlist)
    if include_service:
        allow.add("service")
    ways = {wid: w for wid, w in net.ways.items() if w.tags.get("highway") in allow}
    return RoadNetwork(dict(net.nodes), ways, dropped_ways=net.dropped_ways)


class JunctionMode(str, Enum):
    PAPER_RULE = "paper-rule"
    CONTINUATION_FILTERED = "continuation-filtered"


@dataclass(frozen=True)
class Junction:
    node_id: int
    location: GeoPoint
    arms: tuple[tuple[int, float], ...]


def node_arms(net: RoadNetwork, nid: int, xy: dict[int, PlanePoint]) -> list[tuple[int, float]]:
    """Outgoing (way id, heading) pairs for every polyline step leaving ``nid``."""
    arms = []
    here = xy[nid]
    for wid, pos in net.incidence.get(nid, ()):
        ids = net.ways[wid].node_ids
        for nb in (pos - 1, pos + 1):
            if 0 <= nb < len(ids):
                there = xy[ids[nb]]
                if there != here:
                    arms.append((wid, bearing(here, there)))
    return arms


def find_junctions(
    net: RoadNetwork,
    mode: JunctionMode | str = JunctionMode.CONTINUATION_FILTERED,
    proj: Projector | None = None,
) -> list[Junction]:
    """Nodes shared by two or more road segments, sorted by node id.

    In continuation-filtered mode a shared node also needs at least three
    arms, which drops the mid-block joints where OSM splits a road into
    separate ways.
    """
    mode = JunctionMode(mode)
    proj = proj or net.projector()
    xy: dict[int, PlanePoint] = {}
    out = []
    for nid in sorted(net.incidence):
        inc = net.incidence[nid]
        if len(inc) < 2:
            continue
        for wid, _ in inc:
            for m in net.ways[wid].node_ids:
                if m not in xy:
                    xy[m] = proj.project(net.nodes[m].loc)
        arms = node_arms(net, nid, xy)
        if mode is JunctionMode.CONTINUATION_FILTERED and len(arms) < 3:
            continue
        if len(arms) < 2:
            continue
        out.append(Junction(nid, net.nodes[nid].loc, tuple(arms)))
    return out


def way_tangent(
    net: RoadNetwork, way_id: int, segment_index: int, sense: str = "forward", proj: Projector | None = None
) -> float:
    ids = net.ways[way_id].node_ids
    if not 0 <= segment_index < len(ids) - 1:
        raise IndexError(f"way {way_id} has no segment {segment_index}")
    if sense not in ("forward", "backward"):
        raise ValueError(f"sense must be forward or backward, got {sense!r}")
    proj = proj or net.projector()
    a = proj.project(net.nodes[ids[segment_index]].loc)
    b = proj.project(net.nodes[ids[segment_index + 1]].loc)
    return bearing(a, b) if sense == "forward" else bearing(b, a)


class Travel(str, Enum):
    BOTH = "both"
    FORWARD = "forward-only"
    BACKWARD = "backward-only"


_ONEWAY_FWD = {"yes", "1", "true"}
_ONEWAY_NO = {"no", "0", "false"}


def travel_directions(way: OsmWay) -> Travel:
    v = way.tags.get("oneway")
    if v is None:
        return Travel.BOTH
    v = v.strip().lower()
    if v in _ONEWAY_FWD:
        return Travel.FORWARD
    if v == "-1":
        return Travel.BACKWARD
    if v not in _ONEWAY_NO:
        log.warning("way %s: unrecognized oneway=%r, treating as two-way", way.id, v)
    return Travel.BOTH
