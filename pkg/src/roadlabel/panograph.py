"""Panorama metadata records, JSONL storage, and breadth-first crawling."""

from __future__ import annotations

import json
import logging
import math
import re
from collections.abc import Iterable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .geo import GeoPoint, check_geo

log = logging.getLogger(__name__)

PANO_WIDTH = 832
PANO_HEIGHT = 416

_DATE_RE = re.compile(r"^\d{4}-(0[1-9]|1[0-2])$")


class PanoFileError(ValueError):
    pass


class PanoNotFound(LookupError):
    pass


@dataclass(frozen=True)
class PanoMeta:
    pano_id: str
    loc: GeoPoint
    azimuth_deg: float
    neighbors: tuple[str, ...] = ()
    capture_date: str | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.pano_id, str) or not self.pano_id:
            raise ValueError("pano_id must be a nonempty string")
        object.__setattr__(self, "loc", GeoPoint(*self.loc))
        check_geo(self.loc)
        if not (math.isfinite(self.azimuth_deg) and 0.0 <= self.azimuth_deg < 360.0):
            raise ValueError(f"azimuth out of range: {self.azimuth_deg}")
        object.__setattr__(self, "neighbors", tuple(self.neighbors))
        if self.capture_date is not None and not _DATE_RE.match(self.capture_date):
            raise ValueError(f"capture_date must be YYYY-MM, got {self.capture_date!r}")

    def to_record(self) -> dict:
        rec = {
            "pano_id": self.pano_id,
            "lat": self.loc.lat_deg,
            "lon": self.loc.lon_deg,
            "azimuth_deg": self.azimuth_deg,
            "neighbors": list(self.neighbors),
        }
        if self.capture_date is not None:
            rec["capture_date"] = self.capture_date
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> PanoMeta:
        return cls(
            pano_id=rec["pano_id"],
            loc=GeoPoint(float(rec["lat"]), float(rec["lon"])),
            azimuth_deg=float(rec["azimuth_deg"]),
            neighbors=tuple(rec.get("neighbors", ())),
            capture_date=rec.get("capture_date"),
        )


def load_pano_file(path: str | Path) -> list[PanoMeta]:
    out: list[PanoMeta] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                meta = PanoMeta.from_record(json.loads(line))
            except (ValueError, KeyError, TypeError) as e:
                raise PanoFileError(f"{path}:{lineno}: malformed pano record: {e}") from None
            if meta.pano_id in seen:
                raise PanoFileError(f"{path}:{lineno}: duplicate pano_id {meta.pano_id!r}")
            seen.add(meta.pano_id)
            out.append(meta)
    return out


def save_pano_file(panos: Iterable[PanoMeta], path: str | Path) -> None:
    panos = sorted(panos, key=lambda m: m.pano_id)
    ids = [m.pano_id for m in panos]
    if len(set(ids)) != len(ids):
        raise PanoFileError("duplicate pano_id in save request")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for m in panos:
            fh.write(json.dumps(m.to_record(), separators=(",", ":")) + "\n")


class PanoProvider(Protocol):
    def fetch_meta(self, pano_id: str) -> PanoMeta | None: ...

    def fetch_image(self, pano_id: str) -> np.ndarray | None: ...


class MemoryProvider:
    """Provider over in-memory metadata, mostly for tests."""

    def __init__(self, panos: Iterable[PanoMeta], images: dict[str, np.ndarray] | None = None):
        self.metas = {m.pano_id: m for m in panos}
        self.images = images or {}

    def fetch_meta(self, pano_id: str) -> PanoMeta | None:
        return self.metas.get(pano_id)

    def fetch_image(self, pano_id: str) -> np.ndarray | None:
        return self.images.get(pano_id)


class DirectoryProvider:
    """Offline fixture: a metadata JSONL file plus ``<pano_id>.png`` images."""

    def __init__(self, meta_path: str | Path, image_dir: str | Path | None = None):
        self.metas = {m.pano_id: m for m in load_pano_file(meta_path)}
        self.image_dir = Path(image_dir) if image_dir is not None else None

    def fetch_meta(self, pano_id: str) -> PanoMeta | None:
        return self.metas.get(pano_id)

    def fetch_image(self, pano_id: str) -> np.ndarray | None:
        if self.image_dir is None:
            return None
        path = self.image_dir / f"{pano_id}.png"
        if not path.exists():
            return None
        from .panoimage import read_png

        return read_png(path)


@dataclass(frozen=True)
class BBox:
    min_lat: float
    min_lon: float
    max_lat: float
    max_lon: float

    def contains(self, p: GeoPoint) -> bool:
        return self.min_lat <= p.lat_deg <= self.max_lat and self.min_lon <= p.lon_deg <= self.max_lon

    @classmethod
    def parse(cls, text: str) -> BBox:
        parts = [float(v) for v in text.split(",")]
        if len(parts) != 4:
            raise ValueError("bbox must be min_lat,min_lon,max_lat,max_lon")
        return cls(*parts)


@dataclass
class CrawlStats:
    missing_neighbors: int = 0
    outside_bbox: int = 0
    emitted: int = 0
    hops: dict[str, int] = field(default_factory=dict)


def bfs_crawl(
    provider: PanoProvider,
    seed: str,
    bbox: BBox | None = None,
    limit: int | None = None,
    stats: CrawlStats | None = None,
    workers: int = 1,
) -> list[PanoMeta]:
    """Breadth-first crawl over neighbor links starting at ``seed``.

    Panoramas outside ``bbox`` are marked visited but neither emitted nor
    expanded. Metadata for one BFS layer may be fetched concurrently; the
    emission order is always the sequential FIFO order.
    """
    stats = stats if stats is not None else CrawlStats()
    first = provider.fetch_meta(seed)
    if first is None:
        raise PanoNotFound(f"seed panorama {seed!r} not found")
    out: list[PanoMeta] = []
    visited = {seed}
    layer: list[str] = [seed]
    cache = {seed: first}
    hop = 0
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        while layer and (limit is None or len(out) < limit):
            todo = [pid for pid in layer if pid not in cache]
            fetched = pool.map(provider.fetch_meta, todo) if pool else map(provider.fetch_meta, todo)
            cache.update(zip(todo, fetched))
            nxt: list[str] = []
            for pid in layer:
                meta = cache.pop(pid)
                if meta is None:
                    stats.missing_neighbors += 1
                    continue
                if bbox is not None and not bbox.contains(meta.loc):
                    stats.outside_bbox += 1
                    continue
                out.append(meta)
                stats.hops[pid] = hop
                if limit is not None and len(out) >= limit:
                    break
                for nb in meta.neighbors:
                    if nb not in visited:
                        visited.add(nb)
                        nxt.append(nb)
            layer = nxt
            hop += 1
    finally:
        if pool:
            pool.shutdown()
    stats.emitted = len(out)
    if stats.missing_neighbors:
        log.info("crawl skipped %d unresolvable neighbors", stats.missing_neighbors)
    return out
