"""Planar geometry kernel: local tangent-plane projection, angles, segment distances."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

EARTH_RADIUS_M = 6_371_000.0
MAX_REF_LAT_DEG = 85.0


class GeoPoint(NamedTuple):
    lat_deg: float
    lon_deg: float


class PlanePoint(NamedTuple):
    x_m: float
    y_m: float


def check_geo(p: GeoPoint) -> None:
    lat, lon = p
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise ValueError(f"non-finite coordinate: {p!r}")
    if not -90.0 <= lat <= 90.0:
        raise ValueError(f"latitude out of range: {lat}")
    if not -180.0 <= lon <= 180.0:
        raise ValueError(f"longitude out of range: {lon}")


@dataclass(frozen=True)
class Projector:
    """Local equirectangular projection in meters around ``ref``.

    x grows east and y grows north; east-west distances are scaled by
    ``cos(ref.lat)`` so that local distances are true to within a fraction
    of a percent over tens of kilometers.
    """

    ref: GeoPoint
    earth_radius_m: float = EARTH_RADIUS_M

    def __post_init__(self) -> None:
        ref = GeoPoint(*self.ref)
        check_geo(ref)
        if abs(ref.lat_deg) >= MAX_REF_LAT_DEG:
            raise ValueError(f"projection reference too close to a pole: {ref.lat_deg}")
        object.__setattr__(self, "ref", ref)
        object.__setattr__(self, "_kx", math.cos(math.radians(ref.lat_deg)) * self.earth_radius_m * math.pi / 180.0)
        object.__setattr__(self, "_ky", self.earth_radius_m * math.pi / 180.0)

    def project(self, p: GeoPoint) -> PlanePoint:
        lat, lon = p
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise ValueError(f"non-finite coordinate: {p!r}")
        return PlanePoint((lon - self.ref.lon_deg) * self._kx, (lat - self.ref.lat_deg) * self._ky)

    def unproject(self, q: PlanePoint) -> GeoPoint:
        x, y = q
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValueError(f"non-finite plane point: {q!r}")
        return GeoPoint(self.ref.lat_deg + y / self._ky, self.ref.lon_deg + x / self._kx)


def project(proj: Projector, p: GeoPoint) -> PlanePoint:
    return proj.project(p)


def haversine_m(a: GeoPoint, b: GeoPoint, radius_m: float = EARTH_RADIUS_M) -> float:
    """Great-circle distance in meters."""
    phi1, phi2 = math.radians(a[0]), math.radians(b[0])
    dphi = phi2 - phi1
    dlam = math.radians(b[1] - a[1])
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2 * radius_m * math.asin(min(1.0, math.sqrt(h)))


def point_segment_distance(
    p: PlanePoint, a: PlanePoint, b: PlanePoint
) -> tuple[float, float, PlanePoint]:
    """Distance from ``p`` to segment ``ab``.

    Returns ``(distance, t, closest)`` with ``t`` the clamped position of the
    foot point along ``ab``. Clamped feet are the exact endpoints, so two
    segments sharing a vertex report bit-identical distances to it.
    """
    px, py = p
    ax, ay = a
    bx, by = b
    for v in (px, py, ax, ay, bx, by):
        if not math.isfinite(v):
            raise ValueError("non-finite coordinate")
    dx = bx - ax
    dy = by - ay
    den = dx * dx + dy * dy
    if den == 0.0:
        t = 0.0
    else:
        t = ((px - ax) * dx + (py - ay) * dy) / den
    if t <= 0.0:
        t = 0.0
        cx, cy = ax, ay
    elif t >= 1.0:
        t = 1.0
        cx, cy = bx, by
    else:
        cx, cy = ax + t * dx, ay + t * dy
    ex = px - cx
    ey = py - cy
    return math.sqrt(ex * ex + ey * ey), t, PlanePoint(cx, cy)


def wrap360(deg: float) -> float:
    r = deg % 360.0
    # float modulo can land exactly on 360 for tiny negative inputs
    return 0.0 if r >= 360.0 else r


def angdiff(a_deg: float, b_deg: float) -> float:
    """Signed difference ``a - b`` folded into (-180, 180]."""
    r = (a_deg - b_deg) % 360.0
    if r > 180.0:
        r -= 360.0
    return r


def bearing(frm: PlanePoint, to: PlanePoint) -> float:
    """Compass bearing from ``frm`` to ``to``: 0 north, 90 east."""
    dx = to[0] - frm[0]
    dy = to[1] - frm[1]
    if dx == 0.0 and dy == 0.0:
        raise ValueError("bearing between coincident points is undefined")
    return wrap360(math.degrees(math.atan2(dx, dy)))


def heading_vector(deg: float) -> tuple[float, float]:
    r = math.radians(deg)
    return math.sin(r), math.cos(r)
