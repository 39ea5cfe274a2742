"""Equirectangular panorama to pinhole-perspective crops.

Panorama convention: the center column faces the capture vehicle's azimuth,
azimuth grows to the right, row 0 is the zenith and the last row the nadir.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .labelgen import CropSpec
from .panograph import PanoMeta


def focal_px(crop: CropSpec) -> float:
    return (crop.width_px / 2.0) / np.tan(np.radians(crop.fov_deg) / 2.0)


def crop_ray_angles(crop: CropSpec, u, v) -> tuple[np.ndarray, np.ndarray]:
    """World (azimuth, elevation) in degrees for continuous image coordinates.

    ``u`` and ``v`` are measured in pixels from the top-left image corner,
    so pixel centers sit at ``i + 0.5`` and the image border at 0 and width.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    f = focal_px(crop)
    x = u - crop.width_px / 2.0
    y = v - crop.height_px / 2.0
    z = np.full(np.broadcast(x, y).shape, f)
    p = np.radians(crop.pitch_deg)
    # camera y points down; positive pitch tilts the view upward
    y2 = y * np.cos(p) - z * np.sin(p)
    z2 = y * np.sin(p) + z * np.cos(p)
    az = crop.heading_deg + np.degrees(np.arctan2(x, z2))
    el = np.degrees(np.arctan2(-y2, np.hypot(x, z2)))
    return np.mod(az, 360.0), el


def sampling_map(crop: CropSpec, pano_w: int, pano_h: int, pano_azimuth_deg: float) -> np.ndarray:
    """Source (col, row) for every crop pixel, shape ``(height, width, 2)``."""
    if not 0.0 < crop.fov_deg < 180.0:
        raise ValueError(f"degenerate field of view: {crop.fov_deg}")
    vv, uu = np.mgrid[0 : crop.height_px, 0 : crop.width_px]
    az, el = crop_ray_angles(crop, uu + 0.5, vv + 0.5)
    return np.stack(angles_to_pano(az, el, pano_w, pano_h, pano_azimuth_deg), axis=-1)


def angles_to_pano(az, el, pano_w: int, pano_h: int, pano_azimuth_deg: float) -> tuple[np.ndarray, np.ndarray]:
    rel = np.mod(np.asarray(az) - pano_azimuth_deg + 180.0, 360.0)
    col = rel / 360.0 * pano_w
    col = np.where(col >= pano_w, 0.0, col)
    row = (90.0 - np.asarray(el)) / 180.0 * pano_h
    return col, row


def pano_to_angles(col, row, pano_w: int, pano_h: int, pano_azimuth_deg: float) -> tuple[np.ndarray, np.ndarray]:
    az = np.mod(np.asarray(col) / pano_w * 360.0 + pano_azimuth_deg - 180.0, 360.0)
    el = 90.0 - np.asarray(row) / pano_h * 180.0
    return az, el


def bilinear_sample(pano: np.ndarray, smap: np.ndarray) -> np.ndarray:
    """Bilinear lookup; columns wrap around the 360 degree seam, rows clamp at the poles."""
    if pano.ndim != 3:
        raise ValueError("panorama must be an (H, W, C) array")
    if smap.ndim != 3 or smap.shape[-1] != 2:
        raise ValueError("sampling map must have shape (h, w, 2)")
    h, w = pano.shape[:2]
    x = smap[..., 0] - 0.5
    y = smap[..., 1] - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    xa = np.mod(x0, w)
    xb = np.mod(x0 + 1, w)
    ya = np.clip(y0, 0, h - 1)
    yb = np.clip(y0 + 1, 0, h - 1)
    f64 = np.float64
    top = pano[ya, xa].astype(f64) * (1 - fx) + pano[ya, xb].astype(f64) * fx
    bot = pano[yb, xa].astype(f64) * (1 - fx) + pano[yb, xb].astype(f64) * fx
    out = top * (1 - fy) + bot * fy
    if pano.dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out.astype(pano.dtype)


def unwarp(pano: np.ndarray, meta: PanoMeta, crop: CropSpec) -> np.ndarray:
    h, w = pano.shape[:2]
    return bilinear_sample(pano, sampling_map(crop, w, h, meta.azimuth_deg))


def read_png(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_png(img: np.ndarray, path: str | Path) -> None:
    PILImage.fromarray(np.ascontiguousarray(img, dtype=np.uint8)).save(path, format="PNG")
