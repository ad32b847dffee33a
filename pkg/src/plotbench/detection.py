"""Plant stand count and locations from a top-down plot image.

Pipeline: excess-green map, threshold, 8-connected blobs, split of blobs that
span several plants along the row, centroid to plot meters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage.filters import threshold_otsu

from .geometry import DEFAULT_EXTENT_H_M, DEFAULT_EXTENT_W_M, PointSet, pixel_to_meters


@dataclass(frozen=True)
class PlotImage:
    pixels: np.ndarray  # H x W x 3, uint8
    extent_w_m: float = DEFAULT_EXTENT_W_M
    extent_h_m: float = DEFAULT_EXTENT_H_M

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"expected an H x W x 3 image, got shape {px.shape}")
        object.__setattr__(self, "pixels", px.astype(np.uint8, copy=False))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class DetectionParams:
    threshold: float | None = None      # None -> Otsu
    vegetation_floor: float = 0.1       # ExG at or below this is never foreground
    split_factor: float = 1.5
    min_area_frac: float = 0.0005


@dataclass(frozen=True)
class Blob:
    rows: np.ndarray
    cols: np.ndarray
    bbox: tuple[int, int, int, int]     # r0, c0, r1, c1 (end exclusive)

    @property
    def area_px(self) -> int:
        return int(self.rows.size)

    @property
    def centroid_px(self) -> tuple[float, float]:
        """(x, y) = (mean column, mean row) of member pixels."""
        return float(self.cols.mean()), float(self.rows.mean())

    def axis_vector(self, axis: int | None) -> np.ndarray:
        """Unit (dx, dy) in pixel space: 0 = rows, 1 = columns, None = principal axis."""
        if axis == 0:
            return np.array([0.0, 1.0])
        if axis == 1:
            return np.array([1.0, 0.0])
        if self.rows.size < 2:
            return np.array([0.0, 1.0])
        cov = np.cov(np.vstack([self.cols, self.rows]).astype(float))
        _, vecs = np.linalg.eigh(cov)
        v = vecs[:, -1]
        # fixed sign so the result does not depend on eigh's choice
        if v[1] < 0 or (v[1] == 0 and v[0] < 0):
            v = -v
        return v

    def projection(self, axis: int | None) -> np.ndarray:
        u = self.axis_vector(axis)
        return self.cols * u[0] + self.rows * u[1]

    def extent(self, axis: int | None = 0) -> float:
        """Length covered along an axis, counting each pixel as one unit wide."""
        t = self.projection(axis)
        return float(t.max() - t.min() + 1.0)


def read_image(path: str | Path, extent_w_m: float = DEFAULT_EXTENT_W_M,
               extent_h_m: float = DEFAULT_EXTENT_H_M) -> PlotImage:
    with Image.open(path) as im:
        return PlotImage(np.array(im.convert("RGB")), extent_w_m, extent_h_m)


def write_image(img: PlotImage, path: str | Path) -> None:
    Image.fromarray(img.pixels, "RGB").save(path)


def exg_map(img: PlotImage | np.ndarray) -> np.ndarray:
    """Excess green 2g - r - b on chromaticity coordinates; black pixels map to 0."""
    px = img.pixels if isinstance(img, PlotImage) else np.asarray(img)
    rgb = px.astype(np.float64)
    total = rgb.sum(axis=2)
    safe = np.where(total > 0, total, 1.0)
    r, g, b = (rgb[..., i] / safe for i in range(3))
    exg = 2 * g - r - b
    exg[total == 0] = 0.0
    return exg


def otsu(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0 or np.ptp(values) == 0:
        return float(values.max()) if values.size else 0.0
    return float(threshold_otsu(values))


def segment(exg: np.ndarray, threshold: float | None = None, vegetation_floor: float = 0.1) -> np.ndarray:
    """Foreground where ExG exceeds the threshold (Otsu when ``threshold`` is None).

    An Otsu threshold is never allowed below ``vegetation_floor`` so an image
    of bare soil, whose ExG histogram is pure noise, stays empty.
    """
    if threshold is None:
        t = max(otsu(exg), vegetation_floor)
    else:
        t = threshold
    return exg > t


_EIGHT = np.ones((3, 3), dtype=bool)


def detect_blobs(mask: np.ndarray, min_area_px: int = 1) -> list[Blob]:
    labels, _ = ndimage.label(mask, structure=_EIGHT)
    blobs = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        rr, cc = np.nonzero(labels[sl] == i)
        if rr.size < min_area_px:
            continue
        r0, c0 = sl[0].start, sl[1].start
        blobs.append(Blob(rows=rr + r0, cols=cc + c0, bbox=(r0, c0, sl[0].stop, sl[1].stop)))
    blobs.sort(key=lambda b: (b.centroid_px[1], b.centroid_px[0]))
    return blobs


def split_merged(blob: Blob, median_extent_px: float, split_factor: float = 1.5,
                 axis: int | None = None, median_area_px: float | None = None,
                 refine_iter: int = 10) -> list[Blob]:
    """Divide a blob covering several touching plants into single plants.

    ``axis`` None measures along the blob's principal axis (its elongation);
    0 or 1 force rows or columns. The blob is split when its extent is
    strictly greater than ``split_factor * median_extent_px`` (or, when
    ``median_area_px`` is given, its area exceeds ``split_factor`` median
    areas). The plant count is ``round(extent / median_extent_px)``, raised
    to ``round(area / median_area_px)`` for bent chains. Pixels start in
    equal slices along the axis and are then reassigned to the nearest slice
    centroid for ``refine_iter`` rounds.
    """
    extent = blob.extent(axis)
    long_blob = median_extent_px > 0 and extent > split_factor * median_extent_px
    big_blob = bool(median_area_px) and blob.area_px > split_factor * median_area_px
    if not (long_blob or big_blob):
        return [blob]
    n = int(math.floor(extent / median_extent_px + 0.5)) if median_extent_px > 0 else 1
    if median_area_px:
        n = max(n, int(math.floor(blob.area_px / median_area_px + 0.5)))
    n = min(max(n, 1), blob.area_px)
    if n == 1:
        return [blob]
    t = blob.projection(axis)
    idx = np.minimum(np.floor((t - t.min() + 0.5) * n / extent).astype(int), n - 1)
    xy = np.column_stack([blob.cols, blob.rows]).astype(float)
    for _ in range(refine_iter):
        centers = np.array([xy[idx == k].mean(axis=0) if (idx == k).any() else (np.inf, np.inf)
                            for k in range(n)])
        new = ((xy[:, None, :] - centers[None, :, :]) ** 2).sum(-1).argmin(axis=1)
        if np.array_equal(new, idx):
            break
        idx = new
    out = []
    for k in range(n):
        sel = idx == k
        if not sel.any():
            continue
        rr, cc = blob.rows[sel], blob.cols[sel]
        out.append(Blob(rows=rr, cols=cc, bbox=(int(rr.min()), int(cc.min()), int(rr.max()) + 1, int(cc.max()) + 1)))
    return out


def detect_plants(img: PlotImage, params: DetectionParams = DetectionParams()) -> PointSet:
    h, w = img.height, img.width
    mask = segment(exg_map(img), params.threshold, params.vegetation_floor)
    min_area = max(1, int(math.ceil(params.min_area_frac * h * w)))
    blobs = detect_blobs(mask, min_area)
    if not blobs:
        return PointSet((), img.extent_w_m, img.extent_h_m)
    median = float(np.median([b.extent(None) for b in blobs]))
    median_area = float(np.median([b.area_px for b in blobs]))
    plants = [p for b in blobs for p in split_merged(b, median, params.split_factor, None, median_area)]
    pts = []
    for b in plants:
        cx, cy = b.centroid_px
        pts.append(pixel_to_meters(cx, cy, w, h, img.extent_w_m, img.extent_h_m))
    pts.sort(key=lambda p: (-p[1], p[0]))
    return PointSet(tuple(pts), img.extent_w_m, img.extent_h_m)
