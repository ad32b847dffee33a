"""Top-down plot rasterizer used in place of the full 3D plant simulator.

Only what the metrics need is drawn: soil, and one green disc per plant whose
radius grows with days after planting.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import SimulationConfig
from .detection import PlotImage
from .geometry import DEFAULT_EXTENT_H_M, DEFAULT_EXTENT_W_M, meters_to_pixel

log = logging.getLogger(__name__)

# (dap, radius_m) anchors; linear in between, clamped outside
GROWTH_ANCHORS = ((0.0, 0.02), (10.0, 0.05), (50.0, 0.30), (90.0, 0.45))


def growth_radius(dap: float, anchors=GROWTH_ANCHORS) -> float:
    if dap < 0:
        raise ValueError("dap must be >= 0")
    xs, ys = zip(*anchors)
    return float(np.interp(dap, xs, ys))


@dataclass(frozen=True)
class RasterParams:
    img_w_px: int = 381
    img_h_px: int = 1080
    extent_w_m: float = DEFAULT_EXTENT_W_M
    extent_h_m: float = DEFAULT_EXTENT_H_M
    soil_color: tuple[int, int, int] = (122, 94, 68)
    plant_color: tuple[int, int, int] = (58, 142, 50)
    noise_seed: int = 0
    noise_amplitude: int = 6
    growth_anchors: tuple[tuple[float, float], ...] = GROWTH_ANCHORS

    def plant_radius_m(self, dap: float) -> float:
        return growth_radius(dap, self.growth_anchors)


def rasterize(c: SimulationConfig, p: RasterParams = RasterParams()) -> PlotImage:
    h, w = p.img_h_px, p.img_w_px
    canvas = np.empty((h, w, 3), dtype=np.float64)
    canvas[:] = p.soil_color
    radius = p.plant_radius_m(c.metadata.dap)
    rx = radius / p.extent_w_m * w
    ry = radius / p.extent_h_m * h
    half_w, half_h = p.extent_w_m / 2, p.extent_h_m / 2
    for x, y in c.all_plants():
        if abs(x) > half_w or abs(y) > half_h:
            log.warning("plant at (%.4f, %.4f) lies outside the image extents; skipped", x, y)
            continue
        cx, cy = meters_to_pixel(x, y, w, h, p.extent_w_m, p.extent_h_m)
        r0, r1 = max(0, int(np.floor(cy - ry)) - 1), min(h, int(np.ceil(cy + ry)) + 2)
        c0, c1 = max(0, int(np.floor(cx - rx)) - 1), min(w, int(np.ceil(cx + rx)) + 2)
        rr, cc = np.mgrid[r0:r1, c0:c1]
        inside = ((cc - cx) / rx) ** 2 + ((rr - cy) / ry) ** 2 <= 1.0
        canvas[r0:r1, c0:c1][inside] = p.plant_color
    if p.noise_amplitude:
        rng = np.random.default_rng(p.noise_seed)
        canvas += rng.integers(-p.noise_amplitude, p.noise_amplitude + 1, size=canvas.shape)
    pixels = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
    return PlotImage(pixels, p.extent_w_m, p.extent_h_m)
