"""Plant-location geometry: plot-local frame conversions and error metrics.

Frame: origin at the plot (image) center, x across the row toward image-right,
y along the row toward image-top, so moving down the image decreases y.
Pixel indices address pixel centers; pixel ``i`` spans ``[i, i + 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Default image footprint in meters; dataset manifests override it.
DEFAULT_EXTENT_W_M = 1.3521
DEFAULT_EXTENT_H_M = 3.8405


class EmptyPointSet(ValueError):
    """Chamfer distance is undefined when either set is empty."""


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PointSet:
    points: tuple[tuple[float, float], ...] = ()
    extent_w_m: float = DEFAULT_EXTENT_W_M
    extent_h_m: float = DEFAULT_EXTENT_H_M

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.points)
        if not all(math.isfinite(v) for p in pts for v in p):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float).reshape(-1, 2)


def _as_array(s) -> np.ndarray:
    if isinstance(s, PointSet):
        return s.array()
    return np.asarray(s, dtype=float).reshape(-1, 2)


def directed_mean_nn(p: np.ndarray, q: np.ndarray) -> float:
    """Mean over ``p`` of the distance to the nearest point of ``q``."""
    d = np.sqrt(((p[:, None, :] - q[None, :, :]) ** 2).sum(axis=-1))
    return float(d.min(axis=1).mean())


def chamfer_distance(s1, s2) -> float:
    """Sum of the two directed average nearest-neighbor distances (meters)."""
    a, b = _as_array(s1), _as_array(s2)
    if len(a) == 0 or len(b) == 0:
        raise EmptyPointSet("chamfer distance needs two non-empty point sets")
    return directed_mean_nn(a, b) + directed_mean_nn(b, a)


def mae(pred: Sequence[float], truth: Sequence[float]) -> float:
    if len(pred) != len(truth):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(truth)} truths")
    if not len(pred):
        raise LengthMismatch("mae needs at least one pair")
    return float(np.mean(np.abs(np.asarray(pred, float) - np.asarray(truth, float))))


def angular_error_deg(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def circular_mae_deg(pred_deg: Sequence[float], truth_deg: Sequence[float]) -> float:
    """MAE on the circle: each error is the shorter way round."""
    if len(pred_deg) != len(truth_deg):
        raise LengthMismatch(f"{len(pred_deg)} predictions vs {len(truth_deg)} truths")
    if not len(pred_deg):
        raise LengthMismatch("mae needs at least one pair")
    return sum(angular_error_deg(p, t) for p, t in zip(pred_deg, truth_deg)) / len(pred_deg)


def rel_to_meters(rx: float, ry: float, extent_w_m: float, extent_h_m: float) -> tuple[float, float]:
    """Relative image coordinates (0..1, origin top-left) to plot meters."""
    return (rx - 0.5) * extent_w_m, -(ry - 0.5) * extent_h_m


def meters_to_rel(x: float, y: float, extent_w_m: float, extent_h_m: float) -> tuple[float, float]:
    return x / extent_w_m + 0.5, 0.5 - y / extent_h_m


def pixel_to_meters(px: float, py: float, img_w_px: int, img_h_px: int,
                    extent_w_m: float, extent_h_m: float) -> tuple[float, float]:
    """Pixel index (possibly fractional, e.g. a centroid) to plot meters."""
    if not (-0.5 <= px <= img_w_px - 0.5 and -0.5 <= py <= img_h_px - 0.5):
        raise ValueError(f"pixel ({px}, {py}) outside a {img_w_px}x{img_h_px} image")
    return rel_to_meters((px + 0.5) / img_w_px, (py + 0.5) / img_h_px, extent_w_m, extent_h_m)


def meters_to_pixel(x: float, y: float, img_w_px: int, img_h_px: int,
                    extent_w_m: float, extent_h_m: float) -> tuple[float, float]:
    """Inverse of :func:`pixel_to_meters`; returns fractional pixel indices."""
    rx, ry = meters_to_rel(x, y, extent_w_m, extent_h_m)
    return rx * img_w_px - 0.5, ry * img_h_px - 0.5
