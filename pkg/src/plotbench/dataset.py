"""Synthetic configuration sampling, mean-guess baselines and the dataset manifest."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .config import (
    Camera, Environment, FieldLayout, Metadata, PlantProperties, Plot, SchemaManifest,
    SimulationConfig, default_schema_manifest,
)
from .geometry import DEFAULT_EXTENT_H_M, DEFAULT_EXTENT_W_M, PointSet

STAGES = (10, 30, 50, 70, 90)

# Harness defaults; the reference dataset's own ranges were never published.
DEFAULT_RANGES: dict[str, tuple[float, float]] = {
    "environment.soil_specular_coefficient": (0.0, 0.3),
    "environment.sun_elevation_deg": (20.0, 70.0),
    "environment.sun_azimuth_deg": (90.0, 270.0),
    "plant_properties.prospect_n": (1.0, 3.0),
    "plant_properties.chlorophyll_ug_cm2": (10.0, 80.0),
    "plant_properties.carotenoid_ug_cm2": (2.0, 25.0),
    "plant_properties.anthocyanin_ug_cm2": (0.0, 10.0),
    "plant_properties.water_g_cm2": (0.004, 0.04),
    "plant_properties.dry_matter_g_cm2": (0.002, 0.02),
    "plant_properties.leaf_pitch_deg": (10.0, 60.0),
    "plot.bed_id": (1, 15),
    "plot.row_id": (1, 12),
}

DEFAULT_FIXED: dict[str, Any] = {
    "metadata.year": 2025,
    "metadata.location": "California, USA",
    "metadata.plant_type": "cowpea",
    "field.plot_width_m": DEFAULT_EXTENT_W_M,
    "field.plot_length_m": DEFAULT_EXTENT_H_M,
    "field.num_beds": 15,
    "camera.shutter_speed_s": 0.001,
    "camera.iso": 100,
    "camera.resolution": [381, 1080],
    "camera.model": "generic-rgb-20mp",
    "camera.height_m": 30.0,
    "camera.lookat": [0.0, 0.0, -1.0],
}

_INTEGER_PATHS = {"plot.bed_id", "plot.row_id", "metadata.year", "field.num_beds", "camera.iso"}


@dataclass(frozen=True)
class ParamRanges:
    ranges: Mapping[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_RANGES))
    fixed: Mapping[str, Any] = field(default_factory=lambda: dict(DEFAULT_FIXED))
    soil_categories: tuple[str, ...] = ()
    stages: tuple[int, ...] = STAGES

    def __post_init__(self):
        for path, (lo, hi) in self.ranges.items():
            if lo > hi:
                raise ValueError(f"{path}: low {lo} > high {hi}")
        if not self.soil_categories:
            object.__setattr__(self, "soil_categories", default_schema_manifest().soil_categories)

    def value(self, path: str, rng: np.random.Generator) -> Any:
        if path in self.ranges:
            lo, hi = self.ranges[path]
            if path in _INTEGER_PATHS:
                return int(rng.integers(int(lo), int(hi) + 1))
            v = float(f"{rng.uniform(lo, hi):.6g}")
            return min(max(v, lo), hi)
        return self.fixed[path]


def _round_pt(x: float, y: float) -> tuple[float, float]:
    return (round(float(x), 4) + 0.0, round(float(y), 4) + 0.0)


def synth_row_layout(n_plants: int, extent_h_m: float = DEFAULT_EXTENT_H_M, jitter_seed: int = 0,
                     extent_w_m: float = DEFAULT_EXTENT_W_M, jitter_frac: float = 0.05) -> PointSet:
    """Single row of evenly spaced plants along y, slight random x offsets.

    Plants sit at the centers of ``n_plants`` equal cells spanning 90% of the
    plot length, ordered from the image top down; x jitter is uniform within
    ``jitter_frac`` of the plot width. Coordinates are rounded to 0.1 mm.
    """
    if n_plants < 0:
        raise ValueError("n_plants must be >= 0")
    rng = np.random.default_rng(jitter_seed)
    span = 0.9 * extent_h_m
    pts = []
    for i in range(n_plants):
        y = span / 2 - (i + 0.5) * span / n_plants
        x = rng.uniform(-jitter_frac, jitter_frac) * extent_w_m
        pts.append(_round_pt(x, y))
    return PointSet(tuple(pts), extent_w_m, extent_h_m)


def sample_config(seed: int, ranges: ParamRanges, layout: PointSet, dap: int) -> SimulationConfig:
    """Draw one configuration; identical seeds give identical configs."""
    if dap < 0:
        raise ValueError("dap must be >= 0")
    rng = np.random.default_rng(seed)
    v = lambda path: ranges.value(path, rng)  # noqa: E731
    soil = ranges.soil_categories[int(rng.integers(len(ranges.soil_categories)))]
    environment = Environment(
        soil_category=soil,
        soil_specular_coefficient=v("environment.soil_specular_coefficient"),
        sun_elevation_deg=v("environment.sun_elevation_deg"),
        sun_azimuth_deg=v("environment.sun_azimuth_deg"),
    )
    plant_properties = PlantProperties(
        prospect_n=v("plant_properties.prospect_n"),
        chlorophyll_ug_cm2=v("plant_properties.chlorophyll_ug_cm2"),
        carotenoid_ug_cm2=v("plant_properties.carotenoid_ug_cm2"),
        anthocyanin_ug_cm2=v("plant_properties.anthocyanin_ug_cm2"),
        water_g_cm2=v("plant_properties.water_g_cm2"),
        dry_matter_g_cm2=v("plant_properties.dry_matter_g_cm2"),
        leaf_pitch_deg=v("plant_properties.leaf_pitch_deg"),
    )
    plot = Plot(bed_id=v("plot.bed_id"), row_id=v("plot.row_id"), plants=tuple(layout.points))
    field_layout = FieldLayout(
        plot_width_m=float(v("field.plot_width_m")),
        plot_length_m=float(v("field.plot_length_m")),
        num_beds=int(v("field.num_beds")),
        plots=(plot,),
    )
    res = v("camera.resolution")
    camera = Camera(
        shutter_speed_s=float(v("camera.shutter_speed_s")),
        iso=int(v("camera.iso")),
        resolution=(int(res[0]), int(res[1])),
        model=str(v("camera.model")),
        height_m=float(v("camera.height_m")),
        lookat=tuple(float(c) for c in v("camera.lookat")),
    )
    metadata = Metadata(year=int(v("metadata.year")), location=str(v("metadata.location")),
                        plant_type=str(v("metadata.plant_type")), dap=int(dap))
    return SimulationConfig(seed=int(seed), metadata=metadata, environment=environment,
                            field=field_layout, plant_properties=plant_properties, camera=camera)


def empirical_mean_guess_mae(values: Sequence[float]) -> float:
    """MAE of always predicting the sample mean."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("no values")
    return float(np.mean(np.abs(x - x.mean())))


def mean_guess_mae(ranges: ParamRanges | Mapping[str, tuple[float, float]],
                   empirical: Mapping[str, Sequence[float]] | None = None) -> dict[str, float]:
    """Baseline MAE per parameter.

    Uniform ranges give (high - low) / 4; parameters with an empirical
    distribution (plant count, stage DAP) use the mean absolute deviation.
    """
    table = ranges.ranges if isinstance(ranges, ParamRanges) else ranges
    out = {path: (hi - lo) / 4.0 for path, (lo, hi) in table.items()}
    for path, values in (empirical or {}).items():
        out[path] = empirical_mean_guess_mae(values)
    return out


# ---------------------------------------------------------------------------
# dataset manifest


class ManifestError(ValueError):
    pass


@dataclass
class ImageEntry:
    id: str
    path: str
    kind: str = "synthetic"             # synthetic | real
    config: str | None = None           # synthetic: ground-truth config JSON
    coco: str | None = None             # real: COCO annotation file
    coco_image_id: int | None = None
    planting_date: str | None = None    # real: ISO date
    capture_time: str | None = None     # real: ISO timestamp; naive means local time
    utc_offset_hours: float = 0.0
    lat: float | None = None
    lon: float | None = None


@dataclass
class FewShotEntry:
    image: str
    answer: str                         # ResponseDocument JSON file


@dataclass
class DatasetManifest:
    name: str = "plotbench"
    seed: int = 0
    extent_w_m: float = DEFAULT_EXTENT_W_M
    extent_h_m: float = DEFAULT_EXTENT_H_M
    image_w_px: int = 381
    image_h_px: int = 1080
    stages: list[int] = field(default_factory=lambda: list(STAGES))
    ranges: dict[str, list[float]] = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_RANGES.items()})
    fixed: dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_FIXED))
    soil_categories: list[str] = field(default_factory=list)
    plant_count_range: list[int] = field(default_factory=lambda: [5, 20])
    num_layouts: int = 2
    num_few_shot: int = 3
    layout_images: list[str] = field(default_factory=list)
    detection: dict[str, Any] = field(default_factory=dict)
    images: list[ImageEntry] = field(default_factory=list)
    few_shot: list[FewShotEntry] = field(default_factory=list)
    root: Path = field(default=Path("."), repr=False, compare=False)

    def param_ranges(self) -> ParamRanges:
        return ParamRanges(ranges={k: tuple(v) for k, v in self.ranges.items()}, fixed=dict(self.fixed),
                           soil_categories=tuple(self.soil_categories), stages=tuple(self.stages))

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("root")
        return d

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def manifest_from_dict(d: dict, root: str | Path = ".") -> DatasetManifest:
    if not isinstance(d, dict):
        raise ManifestError("manifest: expected an object")
    d = dict(d)
    try:
        images = [ImageEntry(**e) for e in d.pop("images", [])]
        few_shot = [FewShotEntry(**e) for e in d.pop("few_shot", [])]
        m = DatasetManifest(**d, images=images, few_shot=few_shot, root=Path(root))
    except TypeError as e:
        raise ManifestError(f"manifest: {e}") from None
    check_manifest(m)
    return m


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"{path}: {e}") from None
    return manifest_from_dict(d, path.parent)


def check_manifest(m: DatasetManifest, schema: SchemaManifest | None = None) -> None:
    """Structural checks that must pass before any image is sent anywhere."""
    if m.extent_w_m <= 0 or m.extent_h_m <= 0:
        raise ManifestError("extents must be positive")
    if m.image_w_px < 1 or m.image_h_px < 1:
        raise ManifestError("image size must be positive")
    for path, rng in m.ranges.items():
        if len(rng) != 2 or rng[0] > rng[1]:
            raise ManifestError(f"ranges.{path}: expected [low, high] with low <= high")
    seen = set()
    for i, e in enumerate(m.images):
        if e.id in seen:
            raise ManifestError(f"images[{i}].id: duplicate id {e.id!r}")
        seen.add(e.id)
        if e.kind == "synthetic":
            if not e.config:
                raise ManifestError(f"images[{i}].config: required for synthetic images")
        elif e.kind == "real":
            for key in ("coco", "planting_date", "capture_time", "lat", "lon"):
                if getattr(e, key) is None:
                    raise ManifestError(f"images[{i}].{key}: required for real images")
        else:
            raise ManifestError(f"images[{i}].kind: unknown kind {e.kind!r}")
