"""Write a synthetic evaluation set: configs, rendered images, few-shot answers, manifest."""
from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ResponseDocument, SimulationConfig, canonical_serialize
from .dataset import DatasetManifest, FewShotEntry, ImageEntry, ManifestError, check_manifest, sample_config, \
    synth_row_layout
from .detection import DetectionParams, detect_plants, read_image, write_image
from .geometry import PointSet
from .raster import RasterParams, rasterize

log = logging.getLogger(__name__)


def describe(c: SimulationConfig) -> str:
    """Short reasoning text written into few-shot answers."""
    env, pp = c.environment, c.plant_properties
    return (f"Canopy cover points to about {c.metadata.dap} days after planting. "
            f"I count {len(c.all_plants())} plants in one row down the plot. "
            f"Shadow direction and length put the sun near {env.sun_azimuth_deg:.0f} deg azimuth "
            f"and {env.sun_elevation_deg:.0f} deg elevation. "
            f"The soil looks like {env.soil_category.replace('_', ' ')}. "
            f"Leaf color suggests roughly {pp.chlorophyll_ug_cm2:.0f} ug/cm2 of chlorophyll.")


def _layouts(m: DatasetManifest, rng: np.random.Generator, count: int, offset: int = 0) -> list[PointSet]:
    out = []
    if m.layout_images and not offset:
        params = DetectionParams(**m.detection)
        for rel in m.layout_images:
            img = read_image(m.resolve(rel), m.extent_w_m, m.extent_h_m)
            pts = detect_plants(img, params)
            log.info("layout from %s: %d plants", rel, len(pts))
            out.append(pts)
        return out
    lo, hi = m.plant_count_range
    for i in range(count):
        n = int(rng.integers(lo, hi + 1))
        out.append(synth_row_layout(n, m.extent_h_m, jitter_seed=m.seed * 1000 + offset + i,
                                    extent_w_m=m.extent_w_m))
    return out


def generate(m: DatasetManifest, out_dir: str | Path, image_format: str = "png") -> DatasetManifest:
    """Render every (layout, stage) pair plus the few-shot pool; return the filled manifest.

    All randomness flows from ``m.seed``, so the same manifest gives the
    same files.
    """
    check_manifest(m)
    if image_format not in ("png", "ppm", "jpg"):
        raise ManifestError(f"unsupported image format {image_format!r}")
    out = Path(out_dir)
    for sub in ("configs", "images", "fewshot"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(m.seed)
    ranges = m.param_ranges()
    raster = RasterParams(img_w_px=m.image_w_px, img_h_px=m.image_h_px,
                          extent_w_m=m.extent_w_m, extent_h_m=m.extent_h_m)

    def render(c: SimulationConfig, stem: str, folder: str) -> str:
        rel = f"{folder}/{stem}.{image_format}"
        write_image(rasterize(c, replace(raster, noise_seed=c.seed)), out / rel)
        return rel

    images = []
    for li, layout in enumerate(_layouts(m, rng, m.num_layouts)):
        for dap in m.stages:
            image_id = f"L{li:03d}-D{dap:03d}"
            c = sample_config(int(rng.integers(2**31)), ranges, layout, dap)
            cfg_rel = f"configs/{image_id}.json"
            (out / cfg_rel).write_text(canonical_serialize(c) + "\n", encoding="utf-8")
            images.append(ImageEntry(id=image_id, path=render(c, image_id, "images"), config=cfg_rel))

    few_shot = []
    for k, layout in enumerate(_layouts(m, rng, m.num_few_shot, offset=500)):
        dap = m.stages[k % len(m.stages)]
        c = sample_config(int(rng.integers(2**31)), ranges, layout, dap)
        stem = f"ex{k + 1}"
        ans_rel = f"fewshot/{stem}.json"
        (out / ans_rel).write_text(canonical_serialize(ResponseDocument(describe(c), c)) + "\n", encoding="utf-8")
        few_shot.append(FewShotEntry(image=render(c, stem, "fewshot"), answer=ans_rel))

    result = replace(m, images=images, few_shot=few_shot, root=out)
    result.save(out / "manifest.json")
    return result

