"""Fixed inputs for the prompt golden files.

Regenerate after an intentional prompt change with

    PLOTBENCH_REGEN_GOLDEN=1 pytest tests/test_prompts.py
"""
import os
from pathlib import Path

from plotbench.config import ResponseDocument, canonical_serialize
from plotbench.dataset import ParamRanges, sample_config, synth_row_layout
from plotbench.generate import describe
from plotbench.geometry import DEFAULT_EXTENT_H_M, DEFAULT_EXTENT_W_M
from plotbench.prompts import FewShotExample, build, build_blind, grounding_from_truth
from plotbench.solar import SunPosition

GOLDEN = Path(__file__).parent / "golden"
REGEN = os.environ.get("PLOTBENCH_REGEN_GOLDEN") == "1"
TARGET = "images/L000-D050.png"


def examples():
    out = []
    for k, (seed, n, dap) in enumerate([(101, 7, 10), (102, 12, 30), (103, 9, 50)], start=1):
        c = sample_config(seed, ParamRanges(), synth_row_layout(n, jitter_seed=seed), dap)
        out.append(FewShotExample(canonical_serialize(ResponseDocument(describe(c), c)), f"fewshot/ex{k}.png"))
    return out


def target_config():
    return sample_config(7, ParamRanges(), synth_row_layout(8, jitter_seed=7), 50)


def grounding():
    c = target_config()
    sun = SunPosition(c.environment.sun_elevation_deg, c.environment.sun_azimuth_deg)
    return grounding_from_truth(c.metadata.dap, c.all_plants(), sun, (DEFAULT_EXTENT_W_M, DEFAULT_EXTENT_H_M))


def bundles():
    ex = examples()
    out = {}
    for k in range(1, 6):
        out[f"method_{k}"] = build(k, TARGET, examples=ex if k >= 3 else (), grounding=grounding() if k == 5 else None)
    out["blind"] = build_blind(out["method_5"])
    return out
