import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from plotbench.config import (
    ConfigError, ResponseDocument, canonical_serialize, config_from_dict, default_schema_manifest, flatten_keys,
    parse_config, parse_response_document, to_dict, truth_keys, validate,
)
from plotbench.dataset import ParamRanges, STAGES, sample_config, synth_row_layout


def make_config(seed=1, n=6, dap=30):
    return sample_config(seed, ParamRanges(), synth_row_layout(n, jitter_seed=seed), dap)


def test_manifest_shape():
    schema = default_schema_manifest()
    assert len(schema.paths) == 31
    assert len(set(schema.paths)) == 31
    camera = [p for p in schema.paths if p == "camera" or p.startswith("camera.")]
    assert len(camera) == 7
    assert schema.key("field.plots").type == "array"
    assert "clay_loam" in schema.soil_categories


def test_flatten_counts_array_once():
    doc = {"a": 1, "b": {"c": [1, 2, {"d": 3}], "e": {"f": None}}}
    assert flatten_keys(doc) == ["a", "b", "b.c", "b.e", "b.e.f"]


def test_sampled_config_has_exactly_the_truth_keys():
    c = make_config()
    assert flatten_keys(c) == truth_keys()
    assert validate(c) == []


def test_canonical_round_trip_and_reasoning_first():
    c = make_config()
    text = canonical_serialize(ResponseDocument("look at the leaves", c))
    d = json.loads(text)
    assert next(iter(d)) == "reasoning"
    doc = parse_response_document(text)
    assert doc.config == c
    assert canonical_serialize(doc) == text


def test_canonical_rejects_nan():
    d = to_dict(make_config())
    d["environment"]["sun_elevation_deg"] = math.nan
    with pytest.raises(ValueError):
        canonical_serialize(d)


def test_validate_reports_paths():
    d = to_dict(make_config())
    d["environment"]["sun_azimuth_deg"] = 360.0
    d["environment"]["soil_category"] = "moon_dust"
    d["metadata"]["dap"] = 250
    d["field"]["plots"][0]["plants"][0] = [5.0, 0.0]
    paths = {p for p, _ in validate(d)}
    assert {"environment.sun_azimuth_deg", "environment.soil_category", "metadata.dap",
            "field.plots[0].plants[0]"} <= paths


def test_validate_missing_and_type():
    d = to_dict(make_config())
    del d["camera"]["iso"]
    d["camera"]["height_m"] = "high"
    errs = dict(validate(d))
    assert errs["camera.iso"] == "missing"
    assert errs["camera.height_m"].startswith("expected")


def test_config_from_dict_errors_name_the_path():
    d = to_dict(make_config())
    del d["plant_properties"]["water_g_cm2"]
    with pytest.raises(ConfigError, match="water_g_cm2"):
        config_from_dict(d)


def test_parse_config_rejects_garbage():
    with pytest.raises(ValueError):
        parse_config("{not json")


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 20), dap=st.sampled_from(STAGES))
def test_sampled_configs_are_valid_and_round_trip(seed, n, dap):
    c = make_config(seed, n, dap)
    assert validate(c) == []
    assert parse_config(canonical_serialize(c)) == c
    assert canonical_serialize(parse_config(canonical_serialize(c))) == canonical_serialize(c)


def test_sampling_is_deterministic():
    assert make_config(42) == make_config(42)
    assert make_config(42) != make_config(43)
