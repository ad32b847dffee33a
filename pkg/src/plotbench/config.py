"""Plot simulation configuration: types, schema manifest, validation and serialization.

The schema manifest (``data/schema_manifest.json``) is the single source of truth
for key order, types and valid ranges. Validation, key-missing accounting, prompt
rendering and dataset sampling all read it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, is_dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised when a document cannot be turned into a SimulationConfig."""


@dataclass(frozen=True)
class Metadata:
    year: int
    location: str
    plant_type: str
    dap: int


@dataclass(frozen=True)
class Environment:
    soil_category: str
    soil_specular_coefficient: float
    sun_elevation_deg: float
    sun_azimuth_deg: float


@dataclass(frozen=True)
class Plot:
    bed_id: int
    row_id: int
    plants: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class FieldLayout:
    plot_width_m: float
    plot_length_m: float
    num_beds: int
    plots: tuple[Plot, ...] = ()


@dataclass(frozen=True)
class PlantProperties:
    prospect_n: float
    chlorophyll_ug_cm2: float
    carotenoid_ug_cm2: float
    anthocyanin_ug_cm2: float
    water_g_cm2: float
    dry_matter_g_cm2: float
    leaf_pitch_deg: float


@dataclass(frozen=True)
class Camera:
    shutter_speed_s: float
    iso: int
    resolution: tuple[int, int]
    model: str
    height_m: float
    lookat: tuple[float, float, float] = (0.0, 0.0, -1.0)


@dataclass(frozen=True)
class SimulationConfig:
    seed: int
    metadata: Metadata
    environment: Environment
    field: FieldLayout
    plant_properties: PlantProperties
    camera: Camera

    def all_plants(self) -> list[tuple[float, float]]:
        return [p for plot in self.field.plots for p in plot.plants]


@dataclass(frozen=True)
class ResponseDocument:
    """A model answer: free-text reasoning followed by the configuration."""

    reasoning: str
    config: SimulationConfig


# ---------------------------------------------------------------------------
# schema manifest


@dataclass(frozen=True)
class KeySpec:
    path: str
    type: str
    description: str = ""
    unit: str | None = None
    min: float | None = None
    max: float | None = None
    exclusive_min: bool = False
    exclusive_max: bool = False
    schema: Any = None


@dataclass(frozen=True)
class SchemaManifest:
    keys: tuple[KeySpec, ...]
    soil_categories: tuple[str, ...] = ()
    version: int = 1

    @property
    def paths(self) -> list[str]:
        return [k.path for k in self.keys]

    def key(self, path: str) -> KeySpec:
        for k in self.keys:
            if k.path == path:
                return k
        raise KeyError(path)

    def children(self, prefix: str = "") -> list[KeySpec]:
        """Direct children of ``prefix`` ("" for top level), in manifest order."""
        depth = prefix.count(".") + 1 if prefix else 0
        out = []
        for k in self.keys:
            if prefix and not k.path.startswith(prefix + "."):
                continue
            if k.path.count(".") == depth:
                out.append(k)
        return out


def load_schema_manifest(path: str | Path | None = None) -> SchemaManifest:
    if path is None:
        return default_schema_manifest()
    return _manifest_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@lru_cache(maxsize=None)
def default_schema_manifest() -> SchemaManifest:
    text = resources.files("plotbench").joinpath("data/schema_manifest.json").read_text(encoding="utf-8")
    return _manifest_from_dict(json.loads(text))


def _manifest_from_dict(d: dict) -> SchemaManifest:
    keys = tuple(KeySpec(**k) for k in d["keys"])
    return SchemaManifest(keys=keys, soil_categories=tuple(d.get("soil_categories", ())),
                          version=d.get("version", 1))


# ---------------------------------------------------------------------------
# key flattening


def flatten_keys(doc: Any, prefix: str = "") -> list[str]:
    """Dotted key paths of a JSON object, in document order.

    Objects are descended into; an array-valued member contributes a single
    path and its elements are not inspected.
    """
    if is_dataclass(doc) and not isinstance(doc, type):
        doc = to_dict(doc)
    if not isinstance(doc, dict):
        return []
    out: list[str] = []
    for key, value in doc.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        out.append(path)
        if isinstance(value, dict):
            out.extend(flatten_keys(value, path))
    return out


# ---------------------------------------------------------------------------
# dict <-> dataclass


def to_dict(obj: Any) -> Any:
    """Plain JSON-ready structure in schema order ("reasoning" first for responses)."""
    if isinstance(obj, ResponseDocument):
        out = {"reasoning": obj.reasoning}
        out.update(to_dict(obj.config))
        return out
    if is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    return obj


def _need(d: Any, key: str, path: str) -> Any:
    if not isinstance(d, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    if key not in d:
        raise ConfigError(f"{path + '.' if path else ''}{key}: missing")
    return d[key]


def _as_int(v: Any, path: str) -> int:
    if isinstance(v, bool):
        raise ConfigError(f"{path}: expected integer, got boolean")
    if isinstance(v, int):
        return v
    if isinstance(v, float) and v.is_integer():
        return int(v)
    raise ConfigError(f"{path}: expected integer, got {v!r}")


def _as_float(v: Any, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected number, got {v!r}")
    return float(v)


def _as_str(v: Any, path: str) -> str:
    if not isinstance(v, str):
        raise ConfigError(f"{path}: expected string, got {v!r}")
    return v


def _section(cls, d: dict, path: str):
    sec = _need(d, path, "")
    kwargs = {}
    for f in fields(cls):
        p = f"{path}.{f.name}"
        v = _need(sec, f.name, path)
        if f.type == "int":
            kwargs[f.name] = _as_int(v, p)
        elif f.type == "float":
            kwargs[f.name] = _as_float(v, p)
        elif f.type == "str":
            kwargs[f.name] = _as_str(v, p)
        else:
            kwargs[f.name] = v
    return kwargs


def _point(v: Any, path: str) -> tuple[float, float]:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"{path}: expected [x, y]")
    return (_as_float(v[0], path), _as_float(v[1], path))


def config_from_dict(d: dict) -> SimulationConfig:
    """Build a SimulationConfig from a parsed JSON object.

    Only structure and types are checked here; ranges are the job of
    :func:`validate`. A leading "reasoning" key is ignored.
    """
    if not isinstance(d, dict):
        raise ConfigError("<root>: expected an object")
    seed = _as_int(_need(d, "seed", ""), "seed")
    metadata = Metadata(**_section(Metadata, d, "metadata"))
    environment = Environment(**_section(Environment, d, "environment"))

    fk = _section(FieldLayout, d, "field")
    plots_raw = fk["plots"]
    if not isinstance(plots_raw, list):
        raise ConfigError("field.plots: expected an array")
    plots = []
    for i, p in enumerate(plots_raw):
        base = f"field.plots[{i}]"
        plants_raw = _need(p, "plants", base)
        if not isinstance(plants_raw, list):
            raise ConfigError(f"{base}.plants: expected an array")
        plots.append(Plot(
            bed_id=_as_int(_need(p, "bed_id", base), f"{base}.bed_id"),
            row_id=_as_int(_need(p, "row_id", base), f"{base}.row_id"),
            plants=tuple(_point(q, f"{base}.plants[{j}]") for j, q in enumerate(plants_raw)),
        ))
    fk["plots"] = tuple(plots)
    field_layout = FieldLayout(**fk)

    plant_properties = PlantProperties(**_section(PlantProperties, d, "plant_properties"))

    ck = _section(Camera, d, "camera")
    res = ck["resolution"]
    if not isinstance(res, list) or len(res) != 2:
        raise ConfigError("camera.resolution: expected [width_px, height_px]")
    ck["resolution"] = (_as_int(res[0], "camera.resolution"), _as_int(res[1], "camera.resolution"))
    look = ck["lookat"]
    if not isinstance(look, list) or len(look) != 3:
        raise ConfigError("camera.lookat: expected [x, y, z]")
    ck["lookat"] = tuple(_as_float(v, "camera.lookat") for v in look)
    camera = Camera(**ck)

    return SimulationConfig(seed=seed, metadata=metadata, environment=environment,
                            field=field_layout, plant_properties=plant_properties, camera=camera)


def parse_config(text: str) -> SimulationConfig:
    return config_from_dict(json.loads(text))


def parse_response_document(text: str) -> ResponseDocument:
    d = json.loads(text)
    reasoning = _need(d, "reasoning", "")
    return ResponseDocument(reasoning=_as_str(reasoning, "reasoning"), config=config_from_dict(d))


# ---------------------------------------------------------------------------
# serialization


def canonical_serialize(doc: SimulationConfig | ResponseDocument | dict, indent: int | None = 2) -> str:
    """Deterministic JSON text; floats use Python's shortest round-trip repr.

    Raises ValueError on NaN or infinity.
    """
    data = doc if isinstance(doc, dict) else to_dict(doc)
    return json.dumps(data, indent=indent, ensure_ascii=False, allow_nan=False)


# ---------------------------------------------------------------------------
# validation


def _get(d: Any, path: str) -> tuple[bool, Any]:
    cur = d
    for part in path.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return False, None
        cur = cur[part]
    return True, cur


def _type_ok(v: Any, typ: str) -> bool:
    if typ == "integer":
        return isinstance(v, int) and not isinstance(v, bool)
    if typ == "number":
        return isinstance(v, (int, float)) and not isinstance(v, bool)
    if typ == "string":
        return isinstance(v, str)
    if typ == "object":
        return isinstance(v, dict)
    if typ == "array":
        return isinstance(v, list)
    return True


def _range_violation(v: float, spec: KeySpec) -> str | None:
    if not math.isfinite(v):
        return "not finite"
    if spec.min is not None and (v < spec.min or (spec.exclusive_min and v == spec.min)):
        return f"{v} below {'>' if spec.exclusive_min else '>='}{spec.min}"
    if spec.max is not None and (v > spec.max or (spec.exclusive_max and v == spec.max)):
        return f"{v} above {'<' if spec.exclusive_max else '<='}{spec.max}"
    return None


def validate(c: SimulationConfig | dict, schema: SchemaManifest | None = None) -> list[tuple[str, str]]:
    """Check every schema invariant; returns (dotted path, message) pairs.

    An empty list means the config is valid. Violations are data: nothing is raised.
    """
    schema = schema or default_schema_manifest()
    d = to_dict(c) if not isinstance(c, dict) else c
    out: list[tuple[str, str]] = []
    for spec in schema.keys:
        present, v = _get(d, spec.path)
        if not present:
            out.append((spec.path, "missing"))
            continue
        if not _type_ok(v, spec.type):
            out.append((spec.path, f"expected {spec.type}"))
            continue
        if spec.type in ("integer", "number"):
            msg = _range_violation(float(v), spec)
            if msg:
                out.append((spec.path, msg))

    if schema.soil_categories:
        present, soil = _get(d, "environment.soil_category")
        if present and isinstance(soil, str) and soil not in schema.soil_categories:
            out.append(("environment.soil_category", f"unknown label {soil!r}"))

    present, res = _get(d, "camera.resolution")
    if present and isinstance(res, list):
        if len(res) != 2 or not all(_type_ok(v, "integer") and v > 0 for v in res):
            out.append(("camera.resolution", "expected two positive integers"))
    present, look = _get(d, "camera.lookat")
    if present and isinstance(look, list):
        if len(look) != 3 or not all(_type_ok(v, "number") and math.isfinite(v) for v in look):
            out.append(("camera.lookat", "expected three finite numbers"))

    ok_w, width = _get(d, "field.plot_width_m")
    ok_l, length = _get(d, "field.plot_length_m")
    present, plots = _get(d, "field.plots")
    if present and isinstance(plots, list):
        half_w = width / 2 if ok_w and _type_ok(width, "number") else math.inf
        half_l = length / 2 if ok_l and _type_ok(length, "number") else math.inf
        for i, plot in enumerate(plots):
            base = f"field.plots[{i}]"
            if not isinstance(plot, dict):
                out.append((base, "expected an object"))
                continue
            for key in ("bed_id", "row_id"):
                if not _type_ok(plot.get(key), "integer"):
                    out.append((f"{base}.{key}", "expected integer"))
            plants = plot.get("plants")
            if not isinstance(plants, list):
                out.append((f"{base}.plants", "expected an array"))
                continue
            for j, p in enumerate(plants):
                pp = f"{base}.plants[{j}]"
                if (not isinstance(p, list) or len(p) != 2
                        or not all(_type_ok(v, "number") and math.isfinite(v) for v in p)):
                    out.append((pp, "expected two finite numbers"))
                    continue
                x, y = p
                if abs(x) > half_w or abs(y) > half_l:
                    out.append((pp, f"({x}, {y}) outside plot bounds"))
    return out


def truth_keys(schema: SchemaManifest | None = None) -> list[str]:
    """The ground-truth key set used for key-missing accounting."""
    return (schema or default_schema_manifest()).paths
