"""Trial orchestration, per-trial scoring, aggregation and report files."""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .client import ChatError, EndpointConfig, RawResponse, VLMClient
from .config import (
    SchemaManifest, SimulationConfig, canonical_serialize, config_from_dict,
    parse_config, truth_keys,
)
from .dataset import DatasetManifest, ImageEntry, ManifestError, check_manifest
from .geometry import EmptyPointSet, PointSet, angular_error_deg, chamfer_distance, pixel_to_meters
from .integrity import assess
from .prompts import FewShotExample, PromptBundle, build, build_blind, grounding_from_truth
from .solar import SunPosition, sun_position
from .stats import bonferroni, bootstrap_ci, kruskal_wallis, letter_display, mann_whitney_u

log = logging.getLogger(__name__)

ALPHA = 0.05
N_BOOT = 2000

BIOPHYSICAL = {
    "chlorophyll_abs_err": "plant_properties.chlorophyll_ug_cm2",
    "carotenoid_abs_err": "plant_properties.carotenoid_ug_cm2",
    "anthocyanin_abs_err": "plant_properties.anthocyanin_ug_cm2",
    "water_abs_err": "plant_properties.water_g_cm2",
    "dry_matter_abs_err": "plant_properties.dry_matter_g_cm2",
    "prospect_n_abs_err": "plant_properties.prospect_n",
}

INTEGRITY_METRICS = ("syntax_error", "syntax_error_repaired", "key_missing_rate", "bleu4")
VALUE_METRICS = ("dap_mae_term", "plant_count_abs_err", "chamfer_m", "no_prediction", "sun_elev_abs_err",
                 "sun_azim_abs_err", "leaf_pitch_abs_err", *BIOPHYSICAL)
METRICS = INTEGRITY_METRICS + VALUE_METRICS

REPORT_META = {
    "bleu_scored_on": "extracted JSON text vs canonical ground-truth config",
    "bleu_tokenization": "whitespace plus {}[],:\" as single tokens",
    "bleu_smoothing": "zero n-gram precision floored at 1e-9 inside the log",
    "ci_method": "bias-corrected percentile bootstrap of the mean",
    "ci_level": 0.95,
    "ci_resamples": N_BOOT,
    "significance": "Kruskal-Wallis then pairwise Mann-Whitney U, Bonferroni, alpha 0.05",
    "exg": "chromaticity-normalized 2g - r - b",
    "syntax_error": "strict parse; value metrics use repaired parses",
}


class CocoFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# ground truth


@dataclass
class GroundTruth:
    image_id: str
    kind: str
    dap: int | None
    points: PointSet
    sun_elevation_deg: float | None
    sun_azimuth_deg: float | None
    config: SimulationConfig | None = None

    @classmethod
    def from_config(cls, image_id: str, c: SimulationConfig, extents: tuple[float, float]) -> "GroundTruth":
        return cls(image_id, "synthetic", c.metadata.dap, PointSet(tuple(c.all_plants()), *extents),
                   c.environment.sun_elevation_deg, c.environment.sun_azimuth_deg, c)

    def reference_text(self) -> str | None:
        return canonical_serialize(self.config) if self.config is not None else None

    def sun(self) -> SunPosition:
        return SunPosition(self.sun_elevation_deg, self.sun_azimuth_deg)


def load_coco(src: str | Path | dict, extents: tuple[float, float]) -> dict[int, tuple[PointSet, int]]:
    """Plant points (bounding-box centers in plot meters) and counts per COCO image id."""
    if isinstance(src, dict):
        doc = src
    else:
        try:
            doc = json.loads(Path(src).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise CocoFormatError(f"{src}: not JSON ({e})") from None
    if not isinstance(doc, dict):
        raise CocoFormatError("<root>: expected an object")
    images = doc.get("images")
    if not isinstance(images, list):
        raise CocoFormatError("images: expected an array")
    anns = doc.get("annotations", [])
    if not isinstance(anns, list):
        raise CocoFormatError("annotations: expected an array")

    sizes = {}
    for i, im in enumerate(images):
        try:
            sizes[im["id"]] = (int(im["width"]), int(im["height"]))
        except (KeyError, TypeError, ValueError):
            raise CocoFormatError(f"images[{i}]: needs id, width and height") from None
    pts: dict[int, list] = {k: [] for k in sizes}
    for i, a in enumerate(anns):
        if not isinstance(a, dict) or "image_id" not in a:
            raise CocoFormatError(f"annotations[{i}].image_id: missing")
        if a["image_id"] not in sizes:
            raise CocoFormatError(f"annotations[{i}].image_id: unknown image {a['image_id']!r}")
        box = a.get("bbox")
        if (not isinstance(box, list) or len(box) != 4
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in box)):
            raise CocoFormatError(f"annotations[{i}].bbox: expected [x, y, w, h]")
        x, y, w, h = box
        img_w, img_h = sizes[a["image_id"]]
        # bbox corners are continuous coordinates; pixel index = coordinate - 0.5
        cx, cy = x + w / 2.0 - 0.5, y + h / 2.0 - 0.5
        try:
            pts[a["image_id"]].append(pixel_to_meters(cx, cy, img_w, img_h, *extents))
        except ValueError as e:
            raise CocoFormatError(f"annotations[{i}].bbox: {e}") from None
    return {k: (PointSet(tuple(v), *extents), len(v)) for k, v in pts.items()}


def parse_local_time(ts: str, utc_offset_hours: float = 0.0) -> datetime:
    t = datetime.fromisoformat(ts.replace("Z", "+00:00"))
    if t.tzinfo is None:
        t = t.replace(tzinfo=timezone(timedelta(hours=utc_offset_hours)))
    return t.astimezone(timezone.utc)


def dap_from_dates(planting: str | date, capture: datetime, utc_offset_hours: float = 0.0) -> int:
    if isinstance(planting, str):
        planting = date.fromisoformat(planting)
    local = capture.astimezone(timezone(timedelta(hours=utc_offset_hours)))
    return (local.date() - planting).days


def resolve_truth(m: DatasetManifest, entry: ImageEntry) -> GroundTruth:
    extents = (m.extent_w_m, m.extent_h_m)
    if entry.kind == "synthetic":
        c = parse_config(m.resolve(entry.config).read_text(encoding="utf-8"))
        return GroundTruth.from_config(entry.id, c, extents)
    coco = load_coco(m.resolve(entry.coco), extents)
    key = entry.coco_image_id if entry.coco_image_id is not None else next(iter(coco))
    if key not in coco:
        raise ManifestError(f"{entry.id}: COCO image id {key!r} not found")
    points, _ = coco[key]
    t = parse_local_time(entry.capture_time, entry.utc_offset_hours)
    sun = sun_position(entry.lat, entry.lon, t)
    return GroundTruth(entry.id, "real", dap_from_dates(entry.planting_date, t, entry.utc_offset_hours),
                       points, sun.elevation_deg, sun.azimuth_deg)


def load_few_shot(m: DatasetManifest) -> list[FewShotExample]:
    return [FewShotExample(m.resolve(e.answer).read_text(encoding="utf-8"), e.image) for e in m.few_shot]


# ---------------------------------------------------------------------------
# per-trial scoring


@dataclass
class MetricRecord:
    trial_id: str = ""
    model_name: str = ""
    method_id: int = 0
    blind: bool = False
    dap: int | None = None
    image_id: str = ""
    image_kind: str = "synthetic"
    strict_parse_ok: bool = False
    repaired_parse_ok: bool = False
    repair_log: list[str] = field(default_factory=list)
    key_missing_rate: float | None = None
    missing_keys: list[str] | None = None
    extra_keys: list[str] = field(default_factory=list)
    bleu4: float | None = None
    dap_mae_term: float | None = None
    plant_count_abs_err: float | None = None
    chamfer_m: float | None = None
    chamfer_status: str | None = None   # ok | no-prediction | empty-truth
    sun_elev_abs_err: float | None = None
    sun_azim_abs_err: float | None = None
    leaf_pitch_abs_err: float | None = None
    chlorophyll_abs_err: float | None = None
    carotenoid_abs_err: float | None = None
    anthocyanin_abs_err: float | None = None
    water_abs_err: float | None = None
    dry_matter_abs_err: float | None = None
    prospect_n_abs_err: float | None = None
    latency_ms: float | None = None
    failure_kind: str | None = None
    seed: int | None = None

    @property
    def method_label(self) -> str:
        return f"{self.method_id}-blind" if self.blind else str(self.method_id)

    def metric(self, name: str) -> float | None:
        if name == "syntax_error":
            return 0.0 if self.strict_parse_ok else 1.0
        if name == "syntax_error_repaired":
            return 0.0 if self.repaired_parse_ok else 1.0
        if name == "no_prediction":
            if self.chamfer_status is None:
                return None
            return 1.0 if self.chamfer_status == "no-prediction" else 0.0
        v = getattr(self, name)
        return None if v is None else float(v)


def _lookup(doc: Any, path: str) -> Any:
    cur = doc
    for part in path.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return None
        cur = cur[part]
    return cur


def _number(doc: Any, path: str) -> float | None:
    v = _lookup(doc, path)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        return None
    v = float(v)
    return v if np.isfinite(v) else None


def predicted_plants(doc: Any) -> list[tuple[float, float]] | None:
    """All plant locations across plots; None when the structure is unusable."""
    plots = _lookup(doc, "field.plots")
    if not isinstance(plots, list):
        return None
    out = []
    for plot in plots:
        plants = plot.get("plants") if isinstance(plot, dict) else None
        if not isinstance(plants, list):
            return None
        for p in plants:
            if (isinstance(p, (list, tuple)) and len(p) >= 2
                    and all(isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v) for v in p[:2])):
                out.append((float(p[0]), float(p[1])))
    return out


def _abs(a: float | None, b: float | None) -> float | None:
    return None if a is None or b is None else abs(a - b)


def evaluate(response: RawResponse | str, truth: GroundTruth, schema: SchemaManifest | None = None) -> MetricRecord:
    """Score one response against its ground truth.

    Integrity fields are always filled. Value metrics come from the strict or
    repaired parse; an unusable response leaves them absent (None).
    """
    text = response.text if isinstance(response, RawResponse) else response
    rep = assess(text, truth_keys(schema), truth.reference_text())
    rec = MetricRecord(
        image_id=truth.image_id, image_kind=truth.kind, dap=truth.dap,
        strict_parse_ok=rep.strict_parse_ok, repaired_parse_ok=rep.repaired_parse_ok,
        repair_log=list(rep.repair_log), key_missing_rate=rep.key_missing_rate,
        missing_keys=rep.missing_keys, extra_keys=list(rep.extra_keys), bleu4=rep.bleu4,
        latency_ms=response.latency_ms if isinstance(response, RawResponse) else None,
    )
    if not rep.repaired_parse_ok:
        rec.failure_kind = "unparseable"
        return rec
    doc = rep.document

    rec.dap_mae_term = _abs(_number(doc, "metadata.dap"), truth.dap)
    rec.sun_elev_abs_err = _abs(_number(doc, "environment.sun_elevation_deg"), truth.sun_elevation_deg)
    pred_az = _number(doc, "environment.sun_azimuth_deg")
    if pred_az is not None and truth.sun_azimuth_deg is not None:
        rec.sun_azim_abs_err = angular_error_deg(pred_az, truth.sun_azimuth_deg)

    plants = predicted_plants(doc)
    if plants is not None:
        rec.plant_count_abs_err = float(abs(len(plants) - len(truth.points)))
        if not plants:
            rec.chamfer_status = "no-prediction"
        elif not len(truth.points):
            rec.chamfer_status = "empty-truth"
        else:
            try:
                rec.chamfer_m = chamfer_distance(plants, truth.points)
                rec.chamfer_status = "ok"
            except EmptyPointSet:
                rec.chamfer_status = "no-prediction"

    if truth.config is not None:
        tc = truth.config.plant_properties
        rec.leaf_pitch_abs_err = _abs(_number(doc, "plant_properties.leaf_pitch_deg"), tc.leaf_pitch_deg)
        for name, path in BIOPHYSICAL.items():
            truth_value = getattr(tc, path.split(".")[1])
            setattr(rec, name, _abs(_number(doc, path), truth_value))
    return rec


# ---------------------------------------------------------------------------
# suite


def trial_seed(suite_seed: int, image_id: str, model: str, method: int | str) -> int:
    h = hashlib.sha256(f"{suite_seed}|{image_id}|{model}|{method}".encode()).digest()
    return int.from_bytes(h[:4], "big") & 0x7FFFFFFF


@dataclass(frozen=True)
class Trial:
    index: int
    image_id: str
    endpoint: EndpointConfig
    method_id: int
    blind: bool
    bundle: PromptBundle
    seed: int

    @property
    def trial_id(self) -> str:
        tid = f"{self.image_id}/{self.endpoint.model_name}/m{self.method_id}"
        return tid + "/blind" if self.blind else tid


def prepare(m: DatasetManifest, endpoints: Sequence[EndpointConfig], methods: Sequence[int],
            include_blind: bool = False, seed: int = 0,
            schema: SchemaManifest | None = None) -> tuple[list[Trial], dict[str, GroundTruth]]:
    """Resolve all ground truth and build every prompt; nothing touches the network."""
    check_manifest(m)
    if not m.images:
        raise ManifestError("manifest lists no images")
    for i, e in enumerate(m.images):
        if not m.resolve(e.path).is_file():
            raise ManifestError(f"images[{i}].path: {e.path} not found")
    examples = load_few_shot(m) if any(k >= 3 for k in methods) else []
    for ex in examples:
        if ex.image and not m.resolve(ex.image).is_file():
            raise ManifestError(f"few-shot image {ex.image} not found")
    n_examples = m.num_few_shot
    if examples and len(examples) < n_examples:
        raise ManifestError(f"methods 3-5 need {n_examples} few-shot examples, manifest has {len(examples)}")
    examples = examples[:n_examples]

    truths = {e.id: resolve_truth(m, e) for e in m.images}
    trials = []
    for e in m.images:
        t = truths[e.id]
        for ep in endpoints:
            for k in methods:
                grounding = None
                if k == 5:
                    grounding = grounding_from_truth(t.dap, t.points, t.sun(), (m.extent_w_m, m.extent_h_m))
                bundle = build(k, e.path, schema, examples if k >= 3 else (), grounding, n_examples,
                               ep.context_window_tokens)
                s = trial_seed(seed, e.id, ep.model_name, k)
                trials.append(Trial(len(trials), e.id, ep, k, False, bundle, s))
                if include_blind:
                    trials.append(Trial(len(trials), e.id, ep, k, True, build_blind(bundle), s))
    return trials, truths


def run_suite(m: DatasetManifest, endpoints: Sequence[EndpointConfig], methods: Sequence[int] = (1, 2, 3, 4, 5),
              include_blind: bool = False, seed: int = 0, parallel: int = 4,
              schema: SchemaManifest | None = None,
              client_factory: Callable[[EndpointConfig], VLMClient] | None = None) -> list[MetricRecord]:
    trials, truths = prepare(m, endpoints, methods, include_blind, seed, schema)
    factory = client_factory or (lambda ep: VLMClient(ep, image_root=m.root))
    clients = {ep: factory(ep) for ep in dict.fromkeys(t.endpoint for t in trials)}

    def execute(trial: Trial) -> MetricRecord:
        try:
            resp = clients[trial.endpoint].chat(trial.bundle, seed=trial.seed)
        except ChatError as e:
            log.warning("%s failed: %s", trial.trial_id, e)
            t = truths[trial.image_id]
            rec = MetricRecord(image_id=t.image_id, image_kind=t.kind, dap=t.dap, failure_kind=e.kind)
        else:
            rec = evaluate(resp, truths[trial.image_id], schema)
        return replace(rec, trial_id=trial.trial_id, model_name=trial.endpoint.model_name,
                       method_id=trial.method_id, blind=trial.blind, seed=trial.seed)

    try:
        with ThreadPoolExecutor(max_workers=max(1, parallel)) as pool:
            records = list(pool.map(execute, trials))
    finally:
        for c in clients.values():
            c.close()
    return records


# ---------------------------------------------------------------------------
# aggregation


def _group_key(rec: MetricRecord, group_by: Sequence[str]) -> tuple:
    return tuple(getattr(rec, k) for k in group_by)


def _label(group_by: Sequence[str], key: tuple) -> str:
    return "|".join(f"{k}={v}" for k, v in zip(group_by, key))


def _stable_seed(seed: int, *parts: str) -> int:
    return zlib.crc32("|".join([str(seed), *parts]).encode()) & 0x7FFFFFFF


def compare_groups(samples: Sequence[Sequence[float]], alpha: float = ALPHA) -> list[str]:
    """Letters for groups: omnibus Kruskal-Wallis, then Bonferroni-corrected pairwise tests."""
    k = len(samples)
    means = [float(np.mean(s)) for s in samples]
    if k < 2:
        return ["a"] * k
    _, p = kruskal_wallis(samples)
    sig = [[False] * k for _ in range(k)]
    if p < alpha:
        pairs = list(itertools.combinations(range(k), 2))
        raw = [mann_whitney_u(samples[i], samples[j])[1] for i, j in pairs]
        for (i, j), padj in zip(pairs, bonferroni(raw, len(pairs))):
            sig[i][j] = sig[j][i] = padj < alpha
    return letter_display(means, sig)


def aggregate(records: Iterable[MetricRecord], group_by: Sequence[str] = ("model_name", "method_label"),
              metrics: Sequence[str] = METRICS, seed: int = 0, n_boot: int = N_BOOT) -> list[dict]:
    """Mean and 95% CI per (group, metric), with letters across the last group key.

    Groups that share every key but the last form one comparison block.
    Absent values are excluded and counted in ``n_excluded``.
    """
    records = list(records)
    groups: dict[tuple, list[MetricRecord]] = {}
    for r in records:
        groups.setdefault(_group_key(r, group_by), []).append(r)

    rows = []
    for metric in metrics:
        blocks: dict[tuple, list[tuple]] = {}
        for key in groups:
            blocks.setdefault(key[:-1], []).append(key)
        letters: dict[tuple, str] = {}
        for block_keys in blocks.values():
            present = [(key, [v for r in groups[key] if (v := r.metric(metric)) is not None]) for key in block_keys]
            present = [(key, vals) for key, vals in present if vals]
            for (key, _), letter in zip(present, compare_groups([v for _, v in present])):
                letters[key] = letter
        for key, recs in groups.items():
            vals = [v for r in recs if (v := r.metric(metric)) is not None]
            label = _label(group_by, key)
            if not vals:
                rows.append({"group": label, "metric": metric, "mean": None, "ci_lo": None, "ci_hi": None,
                             "n": 0, "letter": "", "n_excluded": len(recs)})
                continue
            lo, hi = bootstrap_ci(vals, 0.95, n_boot, _stable_seed(seed, label, metric))
            rows.append({"group": label, "metric": metric, "mean": float(np.mean(vals)), "ci_lo": lo, "ci_hi": hi,
                         "n": len(vals), "letter": letters.get(key, "a"), "n_excluded": len(recs) - len(vals)})
    return rows


CSV_COLUMNS = ("group", "metric", "mean", "ci_lo", "ci_hi", "n", "letter")


def write_records(records: Iterable[MetricRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(asdict(r), ensure_ascii=False) + "\n")


def read_records(path: str | Path) -> list[MetricRecord]:
    names = {f.name for f in fields(MetricRecord)}
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                d = json.loads(line)
                out.append(MetricRecord(**{k: v for k, v in d.items() if k in names}))
    return out


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report(rows: Sequence[dict], out_dir: str | Path, meta: dict | None = None) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "aggregates.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    excluded = {f"{r['group']}::{r['metric']}": r["n_excluded"] for r in rows if r.get("n_excluded")}
    meta_path = out / "report_meta.json"
    doc = dict(REPORT_META)
    doc.update(meta or {})
    doc["excluded_counts"] = excluded
    meta_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, meta_path


def config_from_partial(truth: GroundTruth, template: SimulationConfig) -> SimulationConfig:
    """Fill a template config with whatever a partial (real-image) truth provides."""
    d = json.loads(canonical_serialize(template))
    if truth.dap is not None:
        d["metadata"]["dap"] = truth.dap
    if truth.sun_elevation_deg is not None:
        d["environment"]["sun_elevation_deg"] = truth.sun_elevation_deg
        d["environment"]["sun_azimuth_deg"] = truth.sun_azimuth_deg
    d["field"]["plots"] = [{"bed_id": 1, "row_id": 1, "plants": [list(p) for p in truth.points.points]}]
    return config_from_dict(d)
