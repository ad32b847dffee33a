import json
from datetime import datetime, timezone

import pytest

from plotbench.client import EndpointConfig, RawResponse
from plotbench.config import canonical_serialize, to_dict
from plotbench.dataset import ImageEntry, ManifestError
from plotbench.geometry import DEFAULT_EXTENT_H_M as H, DEFAULT_EXTENT_W_M as W
from plotbench.mock_server import MockEndpoint, fenced, perturb
from plotbench.runner import (
    CocoFormatError, GroundTruth, MetricRecord, aggregate, compare_groups, dap_from_dates, evaluate, load_coco,
    parse_local_time, read_records, resolve_truth, run_suite, trial_seed, write_records, write_report,
)
from test_config import make_config


def truth_of(c):
    return GroundTruth.from_config("img", c, (W, H))


def test_evaluate_exact_answer():
    c = make_config()
    rec = evaluate(RawResponse(fenced(c), 12.0), truth_of(c))
    assert rec.strict_parse_ok and rec.bleu4 == 1.0 and rec.key_missing_rate == 0.0
    for name in ("dap_mae_term", "plant_count_abs_err", "chamfer_m", "sun_elev_abs_err", "sun_azim_abs_err",
                 "leaf_pitch_abs_err", "water_abs_err", "prospect_n_abs_err"):
        assert getattr(rec, name) == 0.0, name
    assert rec.chamfer_status == "ok" and rec.latency_ms == 12.0


def test_evaluate_perturbed():
    c = make_config()
    rec = evaluate(fenced(perturb(c)), truth_of(c))
    assert rec.dap_mae_term == 2.0
    assert rec.chamfer_m == pytest.approx(0.2, abs=1e-12)
    assert rec.plant_count_abs_err == 0.0


def test_evaluate_azimuth_wraps():
    c = make_config()
    d = to_dict(c)
    d["environment"]["sun_azimuth_deg"] = (c.environment.sun_azimuth_deg + 350.0) % 360.0
    rec = evaluate(json.dumps(d), truth_of(c))
    assert rec.sun_azim_abs_err == pytest.approx(10.0)


def test_evaluate_no_plants_and_partial():
    c = make_config()
    d = to_dict(c)
    d["field"]["plots"] = []
    del d["plant_properties"]
    rec = evaluate(json.dumps(d), truth_of(c))
    assert rec.chamfer_status == "no-prediction" and rec.chamfer_m is None
    assert rec.plant_count_abs_err == len(c.all_plants())
    assert rec.chlorophyll_abs_err is None and rec.leaf_pitch_abs_err is None
    assert rec.key_missing_rate == pytest.approx(8 / 31)
    assert rec.metric("no_prediction") == 1.0


def test_evaluate_repaired_and_unparseable():
    c = make_config()
    text = canonical_serialize(c)[:-1]  # drop the final brace
    rec = evaluate(text, truth_of(c))
    assert not rec.strict_parse_ok and rec.repaired_parse_ok
    assert rec.dap_mae_term == 0.0 and rec.metric("syntax_error") == 1.0
    bad = evaluate("I see some plants.", truth_of(c))
    assert bad.failure_kind == "unparseable" and bad.dap_mae_term is None
    assert bad.metric("syntax_error_repaired") == 1.0


def test_wrong_types_are_absent_not_errors():
    c = make_config()
    d = to_dict(c)
    d["metadata"]["dap"] = "thirty"
    d["field"]["plots"] = "many"
    rec = evaluate(json.dumps(d), truth_of(c))
    assert rec.dap_mae_term is None and rec.chamfer_status is None


def test_load_coco(tmp_path):
    doc = {"images": [{"id": 1, "width": 381, "height": 1080}],
           "annotations": [{"image_id": 1, "bbox": [180.0, 530.0, 21.0, 20.0]}]}
    (pts, n), = load_coco(doc, (W, H)).values()
    assert n == 1
    assert pts.points[0] == pytest.approx((0.0, 0.0), abs=1e-12)
    bad = {"images": [{"id": 1, "width": 10, "height": 10}], "annotations": [{"image_id": 1, "bbox": [1, 2]}]}
    with pytest.raises(CocoFormatError, match=r"annotations\[0\].bbox"):
        load_coco(bad, (W, H))
    with pytest.raises(CocoFormatError, match="unknown image"):
        load_coco({"images": [], "annotations": [{"image_id": 5, "bbox": [0, 0, 1, 1]}]}, (W, H))
    (tmp_path / "c.json").write_text("{oops")
    with pytest.raises(CocoFormatError):
        load_coco(tmp_path / "c.json", (W, H))


def test_dates_and_times():
    t = parse_local_time("2023-07-01T23:30:00", -7)
    assert t == datetime(2023, 7, 2, 6, 30, tzinfo=timezone.utc)
    assert dap_from_dates("2023-06-01", t, -7) == 30
    assert dap_from_dates("2023-06-01", t, 0) == 31


def test_real_image_truth(small_set, tmp_path):
    coco = {"images": [{"id": 4, "width": 381, "height": 1080}],
            "annotations": [{"image_id": 4, "bbox": [100, 100, 20, 20]}, {"image_id": 4, "bbox": [150, 700, 20, 20]}]}
    (tmp_path / "coco.json").write_text(json.dumps(coco))
    m = small_set
    e = ImageEntry(id="real", path=m.images[0].path, kind="real", coco=str(tmp_path / "coco.json"),
                   coco_image_id=4, planting_date="2023-06-01", capture_time="2023-07-15T11:00:00",
                   utc_offset_hours=-7, lat=38.54, lon=-121.75)
    t = resolve_truth(m, e)
    assert t.dap == 44 and len(t.points) == 2 and t.config is None
    # 18:00 UTC; pvlib SPA gives 56.813 / 111.254
    assert t.sun_elevation_deg == pytest.approx(56.813, abs=0.05)
    assert t.sun_azimuth_deg == pytest.approx(111.254, abs=0.05)
    rec = evaluate(fenced(make_config()), t)
    assert rec.bleu4 is None and rec.chlorophyll_abs_err is None and rec.dap_mae_term is not None


def test_trial_seed_stable():
    assert trial_seed(0, "a", "m", 1) == trial_seed(0, "a", "m", 1)
    assert trial_seed(0, "a", "m", 1) != trial_seed(0, "a", "m", 2)


def test_compare_groups():
    assert compare_groups([[0.0] * 5, [0.0] * 5, [0.0] * 5]) == ["a", "a", "a"]
    letters = compare_groups([[1, 2, 3, 4, 5, 6, 7, 8, 9, 10], [101, 102, 103, 104, 105, 106, 107, 108, 109, 110]])
    assert letters == ["a", "b"]


def test_aggregate_blocks_and_exclusions():
    recs = []
    for model in ("x", "y"):
        for method in (1, 2):
            for i in range(6):
                dap = float(i) if method == 1 else 100.0 + i
                recs.append(MetricRecord(model_name=model, method_id=method, strict_parse_ok=True,
                                         repaired_parse_ok=True, dap_mae_term=dap if i else None))
    rows = {(r["group"], r["metric"]): r for r in aggregate(recs, metrics=("dap_mae_term", "syntax_error"))}
    r1 = rows[("model_name=x|method_label=1", "dap_mae_term")]
    assert r1["n"] == 5 and r1["n_excluded"] == 1 and r1["mean"] == 3.0
    assert r1["ci_lo"] <= 3.0 <= r1["ci_hi"]
    assert rows[("model_name=x|method_label=2", "dap_mae_term")]["letter"] == "b"
    assert rows[("model_name=y|method_label=1", "dap_mae_term")]["letter"] == "a"
    assert rows[("model_name=y|method_label=2", "syntax_error")]["letter"] == "a"


def test_records_and_report_round_trip(tmp_path):
    recs = [MetricRecord(trial_id="t", model_name="m", method_id=3, strict_parse_ok=True, repaired_parse_ok=True,
                         repair_log=["trailing-comma"], dap_mae_term=1.5)]
    write_records(recs, tmp_path / "r.jsonl")
    assert read_records(tmp_path / "r.jsonl") == recs
    csv_path, meta = write_report(aggregate(recs), tmp_path, {"seed": 3})
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "group,metric,mean,ci_lo,ci_hi,n,letter"
    assert json.loads(meta.read_text())["seed"] == 3


def test_run_suite_against_mock(small_set):
    with MockEndpoint(small_set, "echo") as srv:
        ep = EndpointConfig(srv.url, "mock", backoff_s=0.0)
        recs = run_suite(small_set, [ep], methods=(1, 4, 5), include_blind=True, parallel=3)
    assert len(recs) == 6 * 3 * 2
    assert srv.violations == []
    sighted = [r for r in recs if not r.blind]
    assert all(r.dap_mae_term == 0.0 and r.chamfer_m == 0.0 for r in sighted)
    ids = [r.trial_id for r in recs]
    assert ids[:2] == [f"{small_set.images[0].id}/mock/m1", f"{small_set.images[0].id}/mock/m1/blind"]
    m1_blind = [r for r in recs if r.blind and r.method_id == 1]
    assert all(not r.repaired_parse_ok for r in m1_blind)


def test_run_suite_deterministic_order_and_transport_failures(small_set):
    with MockEndpoint(small_set, "echo", fail_first=1000) as srv:
        ep = EndpointConfig(srv.url, "mock", max_retries=1, backoff_s=0.0)
        recs = run_suite(small_set, [ep], methods=(2,), parallel=4)
    assert [r.failure_kind for r in recs] == ["http_status"] * 6
    assert all(r.metric("syntax_error") == 1.0 and r.key_missing_rate is None for r in recs)
    assert len(srv.requests) == 12


def test_retry_recovers(small_set):
    with MockEndpoint(small_set, "echo", fail_first=2) as srv:
        ep = EndpointConfig(srv.url, "mock", max_retries=2, backoff_s=0.0)
        recs = run_suite(small_set, [ep], methods=(1,), parallel=1)
    assert all(r.failure_kind is None for r in recs)


def test_manifest_error_before_any_request(small_set, tmp_path):
    from dataclasses import replace
    broken = replace(small_set, images=small_set.images + [ImageEntry(id="ghost", path="nope.png", config="x.json")])
    with MockEndpoint(small_set, "echo") as srv:
        with pytest.raises(ManifestError, match="nope.png"):
            run_suite(broken, [EndpointConfig(srv.url, "mock")], methods=(1,))
    assert srv.requests == []


def test_ollama_wire_against_mock(small_set):
    with MockEndpoint(small_set, "perturb") as srv:
        ep = EndpointConfig(srv.url, "mock", wire="ollama")
        recs = run_suite(small_set, [ep], methods=(3,))
    assert all(r.dap_mae_term == 2.0 for r in recs)


def test_canned_profile(small_set):
    from plotbench.client import encode_request
    from plotbench.runner import prepare

    ep0 = EndpointConfig("http://placeholder", "mock")
    trials, _ = prepare(small_set, [ep0], (1,))
    body = encode_request(ep0, trials[0].bundle, small_set.root, trials[0].seed)
    import hashlib
    canned = {hashlib.sha256(body).hexdigest(): '{"seed": 1,}'}
    with MockEndpoint(small_set, "canned", canned=canned) as srv:
        recs = run_suite(small_set, [EndpointConfig(srv.url, "mock")], methods=(1,))
    assert recs[0].repair_log == ["trailing-comma"]
    assert all(r.failure_kind == "unparseable" for r in recs[1:])


def test_blind_leak_is_flagged(small_set):
    import urllib.request
    import base64
    img = (small_set.root / small_set.images[0].path).read_bytes()
    body = {"model": "m", "messages": [
        {"role": "user", "content": [{"type": "image_url", "image_url": {"url": "data:image/png;base64,"
                                                                                + base64.b64encode(img).decode()}}]},
        {"role": "user", "content": "Answer now:"}]}
    with MockEndpoint(small_set, "echo") as srv:
        req = urllib.request.Request(srv.url + "/chat/completions", data=json.dumps(body).encode(),
                                     headers={"Content-Type": "application/json"})
        with pytest.raises(urllib.error.HTTPError):
            urllib.request.urlopen(req)
    assert srv.violations
