import argparse
import csv
import json

import pytest

from plotbench.cli import build_parser, main, parse_methods
from plotbench.mock_server import MockEndpoint


@pytest.mark.parametrize("spec,out", [("1-5", [1, 2, 3, 4, 5]), ("1,3,5", [1, 3, 5]), ("2-3,5", [2, 3, 5])])
def test_parse_methods(spec, out):
    assert parse_methods(spec) == out


@pytest.mark.parametrize("spec", ["0", "6", "1-7", ""])
def test_parse_methods_rejects(spec):
    with pytest.raises(argparse.ArgumentTypeError):
        parse_methods(spec)


def test_parser_has_all_commands():
    p = build_parser()
    for cmd in ("generate", "detect", "prompts", "run", "report", "mock-serve"):
        assert p.parse_args([cmd] + {
            "generate": ["--out", "x"], "detect": [], "prompts": ["--manifest", "m", "--out", "o"],
            "run": ["--manifest", "m", "--endpoint", "e", "--model", "a", "--out", "o"],
            "report": ["--records", "r", "--out", "o"], "mock-serve": ["--manifest", "m"]}[cmd]).command == cmd


def test_detect_and_prompts(small_set, tmp_path, capsys):
    mpath = str(small_set.root / "manifest.json")
    assert main(["detect", "--manifest", mpath, "--out", str(tmp_path / "pts.json")]) == 0
    pts = json.loads((tmp_path / "pts.json").read_text())
    first = small_set.images[0]
    truth = json.loads((small_set.root / first.config).read_text())
    assert pts[first.id]["count"] == len(truth["field"]["plots"][0]["plants"])

    assert main(["prompts", "--manifest", mpath, "--blind", "--out", str(tmp_path / "p")]) == 0
    names = sorted(f.name for f in (tmp_path / "p").iterdir())
    assert names == sorted([f"method_{k}.json" for k in range(1, 6)] + [f"method_{k}_blind.json" for k in range(1, 6)])


def test_run_and_report(small_set, tmp_path):
    mpath = str(small_set.root / "manifest.json")
    with MockEndpoint(small_set, "echo") as srv:
        rc = main(["run", "--manifest", mpath, "--endpoint", srv.url, "--model", "a", "--model", "b",
                   "--methods", "1,2", "--out", str(tmp_path / "run"), "--parallel", "2"])
    assert rc == 0
    lines = (tmp_path / "run" / "records.jsonl").read_text().splitlines()
    assert len(lines) == 6 * 2 * 2
    assert main(["report", "--records", str(tmp_path / "run" / "records.jsonl"), "--group-by", "method_label,model_name",
                 "--out", str(tmp_path / "rep")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "rep" / "aggregates.csv")))
    assert {r["group"] for r in rows} == {f"method_label={k}|model_name={m}" for k in (1, 2) for m in "ab"}


def test_bad_manifest_exit_code(tmp_path, capsys):
    (tmp_path / "m.json").write_text('{"images": [{"id": "a", "path": "a.png"}]}')
    rc = main(["run", "--manifest", str(tmp_path / "m.json"), "--endpoint", "http://127.0.0.1:9", "--model", "x",
               "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "images[0].config" in capsys.readouterr().err


def test_generate_command(tmp_path):
    cfg = {"seed": 4, "num_layouts": 1, "stages": [30], "num_few_shot": 2}
    (tmp_path / "gen.json").write_text(json.dumps(cfg))
    assert main(["generate", "--manifest", str(tmp_path / "gen.json"), "--out", str(tmp_path / "d"),
                 "--format", "ppm"]) == 0
    m = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert len(m["images"]) == 1 and len(m["few_shot"]) == 2
    assert m["images"][0]["path"].endswith(".ppm")
