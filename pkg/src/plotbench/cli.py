"""Command line entry point: generate, detect, prompts, run, report, mock-serve."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .client import EndpointConfig
from .dataset import DatasetManifest, ManifestError, load_manifest
from .detection import DetectionParams, detect_plants, read_image
from .geometry import DEFAULT_EXTENT_H_M, DEFAULT_EXTENT_W_M
from .prompts import build, build_blind, grounding_from_truth, render_bundle

log = logging.getLogger("plotbench")


def parse_methods(spec: str) -> list[int]:
    """'1-5', '1,3,5' or '2-3,5'."""
    out: list[int] = []
    for chunk in spec.split(","):
        chunk = chunk.strip()
        if "-" in chunk:
            a, b = chunk.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        elif chunk:
            out.append(int(chunk))
    bad = [k for k in out if k not in (1, 2, 3, 4, 5)]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"methods must be within 1-5, got {spec!r}")
    return sorted(set(out))


def _load_generation_manifest(path: str | None) -> DatasetManifest:
    if path is None:
        return DatasetManifest()
    return load_manifest(path)


def cmd_generate(args) -> int:
    from .generate import generate

    m = _load_generation_manifest(args.manifest)
    if args.seed is not None:
        m.seed = args.seed
    out = generate(m, args.out, args.format)
    print(f"wrote {len(out.images)} images and {len(out.few_shot)} few-shot examples to {args.out}")
    return 0


def cmd_detect(args) -> int:
    params = DetectionParams(threshold=args.threshold)
    results = {}
    if args.manifest:
        m = load_manifest(args.manifest)
        params = DetectionParams(**{**m.detection, **({"threshold": args.threshold} if args.threshold else {})})
        targets = [(e.id, m.resolve(e.path)) for e in m.images]
        extents = (m.extent_w_m, m.extent_h_m)
    else:
        targets = [(Path(p).stem, Path(p)) for p in args.images]
        extents = tuple(args.extent)
    for name, path in targets:
        pts = detect_plants(read_image(path, *extents), params)
        results[name] = {"count": len(pts), "points": [list(p) for p in pts.points]}
    text = json.dumps(results, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_prompts(args) -> int:
    from .runner import load_few_shot, resolve_truth

    m = load_manifest(args.manifest)
    entries = [e for e in m.images if args.image_id in (None, e.id)]
    if not entries:
        raise ManifestError(f"image {args.image_id!r} not in manifest")
    entry = entries[0]
    examples = load_few_shot(m)[:m.num_few_shot]
    truth = resolve_truth(m, entry)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in parse_methods(args.methods):
        grounding = None
        if k == 5:
            grounding = grounding_from_truth(truth.dap, truth.points, truth.sun(), (m.extent_w_m, m.extent_h_m))
        bundle = build(k, entry.path, None, examples if k >= 3 else (), grounding, m.num_few_shot)
        (out / f"method_{k}.json").write_text(render_bundle(bundle), encoding="utf-8")
        if args.blind:
            (out / f"method_{k}_blind.json").write_text(render_bundle(build_blind(bundle)), encoding="utf-8")
    print(f"wrote prompts for {entry.id} to {out}")
    return 0


def cmd_run(args) -> int:
    from .runner import aggregate, run_suite, write_records, write_report

    m = load_manifest(args.manifest)
    endpoints = [EndpointConfig(args.endpoint, name, wire=args.wire, context_window_tokens=args.context_window,
                                request_timeout_s=args.timeout, max_retries=args.retries,
                                max_in_flight=args.parallel)
                 for name in args.model]
    records = run_suite(m, endpoints, parse_methods(args.methods), args.blind, args.seed, args.parallel)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records(records, out / "records.jsonl")
    rows = aggregate(records, seed=args.seed)
    write_report(rows, out, {"seed": args.seed, "models": args.model, "methods": parse_methods(args.methods)})
    failed = sum(r.failure_kind is not None for r in records)
    print(f"{len(records)} trials, {failed} without usable output; results in {out}")
    return 0


def cmd_report(args) -> int:
    from .runner import aggregate, read_records, write_report

    records = read_records(args.records)
    group_by = tuple(k.strip() for k in args.group_by.split(","))
    rows = aggregate(records, group_by=group_by, seed=args.seed)
    csv_path, _ = write_report(rows, args.out, {"seed": args.seed, "group_by": list(group_by)})
    for row in rows:
        if row["n_excluded"]:
            print(f"{row['group']} {row['metric']}: {row['n_excluded']} trial(s) excluded")
    print(f"wrote {csv_path}")
    return 0


def cmd_mock_serve(args) -> int:
    from .mock_server import MockEndpoint

    m = load_manifest(args.manifest)
    server = MockEndpoint(m, profile=args.profile, fail_first=args.fail_first, port=args.port)
    print(f"mock endpoint ({args.profile}) listening on {server.url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="plotbench", description="Benchmark VLMs on plot-simulation config inference.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a synthetic evaluation set")
    g.add_argument("--manifest", help="generation manifest (defaults are used when omitted)")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--format", default="png", choices=("png", "ppm", "jpg"))
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("detect", help="find plant centers in plot images")
    d.add_argument("images", nargs="*")
    d.add_argument("--manifest")
    d.add_argument("--extent", nargs=2, type=float, default=(DEFAULT_EXTENT_W_M, DEFAULT_EXTENT_H_M),
                   metavar=("W_M", "H_M"))
    d.add_argument("--threshold", type=float)
    d.add_argument("--out")
    d.set_defaults(func=cmd_detect)

    pr = sub.add_parser("prompts", help="write the prompt bundles for one image")
    pr.add_argument("--manifest", required=True)
    pr.add_argument("--image-id")
    pr.add_argument("--methods", default="1-5")
    pr.add_argument("--blind", action="store_true")
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_prompts)

    r = sub.add_parser("run", help="send every trial to an endpoint and score it")
    r.add_argument("--manifest", required=True)
    r.add_argument("--endpoint", required=True, help="base URL, e.g. http://localhost:11434/v1")
    r.add_argument("--model", action="append", required=True, help="repeat for several models")
    r.add_argument("--wire", default="openai", choices=("openai", "ollama"))
    r.add_argument("--methods", default="1-5")
    r.add_argument("--blind", action="store_true", help="also run the no-image ablation")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--parallel", type=int, default=4)
    r.add_argument("--timeout", type=float, default=300.0)
    r.add_argument("--retries", type=int, default=2)
    r.add_argument("--context-window", type=int, default=32768)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("report", help="aggregate a records file")
    rp.add_argument("--records", required=True)
    rp.add_argument("--group-by", default="model_name,method_label")
    rp.add_argument("--seed", type=int, default=0)
    rp.add_argument("--out", required=True)
    rp.set_defaults(func=cmd_report)

    ms = sub.add_parser("mock-serve", help="serve the bundled mock endpoint")
    ms.add_argument("--manifest", required=True)
    ms.add_argument("--profile", default="echo", choices=("echo", "perturb", "canned"))
    ms.add_argument("--fail-first", type=int, default=0)
    ms.add_argument("--port", type=int, default=8000)
    ms.set_defaults(func=cmd_mock_serve)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ManifestError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
