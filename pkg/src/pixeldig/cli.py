"""Command-line entry points.

Stage subcommands mirror the pipeline (`crawl-sites` ... `report`, or `run`
for everything); `dump-config`, `simulate`, `diff`, and `crack` expose the
parsing, behavior-simulation, and cracking surfaces directly; `mock-archive`
and `demo` provide the hermetic mode against the bundled synthetic corpus.

Exit code 0 on success; on failure a machine-readable error JSON is written
to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import behavior, demo_corpus, pipeline
from .configscript import NoRegisterPluginRegion, parse_config_script
from .cracker import build_dictionary, crack
from .mock_archive import MockArchive

logger = logging.getLogger(__name__)

_STAGE_COMMANDS = {stage.replace("_", "-"): stage for stage in pipeline.STAGES}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pixeldig",
        description="Reconstruct and analyze historical tracking-pixel "
                    "configurations from web-archive snapshots.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_pipeline_args(p):
        p.add_argument("--config", required=True, help="pipeline config JSON file")
        p.add_argument("--cdx-url", help="override the CDX index endpoint")
        p.add_argument("--replay-template",
                       help="override the replay URL template "
                            "(placeholders {timestamp} and {url})")
        p.add_argument("--jobs", type=int, help="bound stage-internal parallelism")

    for command in _STAGE_COMMANDS:
        p = sub.add_parser(command, help=f"run the {command} stage")
        add_pipeline_args(p)
    p = sub.add_parser("run", help="run all stages in order")
    add_pipeline_args(p)

    p = sub.add_parser("dump-config", help="parse configuration scripts to JSON")
    p.add_argument("scripts", nargs="+", help="configuration script files")
    p.add_argument("--pixel-id", help="expected pixel id (mismatches are flagged)")

    p = sub.add_parser("simulate", help="emit the payloads a configuration produces")
    p.add_argument("--config-json", required=True,
                   help="PixelConfiguration JSON (as written by dump-config)")
    p.add_argument("--context", required=True, help="PageContext JSON file")
    p.add_argument("--interaction", default="page_load",
                   help="page_load, button_click:N, or form_submit:N")
    p.add_argument("--patch-out", choices=behavior.PATCHABLE_FEATURES,
                   help="simulate with this feature removed")
    p.add_argument("--case-insensitive-params", action="store_true",
                   help="match unwanted-data parameter names case-insensitively")

    p = sub.add_parser("diff", help="compare two payload lists")
    p.add_argument("--before", required=True, help="payload-list JSON file")
    p.add_argument("--after", required=True, help="payload-list JSON file")

    p = sub.add_parser("crack", help="reverse hashed keys against wordlists")
    p.add_argument("--wordlist", action="append", default=[],
                   help="candidate file, one entry per line (repeatable)")
    p.add_argument("--observed", action="append", default=[],
                   help="plaintext key observed in the wild (repeatable)")
    p.add_argument("--digests", required=True,
                   help="file of 64-hex digests, one per line")

    p = sub.add_parser("spot-check",
                       help="fetch one live page and report the pixels on it")
    p.add_argument("url", help="page URL to fetch")
    p.add_argument("--fetch-configs", action="store_true",
                   help="also fetch and parse each pixel's live config script")
    p.add_argument("--config-url-template",
                   default="https://connect.facebook.net/signals/config/{pixel_id}",
                   help="where live config scripts are fetched from")
    p.add_argument("--timeout", type=float, default=30.0)

    p = sub.add_parser("mock-archive", help="serve the bundled synthetic corpus")
    p.add_argument("--port", type=int, default=0, help="port (default: ephemeral)")

    p = sub.add_parser("demo", help="hermetic end-to-end run against the "
                                    "bundled synthetic corpus")
    p.add_argument("--workdir", required=True, help="directory for inputs and outputs")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except Exception as exc:  # surface every failure as machine-readable JSON
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command in _STAGE_COMMANDS or args.command == "run":
        cfg = _load_pipeline_config(args)
        stages = (pipeline.STAGES if args.command == "run"
                  else [_STAGE_COMMANDS[args.command]])
        summaries = [pipeline.run_stage(stage, cfg) for stage in stages]
        print(json.dumps([s.to_json() for s in summaries], indent=2))
        return 0
    handler = {
        "dump-config": _cmd_dump_config,
        "simulate": _cmd_simulate,
        "diff": _cmd_diff,
        "crack": _cmd_crack,
        "spot-check": _cmd_spot_check,
        "mock-archive": _cmd_mock_archive,
        "demo": _cmd_demo,
    }[args.command]
    return handler(args)


def _load_pipeline_config(args) -> pipeline.PipelineConfig:
    cfg = pipeline.PipelineConfig.from_file(args.config)
    if args.cdx_url:
        cfg.cdx_url = args.cdx_url
    if args.replay_template:
        cfg.replay_template = args.replay_template
    if args.jobs:
        cfg.jobs = args.jobs
    return cfg


def _cmd_dump_config(args) -> int:
    failures = 0
    for path in args.scripts:
        body = Path(path).read_bytes()
        try:
            result = parse_config_script(body, expected_pixel_id=args.pixel_id)
        except NoRegisterPluginRegion as exc:
            failures += 1
            print(json.dumps({"file": path, "error": str(exc)}))
            continue
        print(json.dumps({
            "file": path,
            "config": result.config.to_json(),
            "diagnostics": [{"level": d.level, "message": d.message}
                            for d in result.diagnostics],
        }, sort_keys=True))
    return 1 if failures else 0


def _parse_interaction(text: str):
    if text == "page_load":
        return "page_load"
    kind, _, index = text.partition(":")
    if kind in ("button_click", "form_submit") and index.isdigit():
        return (kind, int(index))
    raise ValueError(f"bad interaction {text!r}; use page_load, "
                     f"button_click:N, or form_submit:N")


def _cmd_simulate(args) -> int:
    from .configscript import PixelConfiguration

    cfg_obj = json.loads(Path(args.config_json).read_text(encoding="utf-8"))
    if "config" in cfg_obj:  # accept dump-config output directly
        cfg_obj = cfg_obj["config"]
    cfg = PixelConfiguration.from_json(cfg_obj)
    if args.patch_out:
        cfg = behavior.patch_out(cfg, args.patch_out)
    ctx = behavior.PageContext.from_json(
        json.loads(Path(args.context).read_text(encoding="utf-8")))
    payloads = behavior.simulate(
        cfg, ctx, _parse_interaction(args.interaction),
        case_insensitive_params=args.case_insensitive_params)
    print(json.dumps([p.to_json() for p in payloads], indent=2, sort_keys=True))
    return 0


def _cmd_diff(args) -> int:
    before = [behavior.EventPayload.from_json(o) for o in
              json.loads(Path(args.before).read_text(encoding="utf-8"))]
    after = [behavior.EventPayload.from_json(o) for o in
             json.loads(Path(args.after).read_text(encoding="utf-8"))]
    delta = behavior.diff_payloads(before, after)
    print(json.dumps(delta.to_json(), indent=2, sort_keys=True))
    return 0


def _cmd_crack(args) -> int:
    digests = {
        line.strip()
        for line in Path(args.digests).read_text(encoding="utf-8").splitlines()
        if line.strip()
    }
    dictionary = build_dictionary(args.wordlist, args.observed)
    results, rate = crack(digests, dictionary)
    for result in results:
        print(json.dumps(result.to_json(), sort_keys=True))
    print(json.dumps({"reversal_rate": rate, "total": len(results)}), file=sys.stderr)
    return 0


def _cmd_spot_check(args) -> int:
    import requests

    from .pixels import extract_pixel_ids, strip_archive_rewrites

    resp = requests.get(args.url, timeout=args.timeout)
    resp.raise_for_status()
    ids, evidence = extract_pixel_ids(strip_archive_rewrites(resp.content))
    doc = {
        "url": args.url,
        "pixel_ids": sorted(ids),
        "evidence": [
            {"pixel_id": e.pixel_id, "kind": e.kind, "offset": e.offset,
             "in_comment": e.in_comment}
            for e in evidence
        ],
    }
    if args.fetch_configs:
        configs = {}
        for pid in sorted(ids):
            url = args.config_url_template.format(pixel_id=pid)
            try:
                body = requests.get(url, timeout=args.timeout)
                body.raise_for_status()
                result = parse_config_script(body.content, expected_pixel_id=pid)
                configs[pid] = result.config.to_json()
            except (requests.RequestException, NoRegisterPluginRegion) as exc:
                configs[pid] = {"error": f"{type(exc).__name__}: {exc}"}
        doc["configs"] = configs
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def _cmd_mock_archive(args) -> int:
    archive = MockArchive()
    demo_corpus.populate_archive(archive)
    port = archive.start(args.port)
    print(json.dumps({
        "cdx_url": archive.cdx_url(),
        "replay_template": archive.replay_template(),
        "port": port,
    }))
    sys.stdout.flush()
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        archive.stop()
    return 0


def _cmd_demo(args) -> int:
    archive = MockArchive()
    demo_corpus.populate_archive(archive)
    archive.start()
    try:
        config_path = demo_corpus.write_demo_inputs(
            Path(args.workdir), archive.cdx_url(), archive.replay_template())
        cfg = pipeline.PipelineConfig.from_file(config_path)
        summaries = pipeline.run_all(cfg)
        print(json.dumps([s.to_json() for s in summaries], indent=2))
    finally:
        archive.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
