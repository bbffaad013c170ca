"""Command-line front end.

    modex explain --config run.json [--seed 3] [--synthetic linear] [--out DIR]
    modex batch   --config run.json instances.json [--stability 5]
    modex replay  DIR/dataset.json [--out DIR2]

Errors exit non-zero and print a JSON object ``{"error": ..., "message": ...}``
to stderr (and to ``error.json`` in the output directory when known).
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .pipeline import RunConfig, replay, run_batch, run_explain, validate, write_outputs


def _fail(exc: BaseException, out: str | None) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload), file=sys.stderr)
    if out:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "error.json").write_text(json.dumps(payload) + "\n")
        except OSError:
            pass
    return 1


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if args.entropy_seed:
        changes["seed"] = int(np.random.SeedSequence().entropy % (2**63))
    elif args.seed is not None:
        changes["seed"] = args.seed
    if args.endpoint:
        changes.update(endpoint=args.endpoint, synthetic=None)
    if args.synthetic:
        changes["synthetic"] = args.synthetic
        if cfg.synthetic != args.synthetic:
            changes["synthetic_params"] = {}
    if args.out:
        changes["out"] = args.out
    if getattr(args, "stability", None) is not None:
        changes["stability_runs"] = args.stability
    return replace(cfg, **changes) if changes else cfg


def _add_common(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--entropy-seed", action="store_true", help="draw a fresh seed from OS entropy")
    p.add_argument("--endpoint", help="subprocess command or http(s) URL of the model endpoint")
    p.add_argument("--synthetic", help="use a built-in synthetic oracle of this kind")
    p.add_argument("--out", help="output directory")
    p.add_argument("--dry-run", action="store_true", help="validate configuration only; no forward calls")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modex", description="Explain multimodal black-box predictions.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", help="explain one instance")
    _add_common(p)

    p = sub.add_parser("batch", help="explain and evaluate a list of instances")
    _add_common(p)
    p.add_argument("instances", help="JSON list of per-instance config overrides")
    p.add_argument("--stability", type=int, help="repeat each instance R times and report Spearman stability")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("replay", help="refit a serialized neighbourhood")
    p.add_argument("dataset", help="dataset.json written by 'explain'")
    p.add_argument("--out", help="output directory (default: next to the dataset)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = getattr(args, "out", None)
    try:
        if args.command == "replay":
            out = args.out or str(Path(args.dataset).parent / "replay")
            replay(args.dataset, out)
            print(json.dumps({"status": "ok", "out": out}))
            return 0

        cfg = _config_from_args(args)
        out = cfg.out
        if args.command == "batch":
            instances = json.loads(Path(args.instances).read_text())
            if not isinstance(instances, list) or not instances:
                parser.error("instance list must be a non-empty JSON array")
            if args.dry_run:
                for inst in instances:
                    validate(cfg.merged(dict(inst)))
                print(json.dumps({"status": "ok", "dry_run": True, "n_instances": len(instances),
                                  "ledger": {"explanation_calls": 0, "metric_calls": 0}}))
                return 0
            stability = cfg.stability_runs if args.stability is not None else 0
            summary = run_batch(cfg, instances, stability, args.workers, cfg.out)
            print(json.dumps({"status": "ok", "out": cfg.out, "n_instances": summary["n_instances"],
                              "n_failed": summary["n_failed"]}))
            return 0

        validate(cfg)
        if args.dry_run:
            print(json.dumps({"status": "ok", "dry_run": True, "config": cfg.to_dict(),
                              "ledger": {"explanation_calls": 0, "metric_calls": 0}}))
            return 0
        result = run_explain(cfg)
        write_outputs(result, cfg.out)
        print(json.dumps({"status": "ok", "out": cfg.out, "ledger": result.ledger}))
        return 0
    except Exception as exc:
        return _fail(exc, out)


if __name__ == "__main__":
    sys.exit(main())
