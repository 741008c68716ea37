"""Command-line surface.

Subcommands: synth-data, train, prealign, fuse, eval, report.
Exit codes: 0 success, 1 validation error, 2 runtime/numeric error.
Shared flags: --config (YAML key-value overrides), --seed, --out.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import yaml

from . import checkpoint as ckpt
from .bench import build_procedural_benchmark, load_report, run_benchmark, write_report
from .datasynth import build_dataset
from .errors import GifuseError, ValidationError
from .imgcore import load_image, save_flow, save_image, save_mask
from .pipeline import FusionRequest, fuse
from .prealign import ConsistencyParams, PrecomputedFlowEstimator, prealign
from .training import SampleBank, TrainConfig, train


def _common(parser):
    parser.add_argument("--config", help="YAML file with key-value overrides")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True, help="output file or directory")


def _load_config(path):
    if not path:
        return {}
    if not os.path.exists(path):
        raise ValidationError(f"config file not found: {path}")
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValidationError("config file must hold a key-value mapping")
    return data


def _consistency(cfg):
    return ConsistencyParams(
        alpha1=float(cfg.get("alpha1", 0.01)), alpha2=float(cfg.get("alpha2", 0.5))
    )


def build_parser():
    parser = argparse.ArgumentParser(prog="gifuse")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="build a synthetic training dataset")
    _common(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--patch", type=int, default=64)
    p.add_argument("--scenes", help="ingest external scene folders instead")

    p = sub.add_parser("train", help="train one component into a checkpoint")
    _common(p)
    p.add_argument("--component", choices=("vae", "backbone", "dfcb", "fcb"), required=True)
    p.add_argument("--data", required=True, help="dataset directory with manifest.jsonl")
    p.add_argument("--checkpoint", help="existing checkpoint to extend/resume")
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--log", help="JSONL metrics log path")

    p = sub.add_parser("prealign", help="run stage 1 on one image pair")
    _common(p)
    p.add_argument("--ue", required=True)
    p.add_argument("--oe", required=True)
    p.add_argument("--flow-fwd", help="precomputed forward flow (FLO1)")
    p.add_argument("--flow-bwd", help="precomputed backward flow (FLO1)")

    p = sub.add_parser("fuse", help="fuse one image pair")
    _common(p)
    p.add_argument("--ue", required=True)
    p.add_argument("--oe", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--diagnostics", action="store_true", help="also write mask/guidance")

    p = sub.add_parser("eval", help="run the benchmark harness")
    _common(p)
    p.add_argument("--pairs", required=True, help="directory of scene folders")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--make-procedural", type=int, metavar="N",
                   help="first generate N procedural scenes into --pairs")

    p = sub.add_parser("report", help="re-render summary and plots from a report")
    _common(p)
    p.add_argument("--report-dir", required=True)
    return parser


def _cmd_synth_data(args, cfg):
    records = build_dataset(
        args.count, args.seed, args.out,
        patch=int(cfg.get("patch", args.patch)), scene_root=args.scenes,
    )
    print(f"wrote {len(records)} samples to {args.out}")


def _cmd_train(args, cfg):
    bank = SampleBank.from_dir(args.data)
    bundle = ckpt.load_bundle(args.checkpoint) if args.checkpoint else None
    tc = TrainConfig(
        component=args.component,
        learning_rate=float(cfg.get("lr", args.lr)),
        batch_size=int(cfg.get("batch_size", args.batch_size)),
        iterations=int(cfg.get("iterations", args.iterations)),
        seed=args.seed,
        log_path=args.log,
    )
    bundle, losses = train(bank, tc, bundle)
    ckpt.save_bundle(bundle, args.out)
    print(f"{args.component}: {len(losses)} steps, final loss {losses[-1]:.6f}" if losses
          else f"{args.component}: already at target iterations")


def _cmd_prealign(args, cfg):
    ue = load_image(args.ue)
    oe = load_image(args.oe)
    estimator = None
    if args.flow_fwd:
        estimator = PrecomputedFlowEstimator(args.flow_fwd, args.flow_bwd)
    result = prealign(ue, oe, _consistency(cfg), estimator)
    os.makedirs(args.out, exist_ok=True)
    save_image(result.guidance, os.path.join(args.out, "guidance.png"))
    save_mask(result.mask, os.path.join(args.out, "mask.png"))
    save_flow(result.flow_fwd, os.path.join(args.out, "flow_fwd.flo"))
    save_flow(result.flow_bwd, os.path.join(args.out, "flow_bwd.flo"))
    print(f"prealign outputs in {args.out}")


def _cmd_fuse(args, cfg):
    bundle = ckpt.load_bundle(args.checkpoint)
    req = FusionRequest(
        ue=load_image(args.ue), oe=load_image(args.oe),
        params=_consistency(cfg), steps=args.steps, seed=args.seed,
    )
    fused, diag = fuse(req, bundle)
    out = args.out
    if os.path.isdir(out) or not out.lower().endswith(".png"):
        os.makedirs(out, exist_ok=True)
        out = os.path.join(out, "fused.png")
    save_image(fused, out)
    if args.diagnostics:
        base = os.path.dirname(out)
        save_mask(diag.prealign.mask, os.path.join(base, "mask.png"))
        save_image(diag.prealign.guidance, os.path.join(base, "guidance.png"))
    print(f"fused image at {out}")


def _cmd_eval(args, cfg):
    if args.make_procedural:
        build_procedural_benchmark(args.pairs, args.make_procedural, args.seed)
    bundle = ckpt.load_bundle(args.checkpoint)
    report = run_benchmark(
        args.pairs, bundle, args.out, steps=args.steps, seed=args.seed,
        params=_consistency(cfg),
    )
    print(json.dumps(report.aggregates, sort_keys=True))
    print(f"{len(report.scenes)} scenes, {len(report.warnings)} warnings -> {args.out}")


def _cmd_report(args, cfg):
    payload = load_report(args.report_dir)
    os.makedirs(args.out, exist_ok=True)
    write_report(payload, args.out)
    print(f"report re-rendered into {args.out}")


HANDLERS = {
    "synth-data": _cmd_synth_data,
    "train": _cmd_train,
    "prealign": _cmd_prealign,
    "fuse": _cmd_fuse,
    "eval": _cmd_eval,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        cfg = _load_config(getattr(args, "config", None))
        HANDLERS[args.command](args, cfg)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except GifuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
