#!/usr/bin/env python3
"""Train every component in sequence on a procedural dataset.

Equivalent to running `gifuse synth-data` followed by four `gifuse train`
invocations, but keeps everything in one process and prints holdout
numbers at the end.

    python3 scripts/train_all.py --out runs/full --samples 160 --iterations 2000
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from gifuse import checkpoint as ckpt
from gifuse.datasynth import build_dataset
from gifuse.training import (
    SampleBank,
    TrainConfig,
    holdout_fcb_l1,
    holdout_vae_psnr,
    train,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--samples", type=int, default=160)
    ap.add_argument("--patch", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iterations", type=int, default=2000,
                    help="per-component iteration budget")
    ap.add_argument("--batch-size", type=int, default=8)
    args = ap.parse_args()

    data_dir = os.path.join(args.out, "data")
    if not os.path.exists(os.path.join(data_dir, "manifest.jsonl")):
        print(f"building {args.samples} samples...")
        build_dataset(args.samples, args.seed, data_dir, patch=args.patch)
    bank = SampleBank.from_dir(data_dir)

    bundle = None
    for component in ("vae", "backbone", "dfcb", "fcb"):
        cfg = TrainConfig(
            component=component,
            iterations=args.iterations,
            batch_size=args.batch_size,
            seed=args.seed,
            log_path=os.path.join(args.out, f"log_{component}.jsonl"),
        )
        print(f"training {component} ({cfg.iterations} iterations)...")
        bundle, losses = train(bank, cfg, bundle)
        print(f"  loss {losses[0]:.5f} -> {losses[-1]:.5f}")
        ckpt.save_bundle(bundle, os.path.join(args.out, f"bundle_{component}.pt"))

    print(f"holdout VAE PSNR: {holdout_vae_psnr(bank, bundle):.2f} dB")
    with_fcb, without = holdout_fcb_l1(bank, bundle)
    print(f"holdout decode L1: {with_fcb:.5f} with shortcuts, {without:.5f} without")
    final = os.path.join(args.out, "bundle.pt")
    ckpt.save_bundle(bundle, final)
    print(f"checkpoint: {final}")


if __name__ == "__main__":
    main()
