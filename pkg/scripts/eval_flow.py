#!/usr/bin/env python3
"""Score the built-in flow estimator on translating-square scenes.

For each seed: a textured square translates over a textured background, so
the strip it uncovers has no correspondence and should land in the
forward-backward occlusion mask. Reports IoU against the analytic strip.

    python3 scripts/eval_flow.py --seeds 8
"""

import argparse
import os
import sys
import time

import numpy as np
from scipy.ndimage import gaussian_filter

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from gifuse.imgcore import ImageRGB
from gifuse.prealign import PyramidalFlowEstimator, occlusion_mask


def smooth_tex(rng, h, w, sigma):
    t = gaussian_filter(rng.random((h, w, 3)), (sigma, sigma, 0))
    t = (t - t.min()) / (t.max() - t.min())
    return 0.1 + 0.8 * t


def scene(seed, h=64, w=64, side=16, shift=8):
    rng = np.random.default_rng(seed)
    y0 = x0 = (h - side) // 2 - shift // 2
    bg = smooth_tex(rng, h, w, 2.0)
    sq = 1.0 - smooth_tex(rng, side, side, 1.0)
    first = bg.copy()
    first[y0 : y0 + side, x0 : x0 + side] = sq
    last = bg.copy()
    last[y0 : y0 + side, x0 + shift : x0 + shift + side] = sq
    analytic = np.zeros((h, w))
    analytic[y0 : y0 + side, x0 + side : x0 + side + shift] = 1
    return ImageRGB(first), ImageRGB(last), analytic


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=8)
    ap.add_argument("--size", type=int, default=64)
    args = ap.parse_args()

    est = PyramidalFlowEstimator()
    scores = []
    for seed in range(args.seeds):
        first, last, analytic = scene(seed, args.size, args.size)
        t0 = time.time()
        f_fwd = est.estimate(last, first)
        f_bwd = est.estimate(first, last)
        mask = occlusion_mask(f_fwd, f_bwd)
        inter = (mask.data * analytic).sum()
        union = ((mask.data + analytic) > 0).sum()
        scores.append(inter / union)
        print(f"seed {seed}: IoU {scores[-1]:.3f}  ({time.time() - t0:.2f}s)")
    print(f"mean IoU over {args.seeds} seeds: {np.mean(scores):.3f}")


if __name__ == "__main__":
    main()
