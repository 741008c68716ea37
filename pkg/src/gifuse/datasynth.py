"""Training-data synthesis: pseudo occlusion masks harvested from clip
motion, applied to exactly aligned static exposure pairs.

Procedural generators stand in for external video / multi-exposure
corpora: a positive radiance field with a bright light-source region is
rendered at two exposures plus a tone-mapped ground truth, and short
clips with a moving textured square provide motion for the masks.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .imgcore import (
    BinaryMask,
    ImageRGB,
    load_image,
    resize_mask,
    save_image,
    save_mask,
)
from .prealign import ConsistencyParams, FlowEstimator, PyramidalFlowEstimator, occlusion_mask

GAMMA = 2.2
DEFAULT_PATCH = 64


@dataclass(frozen=True)
class VideoClip:
    frames: tuple

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValidationError("clip needs at least 2 frames")
        shape = self.frames[0].data.shape
        if any(f.data.shape != shape for f in self.frames):
            raise ValidationError("clip frames must share dimensions")


@dataclass(frozen=True)
class ExposureTriplet:
    ue: ImageRGB
    oe: ImageRGB
    gt: ImageRGB
    ev_gap: float

    def __post_init__(self):
        if not (self.ue.data.shape == self.oe.data.shape == self.gt.data.shape):
            raise ValidationError("triplet images must share dimensions")
        if not 1.0 <= self.ev_gap <= 9.0:
            raise ValidationError("ev_gap must lie in [1, 9] stops")


@dataclass(frozen=True)
class SynthSample:
    oe: ImageRGB
    guidance: ImageRGB
    gt: ImageRGB
    mask: BinaryMask

    def __post_init__(self):
        if not (self.oe.data.shape == self.guidance.data.shape == self.gt.data.shape):
            raise ValidationError("sample images must share dimensions")
        if np.any(self.guidance.data * self.mask.data[..., None] != 0.0):
            raise ValidationError("guidance must be zero inside the mask")


def render_exposure(radiance: np.ndarray, ev: float) -> ImageRGB:
    """Display rendering of a linear radiance field at the given EV."""
    lin = np.clip(radiance * (2.0**ev), 0.0, 1.0)
    return ImageRGB(lin ** (1.0 / GAMMA))


def render_groundtruth(radiance: np.ndarray) -> ImageRGB:
    """Global tone curve L/(1+L) followed by display gamma."""
    return ImageRGB((radiance / (1.0 + radiance)) ** (1.0 / GAMMA))


def procedural_scene(seed, h: int = DEFAULT_PATCH, w: int = DEFAULT_PATCH) -> np.ndarray:
    """Positive radiance field: gradients, disks, textured rectangles, and a
    bright light-source region spanning well over 6 stops."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = (xs * np.cos(angle) + ys * np.sin(angle)) / max(h, w)
    base = 0.02 + 0.3 * (ramp - ramp.min()) / (np.ptp(ramp) + 1e-12)
    radiance = np.stack([base * rng.uniform(0.6, 1.2) for _ in range(3)], axis=-1)

    for _ in range(rng.integers(2, 5)):
        y0, x0 = rng.integers(0, h - 8), rng.integers(0, w - 8)
        rh, rw = rng.integers(6, max(7, h // 2)), rng.integers(6, max(7, w // 2))
        color = rng.uniform(0.05, 0.7, size=3)
        texture = 1.0 + 0.3 * np.sin(
            2 * np.pi * rng.uniform(0.05, 0.2) * (xs + ys) + rng.uniform(0, 6.28)
        )
        patch = np.zeros((h, w), dtype=bool)
        patch[y0 : min(h, y0 + rh), x0 : min(w, x0 + rw)] = True
        radiance[patch] = (color[None, :] * texture[patch, None]).clip(0.01, None)

    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(3, min(h, w) / 4)
        disk = (ys - cy) ** 2 + (xs - cx) ** 2 <= r * r
        radiance[disk] = rng.uniform(0.05, 0.6, size=3)[None, :]

    # Light source: saturated at EV 0, recoverable 6+ stops down.
    cy, cx = rng.uniform(h * 0.2, h * 0.8), rng.uniform(w * 0.2, w * 0.8)
    r = rng.uniform(min(h, w) * 0.08, min(h, w) * 0.2)
    dist2 = (ys - cy) ** 2 + (xs - cx) ** 2
    amp = rng.uniform(8.0, 40.0)
    glow = amp * np.exp(-dist2 / (2 * (r * 0.8) ** 2))
    core = dist2 <= r * r
    glow[core] = amp * rng.uniform(0.8, 1.0)
    tint = rng.uniform(0.7, 1.0, size=3)
    radiance = radiance + glow[..., None] * tint[None, None, :]

    noise = 1.0 + 0.05 * rng.standard_normal((h, w, 1))
    return np.clip(radiance * noise, 1e-4, None)


def procedural_triplet(seed, h: int = DEFAULT_PATCH, w: int = DEFAULT_PATCH,
                       ev_gap: float | None = None) -> ExposureTriplet:
    rng = np.random.default_rng(seed)
    gap = float(ev_gap) if ev_gap is not None else float(rng.uniform(2.0, 9.0))
    radiance = procedural_scene(rng, h, w)
    oe = render_exposure(radiance, 0.0)
    ue = render_exposure(radiance, -gap)
    gt = render_groundtruth(radiance)
    return ExposureTriplet(ue=ue, oe=oe, gt=gt, ev_gap=gap)


def procedural_clip(seed, h: int = DEFAULT_PATCH, w: int = DEFAULT_PATCH,
                    n_frames: int | None = None) -> VideoClip:
    """Textured background with a differently textured square translating
    across the clip."""
    rng = np.random.default_rng(seed)
    n = int(n_frames) if n_frames else int(rng.integers(3, 10))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    bg = 0.3 + 0.25 * np.sin(2 * np.pi * 0.08 * xs + rng.uniform(0, 6)) * np.sin(
        2 * np.pi * 0.07 * ys + rng.uniform(0, 6)
    )
    bg = bg + 0.1 * rng.standard_normal((h, w))
    bg = np.clip(bg, 0.02, 0.98)
    bg = np.stack([bg * f for f in rng.uniform(0.7, 1.0, 3)], axis=-1).clip(0, 1)

    side = int(rng.integers(10, max(12, min(h, w) // 3)))
    sq = 0.5 + 0.4 * np.sin(2 * np.pi * 0.2 * (xs[:side, :side] + ys[:side, :side]))
    sq = np.stack([sq * f for f in rng.uniform(0.6, 1.0, 3)], axis=-1).clip(0, 1)
    total_shift = rng.integers(4, 12, size=2)
    y0 = int(rng.integers(0, h - side - total_shift[0]))
    x0 = int(rng.integers(0, w - side - total_shift[1]))

    frames = []
    for i in range(n):
        frac = i / (n - 1)
        dy, dx = int(round(total_shift[0] * frac)), int(round(total_shift[1] * frac))
        frame = bg.copy()
        frame[y0 + dy : y0 + dy + side, x0 + dx : x0 + dx + side] = sq
        frames.append(ImageRGB(frame))
    return VideoClip(frames=tuple(frames))


def pseudo_occlusion_from_clip(
    clip: VideoClip,
    params: ConsistencyParams | None = None,
    estimator: FlowEstimator | None = None,
) -> BinaryMask:
    """Bidirectional flow between the first and last frames, then the
    forward-backward consistency check."""
    estimator = estimator or PyramidalFlowEstimator()
    first, last = clip.frames[0], clip.frames[-1]
    f_fwd = estimator.estimate(last, first)
    f_bwd = estimator.estimate(first, last)
    return occlusion_mask(f_fwd, f_bwd, params or ConsistencyParams())


def make_sample(triplet: ExposureTriplet, mask: BinaryMask, seed,
                patch: int = DEFAULT_PATCH) -> SynthSample:
    h, w = triplet.oe.height, triplet.oe.width
    if patch > h or patch > w:
        raise ValidationError("patch larger than the triplet")
    rng = np.random.default_rng(seed)
    y0 = int(rng.integers(0, h - patch + 1))
    x0 = int(rng.integers(0, w - patch + 1))
    crop = lambda img: img.data[y0 : y0 + patch, x0 : x0 + patch]
    mask_patch = resize_mask(mask, patch, patch)
    guidance = (1.0 - mask_patch.data)[..., None] * crop(triplet.ue)
    return SynthSample(
        oe=ImageRGB(crop(triplet.oe)),
        guidance=ImageRGB(guidance),
        gt=ImageRGB(crop(triplet.gt)),
        mask=mask_patch,
    )


def _scene_dirs(root):
    dirs = sorted(
        d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
    )
    if not dirs:
        raise ValidationError(f"no scene folders under {root}")
    return [os.path.join(root, d) for d in dirs]


def triplet_from_scene_dir(path) -> ExposureTriplet:
    """Directory of exposure-sorted images, darkest first; the middle
    exposure serves as ground truth."""
    files = sorted(
        f for f in os.listdir(path) if f.lower().endswith((".png", ".jpg", ".jpeg"))
    )
    if len(files) < 2:
        raise ValidationError(f"scene {path} needs at least 2 exposures")
    ue = load_image(os.path.join(path, files[0]))
    oe = load_image(os.path.join(path, files[-1]))
    gt = load_image(os.path.join(path, files[len(files) // 2]))
    if ue.data.shape != oe.data.shape or ue.data.shape != gt.data.shape:
        raise ValidationError(f"scene {path} images disagree on dimensions")
    lum = lambda img: np.mean(img.data ** GAMMA)
    gap = float(np.clip(np.log2(lum(oe) / max(lum(ue), 1e-9)), 1.0, 9.0))
    return ExposureTriplet(ue=ue, oe=oe, gt=gt, ev_gap=gap)


def build_dataset(count: int, seed: int, out_dir, patch: int = DEFAULT_PATCH,
                  scene_root=None) -> list[dict]:
    """Emit `count` samples as PNGs plus a JSON-lines manifest.

    Each sample derives its RNG stream from (seed, index), so parallel and
    serial builds agree bytewise. When scene_root is given, triplets are
    read from its scene folders instead of being generated procedurally.
    """
    os.makedirs(out_dir, exist_ok=True)
    scenes = _scene_dirs(scene_root) if scene_root else None
    records = []
    for idx in range(count):
        ss = np.random.SeedSequence([int(seed), idx])
        child = ss.spawn(3)
        if scenes is not None:
            pick = np.random.default_rng(child[0]).integers(0, len(scenes))
            triplet = triplet_from_scene_dir(scenes[pick])
        else:
            size = patch + 16
            triplet = procedural_triplet(child[0], h=size, w=size)
        clip = procedural_clip(child[1], h=patch, w=patch)
        mask = pseudo_occlusion_from_clip(clip)
        sample = make_sample(triplet, mask, child[2], patch=patch)

        stem = f"sample_{idx:05d}"
        paths = {
            "oe": f"{stem}_oe.png",
            "guidance": f"{stem}_guidance.png",
            "gt": f"{stem}_gt.png",
            "mask": f"{stem}_mask.png",
        }
        save_image(sample.oe, os.path.join(out_dir, paths["oe"]))
        save_image(sample.guidance, os.path.join(out_dir, paths["guidance"]))
        save_image(sample.gt, os.path.join(out_dir, paths["gt"]))
        save_mask(sample.mask, os.path.join(out_dir, paths["mask"]))
        records.append(
            {
                "id": stem,
                "paths": paths,
                "ev_gap": round(triplet.ev_gap, 6),
                "seed": int(seed),
                "index": idx,
                "mask_coverage": round(float(sample.mask.data.mean()), 6),
            }
        )
    with open(os.path.join(out_dir, "manifest.jsonl"), "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return records


def load_manifest(out_dir) -> list[dict]:
    path = os.path.join(out_dir, "manifest.jsonl")
    if not os.path.exists(path):
        raise ValidationError(f"no manifest at {path}")
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_sample(out_dir, record) -> SynthSample:
    from .imgcore import load_mask

    p = record["paths"]
    sample = SynthSample(
        oe=load_image(os.path.join(out_dir, p["oe"])),
        guidance=load_image(os.path.join(out_dir, p["guidance"])),
        gt=load_image(os.path.join(out_dir, p["gt"])),
        mask=load_mask(os.path.join(out_dir, p["mask"])),
    )
    return sample
