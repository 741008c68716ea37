"""End-to-end fusion: stage 1 pre-alignment, then control-branch guided
sampling and shortcut-conditioned decoding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from . import checkpoint as ckpt
from .control import decompose
from .diffusion import sample
from .errors import ValidationError
from .imgcore import ImageRGB
from .prealign import ConsistencyParams, FlowEstimator, PreAlignResult, prealign


@dataclass
class FusionRequest:
    ue: ImageRGB
    oe: ImageRGB
    params: ConsistencyParams = field(default_factory=ConsistencyParams)
    steps: int = 50
    seed: int = 0
    estimator: FlowEstimator | None = None

    def __post_init__(self):
        if self.ue.data.shape != self.oe.data.shape:
            raise ValidationError("input pair must share dimensions")
        if self.oe.height % 4 or self.oe.width % 4:
            raise ValidationError("input dims must be divisible by 4")


@dataclass
class FusionDiagnostics:
    prealign: PreAlignResult
    z0: torch.Tensor


def fuse(req: FusionRequest, bundle: dict) -> tuple[ImageRGB, FusionDiagnostics]:
    """Guided inpainting of req.oe with req.ue as soft guidance.

    Guidance always passes through stage 1, even for pre-aligned pairs
    (the mask then simply comes out empty). Deterministic under fixed
    seed: sampling noise comes from a dedicated seeded generator.
    """
    for ns in ("vae", "unet", "dfcb", "fcb"):
        ckpt.require(bundle, ns)
    vae = ckpt.build_vae(bundle)
    unet = ckpt.build_unet(bundle)
    dfcb = ckpt.build_dfcb(bundle, unet)
    fcb = ckpt.build_fcb(bundle, vae)
    for m in (vae, unet, dfcb, fcb):
        m.eval().requires_grad_(False)
    schedule = ckpt.schedule_from_bundle(bundle)

    stage1 = prealign(req.ue, req.oe, req.params, req.estimator)
    pack = decompose(stage1.guidance, stage1.mask)
    s_t, c_t = pack.tensors()
    oe_t = torch.from_numpy(
        req.oe.data.transpose(2, 0, 1).astype(np.float32)
    )[None]
    with torch.no_grad():
        y_oe = vae.encode(oe_t)
        conditioner = lambda z, t: dfcb(z, y_oe, s_t, c_t, t)
        z0 = sample(
            unet,
            schedule,
            (1, 4, req.oe.height // 4, req.oe.width // 4),
            steps=req.steps,
            seed=req.seed,
            conditioner=conditioner,
        )
        shortcuts = fcb(oe_t, s_t, c_t)
        out = vae.decode(z0, shortcuts)
    fused = ImageRGB(np.clip(out[0].permute(1, 2, 0).numpy().astype(np.float64), 0, 1))
    return fused, FusionDiagnostics(prealign=stage1, z0=z0)
