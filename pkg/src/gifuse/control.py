"""Control branches conditioning the frozen backbone.

Two branches share one design: decompose the masked aligned guidance into a
brightness-invariant structure map plus chroma, extract multi-scale
features, and fuse them into a trainable copy of backbone sub-networks via
channel-transposed cross-attention. All outputs leave through
zero-initialized projections, so a fresh branch is an exact no-op.

DFCB conditions the denoising U-Net (residuals added to skip/middle
features). FCB conditions the VAE decoder (shortcuts added before each
upsampling stage) and consumes the over-exposed image in pixel space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import ResBlock, UNet, VAE, timestep_embedding, zero_module
from .errors import ValidationError
from .imgcore import BinaryMask, ImageRGB, rgb_to_yuv

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class GuidancePack:
    """Structure map S (zero-mean unit-std over valid pixels), chroma map C,
    and the occlusion mask (1 = invalid) they were normalized under."""

    s: np.ndarray
    c: np.ndarray
    occlusion: BinaryMask

    def tensors(self, device="cpu", dtype=torch.float32):
        s = torch.as_tensor(self.s, device=device, dtype=dtype)[None, None]
        c = torch.as_tensor(self.c, device=device, dtype=dtype).permute(2, 0, 1)[None]
        return s, c


def decompose(guidance: ImageRGB, occlusion: BinaryMask) -> GuidancePack:
    """Split guidance into brightness-invariant structure plus chroma.

    Mean/std are global scalars over valid (mask==0) pixels; S and C are
    zeroed wherever the mask is set. The std floor keeps constant regions
    at S=0 without breaking affine invariance for non-degenerate inputs.
    """
    if (guidance.height, guidance.width) != (occlusion.height, occlusion.width):
        raise ValidationError("guidance/mask shape mismatch")
    yuv = rgb_to_yuv(guidance)
    valid = occlusion.data == 0.0
    if not valid.any():
        zeros = np.zeros_like(yuv.y)
        return GuidancePack(s=zeros, c=np.zeros(yuv.y.shape + (2,)), occlusion=occlusion)
    mu = yuv.y[valid].mean()
    sigma = yuv.y[valid].std()
    s = (yuv.y - mu) / max(sigma, STD_FLOOR)
    s = np.where(valid, s, 0.0)
    c = np.stack([yuv.u, yuv.v], axis=-1) * valid[..., None]
    return GuidancePack(s=s, c=c, occlusion=occlusion)


class LayerNorm2d(nn.Module):
    """Channel-wise layer norm at each spatial location."""

    def __init__(self, ch):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(ch))
        self.beta = nn.Parameter(torch.zeros(ch))

    def forward(self, x):
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        xhat = (x - mu) / torch.sqrt(var + 1e-6)
        return xhat * self.gamma[None, :, None, None] + self.beta[None, :, None, None]


class ChannelCrossAttention(nn.Module):
    """Transposed (C×C) cross-attention: Q from the base stream, K/V from
    the guidance stream, zero-initialized output projection."""

    def __init__(self, ch):
        super().__init__()
        self.fuse_in = nn.Conv2d(2 * ch, ch, 1)
        self.norm_base = LayerNorm2d(ch)
        self.norm_guid = LayerNorm2d(ch)
        self.q_dw = nn.Conv2d(ch, ch, 3, padding=1, groups=ch)
        self.k_dw = nn.Conv2d(ch, ch, 3, padding=1, groups=ch)
        self.v_dw = nn.Conv2d(ch, ch, 3, padding=1, groups=ch)
        self.tau = nn.Parameter(torch.ones(()))
        self.proj = zero_module(nn.Conv2d(ch, ch, 1))

    def forward(self, x_base, x_s, x_c):
        if x_s.shape[-2:] != x_base.shape[-2:] or x_c.shape[-2:] != x_base.shape[-2:]:
            raise ValidationError("cross-attention inputs must share spatial dims")
        if float(self.tau.detach()) <= 0:
            raise ValidationError("attention temperature must stay positive")
        b, c, h, w = x_base.shape
        x_guid = self.fuse_in(torch.cat([x_s, x_c], dim=1))
        q = self.q_dw(self.norm_base(x_base)).reshape(b, c, h * w)
        k = self.k_dw(self.norm_guid(x_guid)).reshape(b, c, h * w)
        v = self.v_dw(self.norm_guid(x_guid)).reshape(b, c, h * w)
        q = F.normalize(q, dim=-1)
        k = F.normalize(k, dim=-1)
        attn = torch.softmax(q @ k.transpose(-2, -1) / self.tau, dim=-1)
        out = (attn @ v).reshape(b, c, h, w)
        return x_base + self.proj(out)


class GuidanceExtractor(nn.Module):
    """Plain strided conv stack emitting one feature map per target scale.

    `specs` is a list of (channels, stride-from-previous-scale); the stem
    brings the pixel-space input down by `stem_strides` first.
    """

    def __init__(self, in_ch, specs, stem_strides=(2, 2), stem_ch=32):
        super().__init__()
        stem = []
        cur = in_ch
        for s in stem_strides:
            stem += [nn.Conv2d(cur, stem_ch, 3, stride=s, padding=1), nn.SiLU()]
            cur = stem_ch
        self.stem = nn.Sequential(*stem)
        self.downs = nn.ModuleList()
        self.heads = nn.ModuleList()
        for ch, stride in specs:
            self.downs.append(nn.Conv2d(cur, ch, 3, stride=stride, padding=1))
            self.heads.append(nn.Conv2d(ch, ch, 3, padding=1))
            cur = ch

    def forward(self, x):
        h = self.stem(x)
        feats = []
        for down, head in zip(self.downs, self.heads):
            h = F.silu(down(h))
            feats.append(head(h))
        return feats


class DFCB(nn.Module):
    """Decompose-and-fuse control branch for the denoiser.

    Main extractor mirrors the U-Net encoder + middle blocks (weights
    copied from the backbone at init, then trained). Conditioning latent
    y_oe enters through a zero conv; guidance structure/chroma features are
    fused at every encoder scale by cross-attention; residuals leave
    through zero convs (one per level plus middle).
    """

    def __init__(self, unet: UNet):
        super().__init__()
        cfg = unet.config
        self.config = cfg
        widths = cfg.widths
        tdim = cfg.base_channels * 4
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.base_channels, tdim), nn.SiLU(), nn.Linear(tdim, tdim)
        )
        self.conv_in = nn.Conv2d(4, widths[0], 3, padding=1)
        self.enc_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        cur = widths[0]
        for i, w in enumerate(widths):
            self.enc_blocks.append(ResBlock(cur, w, tdim))
            cur = w
            if i < len(widths) - 1:
                self.downs.append(nn.Conv2d(w, w, 3, stride=2, padding=1))
        self.mid1 = ResBlock(widths[-1], widths[-1], tdim)
        self.mid2 = ResBlock(widths[-1], widths[-1], tdim)
        self._copy_backbone(unet)

        self.cond_embed = nn.Sequential(
            nn.Conv2d(4, 32, 3, padding=1), nn.SiLU(), nn.Conv2d(32, 4, 3, padding=1)
        )
        self.cond_zero = zero_module(nn.Conv2d(4, 4, 1))
        specs = [(widths[0], 1)] + [(w, 2) for w in widths[1:]]
        self.extract_s = GuidanceExtractor(1, specs)
        self.extract_c = GuidanceExtractor(2, specs)
        self.fusers = nn.ModuleList(ChannelCrossAttention(w) for w in widths)
        self.res_zeros = nn.ModuleList(
            zero_module(nn.Conv2d(w, w, 1)) for w in list(widths) + [widths[-1]]
        )

    def _copy_backbone(self, unet: UNet):
        pairs = [
            (self.time_mlp, unet.time_mlp),
            (self.conv_in, unet.conv_in),
            (self.enc_blocks, unet.enc_blocks),
            (self.downs, unet.downs),
            (self.mid1, unet.mid1),
            (self.mid2, unet.mid2),
        ]
        with torch.no_grad():
            for dst, src in pairs:
                dst.load_state_dict(src.state_dict())

    def forward(self, z_t, y_oe, pack_s, pack_c, t):
        """pack_s / pack_c: structure and chroma maps as B×1/2×H×W tensors
        at the pixel resolution of the conditioned image."""
        temb = self.time_mlp(
            timestep_embedding(
                torch.full((z_t.shape[0],), float(t), device=z_t.device, dtype=z_t.dtype)
                if not torch.is_tensor(t)
                else t.to(z_t.dtype),
                self.config.base_channels,
            )
        )
        feats_s = self.extract_s(pack_s)
        feats_c = self.extract_c(pack_c)
        h = self.conv_in(z_t + self.cond_zero(self.cond_embed(y_oe)))
        residuals = []
        for i, block in enumerate(self.enc_blocks):
            h = block(h, temb)
            h = self.fusers[i](h, feats_s[i], feats_c[i])
            residuals.append(self.res_zeros[i](h))
            if i < len(self.enc_blocks) - 1:
                h = self.downs[i](h)
        h = self.mid1(h, temb)
        h = self.mid2(h, temb)
        residuals.append(self.res_zeros[-1](h))
        return residuals


class FCB(nn.Module):
    """Fidelity control branch: VAE-encoder-shaped extractor over the
    over-exposed image, guidance fusion at each scale, zero-convolved
    shortcuts shaped for the VAE decoder's two upsampling stages."""

    def __init__(self, vae: VAE):
        super().__init__()
        b = vae.config.base_channels
        self.conv_in = nn.Conv2d(3, b, 3, padding=1)
        self.block1 = ResBlock(b, b)
        self.down1 = nn.Conv2d(b, 2 * b, 3, stride=2, padding=1)
        self.block2 = ResBlock(2 * b, 2 * b)
        self.down2 = nn.Conv2d(2 * b, 2 * b, 3, stride=2, padding=1)
        self.block3 = ResBlock(2 * b, 2 * b)
        specs = [(2 * b, 1), (2 * b, 2)]
        self.extract_s = GuidanceExtractor(1, specs, stem_strides=(2,))
        self.extract_c = GuidanceExtractor(2, specs, stem_strides=(2,))
        self.fuse_half = ChannelCrossAttention(2 * b)
        self.fuse_quarter = ChannelCrossAttention(2 * b)
        # Decoder adds shortcut 0 at 1/4 resolution (2b ch), shortcut 1 at
        # 1/2 resolution (b ch).
        self.zero_quarter = zero_module(nn.Conv2d(2 * b, 2 * b, 1))
        self.zero_half = zero_module(nn.Conv2d(2 * b, b, 1))

    def forward(self, oe, pack_s, pack_c):
        if oe.shape[-1] % 4 or oe.shape[-2] % 4:
            raise ValidationError("image dims must be divisible by 4")
        feats_s = self.extract_s(pack_s)
        feats_c = self.extract_c(pack_c)
        h = self.block1(self.conv_in(oe))
        h = self.block2(self.down1(h))
        h = self.fuse_half(h, feats_s[0], feats_c[0])
        half = h
        h = self.block3(self.down2(h))
        h = self.fuse_quarter(h, feats_s[1], feats_c[1])
        return [self.zero_quarter(h), self.zero_half(half)]
