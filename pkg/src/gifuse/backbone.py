"""Trainable backbone: small VAE (factor-4, 4 latent channels) and a
residual U-Net denoiser whose skip/middle features accept additive control
residuals (ControlNet-style decoder-side injection)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ValidationError

LATENT_CHANNELS = 4
DOWNSAMPLE_FACTOR = 4


@dataclass(frozen=True)
class VAEConfig:
    base_channels: int = 32
    latent_channels: int = LATENT_CHANNELS
    seed: int = 0

    def __post_init__(self):
        if self.base_channels < 8:
            raise ValidationError("VAE base width too small")


@dataclass(frozen=True)
class UNetConfig:
    base_channels: int = 64
    channel_mults: tuple = (1, 2, 2)
    attention_levels: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if len(self.channel_mults) < 2:
            raise ValidationError("U-Net needs at least 2 levels")
        if any(m < 1 for m in self.channel_mults):
            raise ValidationError("channel multipliers must be positive")

    @property
    def widths(self):
        return tuple(self.base_channels * m for m in self.channel_mults)


def _norm(ch):
    return nn.GroupNorm(min(8, ch), ch)


class ResBlock(nn.Module):
    def __init__(self, in_ch, out_ch, time_dim=None):
        super().__init__()
        self.norm1 = _norm(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = _norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()
        self.time_proj = nn.Linear(time_dim, out_ch) if time_dim else None

    def forward(self, x, temb=None):
        h = self.conv1(F.silu(self.norm1(x)))
        if self.time_proj is not None and temb is not None:
            h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class SelfAttention2d(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.norm = _norm(ch)
        self.qkv = nn.Conv2d(ch, ch * 3, 1)
        self.proj = nn.Conv2d(ch, ch, 1)

    def forward(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(b, 3, c, h * w).unbind(1)
        attn = torch.softmax(q.transpose(1, 2) @ k / math.sqrt(c), dim=-1)
        out = (v @ attn.transpose(1, 2)).reshape(b, c, h, w)
        return x + self.proj(out)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half
    )
    args = t[:, None] * freqs[None, :]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


def zero_module(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


class VAE(nn.Module):
    """Factor-4 convolutional VAE. decode() accepts optional per-stage
    shortcut features added before each upsampling stage."""

    def __init__(self, config: VAEConfig | None = None):
        super().__init__()
        self.config = config or VAEConfig()
        b = self.config.base_channels
        lc = self.config.latent_channels
        torch.manual_seed(self.config.seed)
        self.enc_in = nn.Conv2d(3, b, 3, padding=1)
        self.enc_block1 = ResBlock(b, b)
        self.enc_down1 = nn.Conv2d(b, 2 * b, 3, stride=2, padding=1)
        self.enc_block2 = ResBlock(2 * b, 2 * b)
        self.enc_down2 = nn.Conv2d(2 * b, 2 * b, 3, stride=2, padding=1)
        self.enc_block3 = ResBlock(2 * b, 2 * b)
        self.enc_out_norm = _norm(2 * b)
        self.enc_out = nn.Conv2d(2 * b, 2 * lc, 3, padding=1)

        self.dec_in = nn.Conv2d(lc, 2 * b, 3, padding=1)
        self.dec_block1 = ResBlock(2 * b, 2 * b)
        self.dec_up1 = nn.Conv2d(2 * b, 2 * b, 3, padding=1)
        self.dec_block2 = ResBlock(2 * b, b)
        self.dec_up2 = nn.Conv2d(b, b, 3, padding=1)
        self.dec_block3 = ResBlock(b, b)
        self.dec_out_norm = _norm(b)
        self.dec_out = nn.Conv2d(b, 3, 3, padding=1)
        # Not a parameter: recorded alongside weights in the checkpoint.
        self.register_buffer("latent_scale", torch.tensor(1.0))

    @property
    def shortcut_channels(self):
        b = self.config.base_channels
        return (2 * b, b)

    def encode_dist(self, x: torch.Tensor):
        if x.shape[-1] % DOWNSAMPLE_FACTOR or x.shape[-2] % DOWNSAMPLE_FACTOR:
            raise ValidationError("image dims must be divisible by 4")
        h = self.enc_in(x)
        h = self.enc_block1(h)
        h = self.enc_down1(h)
        h = self.enc_block2(h)
        h = self.enc_down2(h)
        h = self.enc_block3(h)
        h = self.enc_out(F.silu(self.enc_out_norm(h)))
        mean, logvar = h.chunk(2, dim=1)
        return mean, logvar.clamp(-20.0, 10.0)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """Deterministic latent: posterior mean times the latent scale."""
        mean, _ = self.encode_dist(x)
        return mean * self.latent_scale

    def decode(self, z: torch.Tensor, shortcuts=None) -> torch.Tensor:
        if z.shape[1] != self.config.latent_channels:
            raise ValidationError("latent channel mismatch")
        if shortcuts is not None and len(shortcuts) != 2:
            raise ValidationError("expected one shortcut per upsampling stage")
        h = self.dec_in(z / self.latent_scale)
        h = self.dec_block1(h)
        if shortcuts is not None:
            if shortcuts[0].shape != h.shape:
                raise ValidationError("shortcut 0 shape mismatch")
            h = h + shortcuts[0]
        h = self.dec_up1(F.interpolate(h, scale_factor=2, mode="nearest"))
        h = self.dec_block2(h)
        if shortcuts is not None:
            if shortcuts[1].shape != h.shape:
                raise ValidationError("shortcut 1 shape mismatch")
            h = h + shortcuts[1]
        h = self.dec_up2(F.interpolate(h, scale_factor=2, mode="nearest"))
        h = self.dec_block3(h)
        return torch.sigmoid(self.dec_out(F.silu(self.dec_out_norm(h))))


class UNet(nn.Module):
    """Epsilon-prediction denoiser. `residuals`, when given, is a list of
    len(levels)+1 tensors added to each level's skip feature and to the
    middle-block output."""

    def __init__(self, config: UNetConfig | None = None):
        super().__init__()
        self.config = config or UNetConfig()
        widths = self.config.widths
        torch.manual_seed(self.config.seed)
        tdim = self.config.base_channels * 4
        self.time_mlp = nn.Sequential(
            nn.Linear(self.config.base_channels, tdim), nn.SiLU(), nn.Linear(tdim, tdim)
        )
        self.conv_in = nn.Conv2d(LATENT_CHANNELS, widths[0], 3, padding=1)
        self.enc_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        cur = widths[0]
        for i, w in enumerate(widths):
            self.enc_blocks.append(ResBlock(cur, w, tdim))
            cur = w
            if i < len(widths) - 1:
                self.downs.append(nn.Conv2d(w, w, 3, stride=2, padding=1))
        self.mid1 = ResBlock(widths[-1], widths[-1], tdim)
        self.mid_attn = (
            SelfAttention2d(widths[-1]) if self.config.attention_levels else nn.Identity()
        )
        self.mid2 = ResBlock(widths[-1], widths[-1], tdim)
        self.dec_blocks = nn.ModuleList()
        self.ups = nn.ModuleList()
        for i in reversed(range(len(widths))):
            self.dec_blocks.append(ResBlock(cur + widths[i], widths[i], tdim))
            cur = widths[i]
            if i > 0:
                self.ups.append(nn.Conv2d(widths[i], widths[i - 1], 3, padding=1))
                cur = widths[i - 1]
        self.out_norm = _norm(widths[0])
        self.out_conv = zero_module(nn.Conv2d(widths[0], LATENT_CHANNELS, 3, padding=1))

    @property
    def num_levels(self):
        return len(self.config.channel_mults)

    def _temb(self, t, batch, device, dtype):
        if not torch.is_tensor(t):
            t = torch.full((batch,), float(t), device=device, dtype=dtype)
        else:
            t = t.to(device=device, dtype=dtype)
            if t.ndim == 0:
                t = t.expand(batch)
        return self.time_mlp(timestep_embedding(t, self.config.base_channels))

    def encode_features(self, x, temb):
        """Encoder + middle; returns (skips per level, middle output)."""
        h = self.conv_in(x)
        skips = []
        for i, block in enumerate(self.enc_blocks):
            h = block(h, temb)
            skips.append(h)
            if i < len(self.enc_blocks) - 1:
                h = self.downs[i](h)
        h = self.mid1(h, temb)
        h = self.mid_attn(h)
        h = self.mid2(h, temb)
        return skips, h

    def forward(self, z_t, t, residuals=None):
        temb = self._temb(t, z_t.shape[0], z_t.device, z_t.dtype)
        skips, h = self.encode_features(z_t, temb)
        if residuals is not None:
            if len(residuals) != len(skips) + 1:
                raise ValidationError("expected one residual per level plus middle")
            skips = [s + r for s, r in zip(skips, residuals[:-1])]
            h = h + residuals[-1]
        for j, i in enumerate(reversed(range(self.num_levels))):
            h = self.dec_blocks[j](torch.cat([h, skips[i]], dim=1), temb)
            if i > 0:
                h = self.ups[j](F.interpolate(h, scale_factor=2, mode="nearest"))
        return self.out_conv(F.silu(self.out_norm(h)))
