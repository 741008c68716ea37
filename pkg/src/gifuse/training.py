"""Seeded, resumable trainers for the VAE, the denoiser, and both control
branches, plus dataset loading into memory-resident tensor banks.

Regime: pretrain-and-freeze the backbone (VAE with recon + small KL, then
the epsilon-MSE denoiser on encoded latents), then train each control
branch against the frozen backbone. Only the selected component's weights
ever enter the optimizer; everything else stays bit-identical.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np
import torch

from . import checkpoint as ckpt
from .control import decompose
from .datasynth import load_manifest, load_sample
from .errors import NumericError, ValidationError

COMPONENTS = ("vae", "backbone", "dfcb", "fcb")


@dataclass
class TrainConfig:
    component: str = "vae"
    learning_rate: float = 1e-4
    batch_size: int = 8
    iterations: int = 2000
    seed: int = 0
    kl_weight: float = 1e-6
    holdout_fraction: float = 0.1
    log_path: str | None = None

    def __post_init__(self):
        if self.component not in COMPONENTS:
            raise ValidationError(f"component must be one of {COMPONENTS}")
        if self.learning_rate <= 0:
            raise ValidationError("learning rate must be positive")
        if self.iterations < 1:
            raise ValidationError("iterations must be at least 1")


class SampleBank:
    """All samples of a built dataset as stacked float32 tensors, with the
    guidance decomposition precomputed."""

    def __init__(self, oe, guidance, gt, mask, s, c, indices):
        self.oe, self.guidance, self.gt = oe, guidance, gt
        self.mask, self.s, self.c = mask, s, c
        self.indices = indices

    def __len__(self):
        return self.gt.shape[0]

    @classmethod
    def from_dir(cls, dataset_dir):
        records = load_manifest(dataset_dir)
        if not records:
            raise ValidationError(f"dataset at {dataset_dir} is empty")
        oe, gd, gt, mask, s, c, idx = [], [], [], [], [], [], []
        for rec in records:
            sample = load_sample(dataset_dir, rec)
            pack = decompose(sample.guidance, sample.mask)
            to_t = lambda img: torch.from_numpy(
                img.data.transpose(2, 0, 1).astype(np.float32)
            )
            oe.append(to_t(sample.oe))
            gd.append(to_t(sample.guidance))
            gt.append(to_t(sample.gt))
            mask.append(torch.from_numpy(sample.mask.data.astype(np.float32)))
            s.append(torch.from_numpy(pack.s.astype(np.float32))[None])
            c.append(torch.from_numpy(pack.c.transpose(2, 0, 1).astype(np.float32)))
            idx.append(rec["index"])
        stack = lambda xs: torch.stack(xs)
        return cls(stack(oe), stack(gd), stack(gt), stack(mask), stack(s), stack(c), idx)

    def split(self, holdout_fraction):
        n = len(self)
        n_hold = max(1, int(round(n * holdout_fraction))) if n > 1 else 0
        train = np.arange(0, n - n_hold)
        hold = np.arange(n - n_hold, n)
        return train, hold


def _loop(cfg: TrainConfig, bundle, component, n_train, params, step_fn):
    """Shared seeded/resumable optimization loop. step_fn(idx, gen) -> loss."""
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    gen = torch.Generator().manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    start = 0
    state = bundle["train_state"].get(component)
    if state:
        opt.load_state_dict(state["optimizer"])
        gen.set_state(state["torch_gen"])
        rng.bit_generator.state = state["numpy_rng"]
        start = state["step"]
    losses = []
    log_fh = open(cfg.log_path, "a") if cfg.log_path else None
    t0 = time.time()
    try:
        for step in range(start, cfg.iterations):
            idx = rng.integers(0, n_train, size=cfg.batch_size)
            loss = step_fn(idx, gen)
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite {component} loss at step {step}; batch indices {idx.tolist()}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
            if log_fh:
                log_fh.write(
                    json.dumps(
                        {
                            "component": component,
                            "step": step,
                            "loss": losses[-1],
                            "lr": cfg.learning_rate,
                            "wall_time": round(time.time() - t0, 3),
                        }
                    )
                    + "\n"
                )
    finally:
        if log_fh:
            log_fh.close()
    bundle["train_state"][component] = {
        "optimizer": opt.state_dict(),
        "torch_gen": gen.get_state(),
        "numpy_rng": rng.bit_generator.state,
        "step": cfg.iterations,
    }
    return losses


def train_vae(bank: SampleBank, cfg: TrainConfig, bundle=None):
    bundle = bundle or ckpt.new_bundle()
    vae = ckpt.build_vae(bundle)
    vae.latent_scale.fill_(1.0)
    train_idx, _ = bank.split(cfg.holdout_fraction)

    def step_fn(idx, gen):
        x = bank.gt[train_idx[idx % len(train_idx)]]
        mean, logvar = vae.encode_dist(x)
        eps = torch.randn(mean.shape, generator=gen)
        recon = vae.decode(mean + torch.exp(0.5 * logvar) * eps)
        kl = -0.5 * torch.mean(1 + logvar - mean**2 - torch.exp(logvar))
        return torch.mean((recon - x) ** 2) + cfg.kl_weight * kl

    losses = _loop(cfg, bundle, "vae", len(train_idx), vae.parameters(), step_fn)
    with torch.no_grad():
        probe = bank.gt[train_idx[: min(64, len(train_idx))]]
        mean, _ = vae.encode_dist(probe)
        scale = float(1.0 / mean.std().clamp_min(1e-6))
    bundle["latent_scale"] = scale
    vae.latent_scale.fill_(scale)
    bundle["params"]["vae"] = vae.state_dict()
    return bundle, losses


def train_denoiser(bank: SampleBank, cfg: TrainConfig, bundle):
    ckpt.require(bundle, "vae")
    vae = ckpt.build_vae(bundle)
    vae.requires_grad_(False).eval()
    unet = ckpt.build_unet(bundle)
    schedule = ckpt.schedule_from_bundle(bundle)
    train_idx, _ = bank.split(cfg.holdout_fraction)

    def step_fn(idx, gen):
        x = bank.gt[train_idx[idx % len(train_idx)]]
        with torch.no_grad():
            z0 = vae.encode(x)
        t = torch.randint(0, schedule.timesteps, (z0.shape[0],), generator=gen)
        eps = torch.randn(z0.shape, generator=gen)
        z_t = schedule.add_noise(z0, t, eps)
        return torch.mean((unet(z_t, t) - eps) ** 2)

    losses = _loop(cfg, bundle, "backbone", len(train_idx), unet.parameters(), step_fn)
    bundle["params"]["unet"] = unet.state_dict()
    return bundle, losses


def train_dfcb(bank: SampleBank, cfg: TrainConfig, bundle):
    ckpt.require(bundle, "vae")
    ckpt.require(bundle, "unet")
    vae = ckpt.build_vae(bundle)
    vae.requires_grad_(False).eval()
    unet = ckpt.build_unet(bundle)
    unet.requires_grad_(False).eval()
    dfcb = ckpt.build_dfcb(bundle, unet)
    schedule = ckpt.schedule_from_bundle(bundle)
    train_idx, _ = bank.split(cfg.holdout_fraction)

    def step_fn(idx, gen):
        sel = train_idx[idx % len(train_idx)]
        with torch.no_grad():
            z0 = vae.encode(bank.gt[sel])
            y_oe = vae.encode(bank.oe[sel])
        t = torch.randint(0, schedule.timesteps, (z0.shape[0],), generator=gen)
        eps = torch.randn(z0.shape, generator=gen)
        z_t = schedule.add_noise(z0, t, eps)
        residuals = dfcb(z_t, y_oe, bank.s[sel], bank.c[sel], t)
        return torch.mean((unet(z_t, t, residuals) - eps) ** 2)

    losses = _loop(cfg, bundle, "dfcb", len(train_idx), dfcb.parameters(), step_fn)
    bundle["params"]["dfcb"] = dfcb.state_dict()
    return bundle, losses


def train_fcb(bank: SampleBank, cfg: TrainConfig, bundle):
    ckpt.require(bundle, "vae")
    vae = ckpt.build_vae(bundle)
    vae.requires_grad_(False).eval()
    fcb = ckpt.build_fcb(bundle, vae)
    train_idx, _ = bank.split(cfg.holdout_fraction)

    def step_fn(idx, gen):
        sel = train_idx[idx % len(train_idx)]
        gt = bank.gt[sel]
        with torch.no_grad():
            z0 = vae.encode(gt)
        shortcuts = fcb(bank.oe[sel], bank.s[sel], bank.c[sel])
        recon = vae.decode(z0, shortcuts)
        return torch.mean(torch.abs(recon - gt))

    losses = _loop(cfg, bundle, "fcb", len(train_idx), fcb.parameters(), step_fn)
    bundle["params"]["fcb"] = fcb.state_dict()
    return bundle, losses


def train(bank: SampleBank, cfg: TrainConfig, bundle=None):
    """Dispatch on cfg.component; returns (bundle, per-step losses)."""
    if cfg.component == "vae":
        return train_vae(bank, cfg, bundle)
    if bundle is None:
        raise ValidationError(f"training '{cfg.component}' needs an existing checkpoint")
    if cfg.component == "backbone":
        return train_denoiser(bank, cfg, bundle)
    if cfg.component == "dfcb":
        return train_dfcb(bank, cfg, bundle)
    return train_fcb(bank, cfg, bundle)


def holdout_vae_psnr(bank: SampleBank, bundle, holdout_fraction=0.1) -> float:
    """Mean PSNR of deterministic VAE reconstruction on held-out samples."""
    vae = ckpt.build_vae(bundle)
    vae.eval()
    _, hold = bank.split(holdout_fraction)
    if len(hold) == 0:
        raise ValidationError("no held-out samples")
    with torch.no_grad():
        x = bank.gt[hold]
        recon = vae.decode(vae.encode(x))
        mse = torch.mean((recon - x) ** 2, dim=(1, 2, 3))
    return float(torch.mean(-10.0 * torch.log10(mse.clamp_min(1e-12))))


def holdout_fcb_l1(bank: SampleBank, bundle, holdout_fraction=0.1):
    """(L1 with shortcuts, L1 without) on held-out samples."""
    vae = ckpt.build_vae(bundle)
    vae.eval()
    fcb = ckpt.build_fcb(bundle, vae)
    fcb.eval()
    _, hold = bank.split(holdout_fraction)
    with torch.no_grad():
        gt = bank.gt[hold]
        z0 = vae.encode(gt)
        plain = torch.mean(torch.abs(vae.decode(z0) - gt))
        shortcuts = fcb(bank.oe[hold], bank.s[hold], bank.c[hold])
        with_fcb = torch.mean(torch.abs(vae.decode(z0, shortcuts) - gt))
    return float(with_fcb), float(plain)
