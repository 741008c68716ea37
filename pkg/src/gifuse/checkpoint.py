"""Versioned checkpoint container.

One file holds config echoes, schedule constants, the latent scale, and
named parameter namespaces ("vae", "unet", "dfcb", "fcb"), plus optional
trainer state (optimizer, step, RNG snapshots) for bitwise resume.
"""

from __future__ import annotations

import os
from dataclasses import asdict

import torch

from .backbone import UNet, UNetConfig, VAE, VAEConfig
from .control import DFCB, FCB
from .diffusion import NoiseSchedule
from .errors import CheckpointError

FORMAT_VERSION = 1


def new_bundle(vae_config=None, unet_config=None, schedule=None):
    vae_config = vae_config or VAEConfig()
    unet_config = unet_config or UNetConfig()
    schedule = schedule or NoiseSchedule()
    return {
        "version": FORMAT_VERSION,
        "vae_config": asdict(vae_config),
        "unet_config": asdict(unet_config),
        "schedule": {
            "timesteps": schedule.timesteps,
            "beta_start": schedule.beta_start,
            "beta_end": schedule.beta_end,
        },
        "latent_scale": 1.0,
        "params": {},
        "train_state": {},
    }


def save_bundle(bundle: dict, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    torch.save(bundle, path)


def load_bundle(path) -> dict:
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        bundle = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:  # noqa: BLE001
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(bundle, dict) or bundle.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format in {path}")
    return bundle


def schedule_from_bundle(bundle: dict) -> NoiseSchedule:
    return NoiseSchedule(**bundle["schedule"])


def build_vae(bundle: dict) -> VAE:
    vae = VAE(VAEConfig(**bundle["vae_config"]))
    if "vae" in bundle["params"]:
        vae.load_state_dict(bundle["params"]["vae"])
    vae.latent_scale.fill_(float(bundle["latent_scale"]))
    return vae


def build_unet(bundle: dict) -> UNet:
    cfg = bundle["unet_config"]
    cfg = {**cfg, "channel_mults": tuple(cfg["channel_mults"]),
           "attention_levels": tuple(cfg["attention_levels"])}
    unet = UNet(UNetConfig(**cfg))
    if "unet" in bundle["params"]:
        unet.load_state_dict(bundle["params"]["unet"])
    return unet


def build_dfcb(bundle: dict, unet: UNet) -> DFCB:
    dfcb = DFCB(unet)
    if "dfcb" in bundle["params"]:
        dfcb.load_state_dict(bundle["params"]["dfcb"])
    return dfcb


def build_fcb(bundle: dict, vae: VAE) -> FCB:
    fcb = FCB(vae)
    if "fcb" in bundle["params"]:
        fcb.load_state_dict(bundle["params"]["fcb"])
    return fcb


def require(bundle: dict, namespace: str):
    if namespace not in bundle["params"]:
        raise CheckpointError(f"checkpoint is missing trained '{namespace}' weights")
