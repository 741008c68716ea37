"""Trainer plumbing on miniature models: seeding, resume, freezing."""

import numpy as np
import pytest
import torch

from gifuse import checkpoint as ckpt
from gifuse.backbone import UNetConfig, VAEConfig
from gifuse.datasynth import build_dataset
from gifuse.diffusion import NoiseSchedule
from gifuse.errors import ValidationError
from gifuse.training import (
    SampleBank,
    TrainConfig,
    holdout_fcb_l1,
    holdout_vae_psnr,
    train,
)

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")


@pytest.fixture(scope="module")
def bank(tmp_path_factory):
    ddir = tmp_path_factory.mktemp("ds")
    build_dataset(8, 5, ddir, patch=32)
    return SampleBank.from_dir(ddir)


def small_bundle():
    return ckpt.new_bundle(
        vae_config=VAEConfig(base_channels=8),
        unet_config=UNetConfig(base_channels=16, channel_mults=(1, 2)),
        schedule=NoiseSchedule(timesteps=50),
    )


def cfg(component, iterations=4, seed=0):
    return TrainConfig(
        component=component, iterations=iterations, batch_size=2, seed=seed
    )


class TestTrainConfig:
    def test_component_validated(self):
        with pytest.raises(ValidationError):
            TrainConfig(component="decoder")

    def test_positive_lr_and_iters(self):
        with pytest.raises(ValidationError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValidationError):
            TrainConfig(iterations=0)


class TestSampleBank:
    def test_shapes(self, bank):
        assert len(bank) == 8
        assert bank.gt.shape == (8, 3, 32, 32)
        assert bank.s.shape == (8, 1, 32, 32)
        assert bank.c.shape == (8, 2, 32, 32)
        assert bank.mask.shape == (8, 32, 32)

    def test_split(self, bank):
        train_idx, hold_idx = bank.split(0.25)
        assert len(train_idx) == 6 and len(hold_idx) == 2
        assert set(train_idx).isdisjoint(hold_idx)

    def test_empty_dir_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            SampleBank.from_dir(tmp_path)


class TestTrainers:
    def test_vae_then_full_chain(self, bank):
        bundle, losses = train(bank, cfg("vae"), small_bundle())
        assert len(losses) == 4 and all(np.isfinite(losses))
        assert "vae" in bundle["params"]
        assert bundle["latent_scale"] > 0

        bundle, losses = train(bank, cfg("backbone"), bundle)
        assert "unet" in bundle["params"]

        unet_before = {
            k: v.clone() for k, v in bundle["params"]["unet"].items()
        }
        bundle, losses = train(bank, cfg("dfcb"), bundle)
        assert "dfcb" in bundle["params"]
        # Frozen backbone must come out bit-identical.
        for key, tensor in bundle["params"]["unet"].items():
            assert torch.equal(tensor, unet_before[key])

        bundle, losses = train(bank, cfg("fcb"), bundle)
        assert "fcb" in bundle["params"]
        with_fcb, without = holdout_fcb_l1(bank, bundle)
        assert np.isfinite(with_fcb) and np.isfinite(without)
        assert np.isfinite(holdout_vae_psnr(bank, bundle))

    def test_resume_is_bitwise(self, bank):
        full, _ = train(bank, cfg("vae", iterations=6), small_bundle())
        half, _ = train(bank, cfg("vae", iterations=3), small_bundle())
        resumed, more = train(bank, cfg("vae", iterations=6), half)
        assert len(more) == 3  # picks up at step 3
        for key in full["params"]["vae"]:
            assert torch.equal(full["params"]["vae"][key],
                               resumed["params"]["vae"][key])

    def test_seed_changes_trajectory(self, bank):
        a, la = train(bank, cfg("vae", seed=1), small_bundle())
        b, lb = train(bank, cfg("vae", seed=2), small_bundle())
        assert la != lb

    def test_downstream_needs_checkpoint(self, bank):
        with pytest.raises(ValidationError):
            train(bank, cfg("backbone"), None)

    def test_loss_log_written(self, bank, tmp_path):
        log = tmp_path / "log.jsonl"
        config = TrainConfig(component="vae", iterations=3, batch_size=2,
                             log_path=str(log))
        train(bank, config, small_bundle())
        lines = log.read_text().strip().splitlines()
        assert len(lines) == 3
        import json

        rec = json.loads(lines[0])
        assert {"component", "step", "loss", "lr", "wall_time"} <= set(rec)
