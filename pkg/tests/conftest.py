import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from gifuse.imgcore import BinaryMask, ImageRGB


def random_image(rng, h=32, w=32):
    return ImageRGB(rng.random((h, w, 3)))


def smooth_image(rng, h, w, sigma=2.0, lo=0.1, hi=0.9):
    """Band-limited random texture; flow estimation needs structure at
    more than one scale, which raw per-pixel noise lacks."""
    t = rng.random((h, w, 3))
    t = gaussian_filter(t, (sigma, sigma, 0))
    t = (t - t.min()) / (t.max() - t.min())
    return np.clip(lo + (hi - lo) * t, 0.0, 1.0)


def random_mask(rng, h=32, w=32, p=0.2):
    return BinaryMask((rng.random((h, w)) < p).astype(np.float64))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_setup(tmp_path_factory):
    """A miniature dataset plus a checkpoint with every component trained a
    couple of steps — just enough for end-to-end plumbing tests."""
    from gifuse import checkpoint as ckpt
    from gifuse.backbone import UNetConfig, VAEConfig
    from gifuse.datasynth import build_dataset
    from gifuse.diffusion import NoiseSchedule
    from gifuse.training import SampleBank, TrainConfig, train

    root = tmp_path_factory.mktemp("tiny")
    data_dir = root / "data"
    build_dataset(6, 3, data_dir, patch=32)
    bank = SampleBank.from_dir(data_dir)
    bundle = ckpt.new_bundle(
        vae_config=VAEConfig(base_channels=8),
        unet_config=UNetConfig(base_channels=16, channel_mults=(1, 2)),
        schedule=NoiseSchedule(timesteps=50),
    )
    for component in ("vae", "backbone", "dfcb", "fcb"):
        cfg = TrainConfig(component=component, iterations=2, batch_size=2)
        bundle, _ = train(bank, cfg, bundle)
    bundle_path = root / "tiny.pt"
    ckpt.save_bundle(bundle, bundle_path)
    return data_dir, bundle_path
