"""End-to-end fusion plumbing on a miniature trained checkpoint."""

import numpy as np
import pytest

from gifuse import checkpoint as ckpt
from gifuse.errors import CheckpointError, ValidationError
from gifuse.imgcore import ImageRGB
from gifuse.pipeline import FusionRequest, fuse
from conftest import smooth_image


@pytest.fixture(scope="module")
def bundle(tiny_setup):
    _, bundle_path = tiny_setup
    return ckpt.load_bundle(bundle_path)


def make_pair(seed=0, size=32):
    rng = np.random.default_rng(seed)
    base = smooth_image(rng, size, size)
    return ImageRGB(base * 0.3), ImageRGB(base)


class TestFusionRequest:
    def test_shape_mismatch(self):
        ue, _ = make_pair()
        _, oe = make_pair(size=36)
        with pytest.raises(ValidationError):
            FusionRequest(ue=ue, oe=oe)

    def test_dims_must_divide(self):
        rng = np.random.default_rng(0)
        img = ImageRGB(rng.random((30, 30, 3)))
        with pytest.raises(ValidationError):
            FusionRequest(ue=img, oe=img)


class TestFuse:
    def test_output_contract(self, bundle):
        ue, oe = make_pair()
        fused, diag = fuse(FusionRequest(ue=ue, oe=oe, steps=2), bundle)
        assert fused.data.shape == oe.data.shape
        assert fused.data.min() >= 0.0 and fused.data.max() <= 1.0
        assert diag.prealign.mask.data.shape == (32, 32)
        assert tuple(diag.z0.shape) == (1, 4, 8, 8)

    def test_deterministic_under_seed(self, bundle):
        ue, oe = make_pair(1)
        a, _ = fuse(FusionRequest(ue=ue, oe=oe, steps=3, seed=5), bundle)
        b, _ = fuse(FusionRequest(ue=ue, oe=oe, steps=3, seed=5), bundle)
        assert np.array_equal(a.data, b.data)

    def test_seed_changes_output(self, bundle):
        ue, oe = make_pair(1)
        a, _ = fuse(FusionRequest(ue=ue, oe=oe, steps=3, seed=5), bundle)
        b, _ = fuse(FusionRequest(ue=ue, oe=oe, steps=3, seed=6), bundle)
        assert not np.array_equal(a.data, b.data)

    def test_requires_all_components(self, bundle):
        partial = {**bundle, "params": {"vae": bundle["params"]["vae"]}}
        ue, oe = make_pair()
        with pytest.raises(CheckpointError):
            fuse(FusionRequest(ue=ue, oe=oe, steps=2), partial)
