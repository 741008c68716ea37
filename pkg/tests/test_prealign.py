"""Stage-1 pre-alignment: brightness matching, warping, flow, occlusion."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gifuse.errors import ValidationError
from gifuse.imgcore import FlowField, ImageRGB, save_flow
from gifuse.prealign import (
    ConsistencyParams,
    PrecomputedFlowEstimator,
    PyramidalFlowEstimator,
    backward_warp,
    intensity_match,
    occlusion_mask,
    prealign,
    warp_array,
)
from conftest import random_image, smooth_image


class TestConsistencyParams:
    def test_defaults(self):
        params = ConsistencyParams()
        assert params.alpha1 == 0.01
        assert params.alpha2 == 0.5

    def test_negative_rejected(self):
        with pytest.raises(ValidationError):
            ConsistencyParams(alpha1=-0.1)
        with pytest.raises(ValidationError):
            ConsistencyParams(alpha2=-1.0)


class TestIntensityMatch:
    def test_output_in_range(self, rng):
        out = intensity_match(random_image(rng), random_image(rng))
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_mapping_is_monotone(self, rng):
        ue, oe = random_image(rng, 24, 24), random_image(rng, 24, 24)
        out = intensity_match(ue, oe)
        for ch in range(3):
            src = ue.data[..., ch].ravel()
            dst = out.data[..., ch].ravel()
            order = np.argsort(src, kind="stable")
            # Equal sources map equally, larger sources never map lower.
            assert np.all(np.diff(dst[order]) >= -1e-12)

    def test_brightens_toward_target(self, rng):
        dark = ImageRGB(rng.random((32, 32, 3)) * 0.25)
        bright = ImageRGB(0.5 + rng.random((32, 32, 3)) * 0.4)
        out = intensity_match(dark, bright)
        assert out.data.mean() > dark.data.mean() + 0.2

    def test_saturated_target_pixels_ignored(self, rng):
        # A target that is half saturated should match against the
        # unsaturated half only, so the output stays below the cutoff.
        dark = ImageRGB(rng.random((32, 32, 3)) * 0.3)
        tgt = rng.random((32, 32, 3)) * 0.5
        tgt[:16] = 1.0
        out = intensity_match(dark, ImageRGB(tgt))
        assert out.data.max() < 0.98

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValidationError):
            intensity_match(random_image(rng, 8, 8), random_image(rng, 8, 9))


class TestWarp:
    def test_zero_flow_is_bitwise_identity(self, rng):
        img = random_image(rng, 11, 13)
        out = backward_warp(img, FlowField(np.zeros((11, 13, 2))))
        assert np.array_equal(out.data, img.data)

    def test_integer_flow_shifts(self, rng):
        img = random_image(rng, 10, 10)
        flow = np.zeros((10, 10, 2))
        flow[..., 0] = 2.0  # sample from x+2
        out = backward_warp(img, FlowField(flow))
        assert np.array_equal(out.data[:, :-2], img.data[:, 2:])

    def test_bilinear_oracle(self):
        # Hand-computed sample at (x,y)=(0.5, 0.25) of a 2×2 ramp.
        data = np.array([[0.0, 1.0], [2.0, 3.0]])[..., None].repeat(3, axis=2)
        flow = np.zeros((2, 2, 2))
        flow[0, 0] = (0.5, 0.25)
        out = warp_array(data, flow)
        expected = 0.0 * 0.5 * 0.75 + 1.0 * 0.5 * 0.75 + 2.0 * 0.5 * 0.25 + 3.0 * 0.5 * 0.25
        assert np.allclose(out[0, 0], expected)

    def test_border_clamp(self, rng):
        img = random_image(rng, 6, 6)
        flow = np.full((6, 6, 2), -6.0)  # everything samples (0,0) clamped
        out = backward_warp(img, FlowField(flow))
        assert np.allclose(out.data, img.data[0, 0])

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValidationError):
            backward_warp(random_image(rng, 6, 6), FlowField(np.zeros((5, 6, 2))))


class TestOcclusionMask:
    def test_consistent_flows_give_empty_mask(self):
        fwd = np.zeros((8, 8, 2))
        fwd[..., 0] = 3.0
        bwd = -fwd
        mask = occlusion_mask(FlowField(fwd), FlowField(bwd))
        assert mask.data.sum() == 0

    def test_inconsistent_flows_give_full_mask(self):
        fwd = np.zeros((8, 8, 2))
        fwd[..., 0] = 3.0
        bwd = np.zeros((8, 8, 2))
        bwd[..., 0] = 3.0  # round trip error 6 px
        mask = occlusion_mask(FlowField(fwd), FlowField(bwd))
        assert mask.data.min() == 1.0

    def test_threshold_boundary(self):
        # |f + b∘f|² = err² against budget alpha1·(|f|²+|b|²) + alpha2.
        fwd = np.zeros((4, 4, 2))
        bwd = np.zeros((4, 4, 2))
        err = 0.1
        bwd[..., 0] = err
        budget = 0.01 * (0.0 + err**2) + 0.5
        assert err**2 <= budget
        assert occlusion_mask(FlowField(fwd), FlowField(bwd)).data.sum() == 0
        tight = ConsistencyParams(alpha1=0.0, alpha2=err**2 * 0.99)
        mask = occlusion_mask(FlowField(fwd), FlowField(bwd), tight)
        assert mask.data.min() == 1.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 2.0), st.floats(0.0, 2.0))
    def test_monotone_in_alpha2(self, seed, a2_lo, delta):
        rng = np.random.default_rng(seed)
        fwd = FlowField(rng.normal(0, 1.5, (8, 8, 2)).clip(-8, 8))
        bwd = FlowField(rng.normal(0, 1.5, (8, 8, 2)).clip(-8, 8))
        loose = occlusion_mask(fwd, bwd, ConsistencyParams(alpha2=a2_lo + delta))
        strict = occlusion_mask(fwd, bwd, ConsistencyParams(alpha2=a2_lo))
        # Raising the budget can only clear pixels, never add them.
        assert np.all(loose.data <= strict.data)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            occlusion_mask(FlowField(np.zeros((4, 4, 2))), FlowField(np.zeros((4, 5, 2))))


class TestPyramidalFlowEstimator:
    def test_identity_pair(self, rng):
        img = ImageRGB(smooth_image(rng, 48, 48))
        flow = PyramidalFlowEstimator().estimate(img, img)
        assert np.hypot(flow.data[..., 0], flow.data[..., 1]).max() <= 0.5

    def test_global_shift_recovered(self, rng):
        big = smooth_image(rng, 80, 80)
        src = ImageRGB(big[8:72, 8:72])
        dst = ImageRGB(big[5:69, 3:67])  # content shifted by (-5, -3)
        flow = PyramidalFlowEstimator().estimate(src, dst)
        inner = flow.data[12:-12, 12:-12]
        assert abs(np.median(inner[..., 0]) + 5.0) <= 0.5
        assert abs(np.median(inner[..., 1]) + 3.0) <= 0.5

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValidationError):
            PyramidalFlowEstimator().estimate(
                random_image(rng, 16, 16), random_image(rng, 16, 18)
            )


class TestPrecomputedFlowEstimator:
    def test_serves_forward_then_backward(self, rng, tmp_path):
        fwd = FlowField(np.full((8, 8, 2), 1.0))
        bwd = FlowField(np.full((8, 8, 2), -1.0))
        save_flow(fwd, tmp_path / "f.flo")
        save_flow(bwd, tmp_path / "b.flo")
        est = PrecomputedFlowEstimator(tmp_path / "f.flo", tmp_path / "b.flo")
        a, b = random_image(rng, 8, 8), random_image(rng, 8, 8)
        assert np.array_equal(est.estimate(a, b).data, fwd.data)
        assert np.array_equal(est.estimate(b, a).data, bwd.data)

    def test_dimension_check(self, rng, tmp_path):
        save_flow(FlowField(np.zeros((4, 4, 2))), tmp_path / "f.flo")
        est = PrecomputedFlowEstimator(tmp_path / "f.flo")
        with pytest.raises(ValidationError):
            est.estimate(random_image(rng, 8, 8), random_image(rng, 8, 8))


class TestPrealign:
    def test_guidance_masked_exactly(self, rng):
        ue = ImageRGB(smooth_image(rng, 32, 32) * 0.4)
        oe = ImageRGB(smooth_image(rng, 32, 32))
        result = prealign(ue, oe)
        assert np.array_equal(
            result.guidance.data * result.mask.data[..., None],
            np.zeros_like(result.guidance.data),
        )

    def test_matches_composition_oracle(self, rng):
        # prealign must equal warping the ORIGINAL ue by the forward flow
        # and zeroing masked pixels, computed independently here.
        ue = ImageRGB(smooth_image(rng, 32, 32) * 0.4)
        oe = ImageRGB(smooth_image(rng, 32, 32))
        result = prealign(ue, oe)
        warped = np.clip(warp_array(ue.data, result.flow_fwd.data), 0.0, 1.0)
        oracle = (1.0 - result.mask.data)[..., None] * warped
        assert np.array_equal(result.guidance.data, oracle)

    def test_aligned_pair_yields_identity_guidance(self, rng):
        # Same geometry in both frames: flow 0, mask empty, guidance == ue.
        base = smooth_image(rng, 48, 48)
        ue = ImageRGB(base * 0.35)
        oe = ImageRGB(base)
        result = prealign(ue, oe)
        assert result.mask.data.mean() <= 0.05
        valid = result.mask.data == 0
        assert np.allclose(result.guidance.data[valid], ue.data[valid], atol=0.25)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValidationError):
            prealign(random_image(rng, 16, 16), random_image(rng, 16, 20))
