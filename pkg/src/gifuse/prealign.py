"""Pre-alignment stage: brightness matching, dense flow, occlusion masking.

Pipeline per pair: intensity-match the under-exposed frame (flow input
only), estimate bidirectional flow, run the forward-backward consistency
check, then emit guidance = (1 - M) * warp(ue, flow_fwd). The original
under-exposed pixels are warped, never the brightness-matched ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, median_filter, uniform_filter

from .errors import ValidationError
from .imgcore import BinaryMask, FlowField, ImageRGB, load_flow, luminance

HIST_BINS = 256
SATURATION_CUTOFF = 0.98


@dataclass(frozen=True)
class ConsistencyParams:
    """Forward-backward check thresholds: |f+b∘f|² > alpha1(|f|²+|b∘f|²) + alpha2."""

    alpha1: float = 0.01
    alpha2: float = 0.5

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValidationError("consistency thresholds must be non-negative")


@dataclass(frozen=True)
class PreAlignResult:
    guidance: ImageRGB
    mask: BinaryMask
    flow_fwd: FlowField
    flow_bwd: FlowField


def _require_same_shape(a: ImageRGB, b: ImageRGB):
    if a.data.shape != b.data.shape:
        raise ValidationError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")


def intensity_match(ue: ImageRGB, oe: ImageRGB) -> ImageRGB:
    """Per-channel histogram matching of ue onto oe.

    Saturated target pixels (channel value >= 0.98) are excluded from the
    target histogram so blown highlights do not drag the mapping. Output is
    only ever used as flow-estimator input.
    """
    _require_same_shape(ue, oe)
    edges = np.linspace(0.0, 1.0, HIST_BINS + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    out = np.empty_like(ue.data)
    for ch in range(3):
        src = ue.data[..., ch].ravel()
        tgt = oe.data[..., ch].ravel()
        tgt = tgt[tgt < SATURATION_CUTOFF]
        if tgt.size == 0:
            tgt = oe.data[..., ch].ravel()
        src_hist, _ = np.histogram(src, bins=edges)
        tgt_hist, _ = np.histogram(tgt, bins=edges)
        src_cdf = np.cumsum(src_hist) / src.size
        tgt_cdf = np.cumsum(tgt_hist) / tgt.size
        # Monotone bin-value lookup: quantile of src -> first target bin
        # reaching that quantile (plateaus in the target CDF resolve to
        # their left edge, so excluded saturated mass is never reintroduced).
        lut = centers[np.minimum(np.searchsorted(tgt_cdf, src_cdf), HIST_BINS - 1)]
        bins = np.minimum((src * HIST_BINS).astype(np.int64), HIST_BINS - 1)
        out[..., ch] = lut[bins].reshape(ue.data.shape[:2])
    return ImageRGB(np.clip(out, 0.0, 1.0))


def backward_warp(img: ImageRGB, flow: FlowField) -> ImageRGB:
    """output(x) = img(x + flow(x)), bilinear, border-clamped."""
    if (img.height, img.width) != (flow.height, flow.width):
        raise ValidationError("image/flow shape mismatch")
    warped = warp_array(img.data, flow.data)
    return ImageRGB(np.clip(warped, 0.0, 1.0))


def warp_array(data: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Bilinear backward warp of an H×W or H×W×C array; clamps to the border."""
    h, w = data.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = np.clip(xs + flow[..., 0], 0.0, w - 1.0)
    sy = np.clip(ys + flow[..., 1], 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    if data.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    return (
        data[y0, x0] * (1.0 - fx) * (1.0 - fy)
        + data[y0, x1] * fx * (1.0 - fy)
        + data[y1, x0] * (1.0 - fx) * fy
        + data[y1, x1] * fx * fy
    )


def occlusion_mask(
    f_fwd: FlowField, f_bwd: FlowField, params: ConsistencyParams | None = None
) -> BinaryMask:
    """Forward-backward consistency check; 1 where the round trip diverges."""
    params = params or ConsistencyParams()
    if f_fwd.data.shape != f_bwd.data.shape:
        raise ValidationError("flow shape mismatch")
    fwd = f_fwd.data
    bwd_at = warp_array(f_bwd.data, fwd)
    round_trip = np.sum((fwd + bwd_at) ** 2, axis=-1)
    budget = params.alpha1 * (
        np.sum(fwd**2, axis=-1) + np.sum(bwd_at**2, axis=-1)
    ) + params.alpha2
    return BinaryMask((round_trip > budget).astype(np.float64))


class FlowEstimator:
    """Interface for dense flow: estimate(src, dst) with src(x+f(x)) ≈ dst(x)."""

    def estimate(self, src: ImageRGB, dst: ImageRGB) -> FlowField:
        raise NotImplementedError


def _shifted(arr: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Shift an array by whole pixels, clamping at the border."""
    h, w = arr.shape[:2]
    ys = np.clip(np.arange(h) + dy, 0, h - 1)
    xs = np.clip(np.arange(w) + dx, 0, w - 1)
    return arr[np.ix_(ys, xs)]


def _block_match(src, dst, flow, radius: int, win: int) -> np.ndarray:
    """Per-pixel integer displacement search around a rounded base flow.

    The zero-flow candidate seeds the cost map, so weakly textured regions
    keep zero motion instead of inheriting drift from the coarse estimate;
    any other candidate must strictly beat it on windowed SSD.
    """
    h, w = src.shape
    base_x = np.round(flow[..., 0]).astype(np.int64)
    base_y = np.round(flow[..., 1]).astype(np.int64)
    best = uniform_filter((src - dst) ** 2, win, mode="nearest")
    out = np.zeros_like(flow)
    ys, xs = np.mgrid[0:h, 0:w]
    offsets = sorted(
        ((dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)),
        key=lambda o: o[0] * o[0] + o[1] * o[1],
    )
    for dy, dx in offsets:
        sy = np.clip(ys + base_y + dy, 0, h - 1)
        sx = np.clip(xs + base_x + dx, 0, w - 1)
        cand_x = base_x + dx
        cand_y = base_y + dy
        cost = uniform_filter((src[sy, sx] - dst) ** 2, win, mode="nearest")
        update = (cost < best) & ~((cand_x == 0) & (cand_y == 0))
        best[update] = cost[update]
        out[update, 0] = cand_x[update]
        out[update, 1] = cand_y[update]
    return out


def _propagate(src, dst, flow, win: int, rounds: int) -> np.ndarray:
    """Let each pixel adopt a neighbour's flow when it wins under a small
    SSD window; snaps pixels near motion discontinuities to the correct
    side instead of a blended value."""
    offsets = (
        (0, 1), (0, -1), (1, 0), (-1, 0),
        (1, 1), (1, -1), (-1, 1), (-1, -1),
        (0, 2), (0, -2), (2, 0), (-2, 0),
    )
    for _ in range(rounds):
        best = uniform_filter((warp_array(src, flow) - dst) ** 2, win, mode="nearest")
        current = flow.copy()
        for dy, dx in offsets:
            cand = _shifted(flow, dy, dx)
            cost = uniform_filter((warp_array(src, cand) - dst) ** 2, win, mode="nearest")
            update = cost < best
            best[update] = cost[update]
            current[update] = cand[update]
        flow = current
    return flow


class PyramidalFlowEstimator(FlowEstimator):
    """Coarse-to-fine dense flow on luminance.

    Coarser pyramid levels run iterative warped Lucas-Kanade least squares
    (Gaussian-windowed normal equations, Tikhonov floor, median/Gaussian
    smoothing of the running flow). The finest level replaces the
    linearized update with a discrete block-matching search around the
    upsampled estimate followed by cost-based neighbour propagation, which
    keeps motion discontinuities sharp; its output is integer-valued.
    """

    def __init__(self, levels: int = 4, iterations: int = 4, window_sigma: float = 2.0,
                 regularization: float = 1e-3, smooth_sigma: float = 0.8,
                 search_radius: int = 10, search_win: int = 5,
                 propagate_win: int = 3, propagate_rounds: int = 3,
                 median_size: int = 3):
        self.levels = levels
        self.iterations = iterations
        self.window_sigma = window_sigma
        self.regularization = regularization
        self.smooth_sigma = smooth_sigma
        self.search_radius = search_radius
        self.search_win = search_win
        self.propagate_win = propagate_win
        self.propagate_rounds = propagate_rounds
        self.median_size = median_size

    def estimate(self, src: ImageRGB, dst: ImageRGB) -> FlowField:
        if src.data.shape != dst.data.shape:
            raise ValidationError("flow inputs must share dimensions")
        src_pyr = self._pyramid(luminance(src))
        dst_pyr = self._pyramid(luminance(dst))
        flow = np.zeros(src_pyr[-1].shape + (2,))
        for level in range(len(src_pyr) - 1, -1, -1):
            s, d = src_pyr[level], dst_pyr[level]
            if flow.shape[:2] != s.shape:
                flow = _resize_flow(flow, s.shape[0], s.shape[1])
            if level > 0 or self.search_radius == 0:
                flow = self._refine(s, d, flow)
            else:
                flow = _block_match(s, d, flow, self.search_radius, self.search_win)
                flow = _propagate(s, d, flow, self.propagate_win, self.propagate_rounds)
                if self.median_size > 1:
                    flow[..., 0] = median_filter(flow[..., 0], size=self.median_size, mode="nearest")
                    flow[..., 1] = median_filter(flow[..., 1], size=self.median_size, mode="nearest")
        h, w = src.height, src.width
        limit = float(max(h, w))
        return FlowField(np.clip(flow, -limit, limit))

    def _pyramid(self, img: np.ndarray):
        pyr = [img]
        while min(pyr[-1].shape) >= 16 and len(pyr) < self.levels:
            blurred = gaussian_filter(pyr[-1], 1.0, mode="nearest")
            pyr.append(blurred[::2, ::2])
        return pyr

    def _refine(self, src, dst, flow):
        for _ in range(self.iterations):
            warped = warp_array(src, flow)
            gy, gx = np.gradient(warped)
            err = dst - warped
            blur = lambda a: gaussian_filter(a, self.window_sigma, mode="nearest")
            axx = blur(gx * gx) + self.regularization
            axy = blur(gx * gy)
            ayy = blur(gy * gy) + self.regularization
            bx = blur(gx * err)
            by = blur(gy * err)
            det = axx * ayy - axy * axy
            du = (ayy * bx - axy * by) / det
            dv = (axx * by - axy * bx) / det
            step = np.clip(np.stack([du, dv], axis=-1), -1.0, 1.0)
            flow = flow + step
            flow[..., 0] = median_filter(flow[..., 0], size=5, mode="nearest")
            flow[..., 1] = median_filter(flow[..., 1], size=5, mode="nearest")
            if self.smooth_sigma > 0:
                flow[..., 0] = gaussian_filter(flow[..., 0], self.smooth_sigma, mode="nearest")
                flow[..., 1] = gaussian_filter(flow[..., 1], self.smooth_sigma, mode="nearest")
        return flow


class PrecomputedFlowEstimator(FlowEstimator):
    """Loads flow from files written in the package's FLO1 format."""

    def __init__(self, fwd_path, bwd_path=None):
        self.fwd_path = fwd_path
        self.bwd_path = bwd_path
        self._served = 0

    def estimate(self, src: ImageRGB, dst: ImageRGB) -> FlowField:
        path = self.fwd_path if self._served == 0 or self.bwd_path is None else self.bwd_path
        self._served += 1
        flow = load_flow(path)
        if (flow.height, flow.width) != (src.height, src.width):
            raise ValidationError("precomputed flow dimensions do not match inputs")
        return flow


def _resize_flow(flow: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    import cv2

    scale_x = out_w / flow.shape[1]
    scale_y = out_h / flow.shape[0]
    up = cv2.resize(flow.astype(np.float32), (out_w, out_h), interpolation=cv2.INTER_LINEAR)
    up = up.astype(np.float64)
    up[..., 0] *= scale_x
    up[..., 1] *= scale_y
    return up


def estimate_flow(src: ImageRGB, dst: ImageRGB, estimator: FlowEstimator | None = None) -> FlowField:
    estimator = estimator or PyramidalFlowEstimator()
    return estimator.estimate(src, dst)


def prealign(
    ue: ImageRGB,
    oe: ImageRGB,
    params: ConsistencyParams | None = None,
    estimator: FlowEstimator | None = None,
) -> PreAlignResult:
    """Full stage 1: returns masked aligned guidance plus flows and mask."""
    _require_same_shape(ue, oe)
    params = params or ConsistencyParams()
    estimator = estimator or PyramidalFlowEstimator()
    matched = intensity_match(ue, oe)
    flow_fwd = estimator.estimate(matched, oe)   # oe -> ue direction
    flow_bwd = estimator.estimate(oe, matched)   # ue -> oe direction
    mask = occlusion_mask(flow_fwd, flow_bwd, params)
    warped = backward_warp(ue, flow_fwd)
    guidance = ImageRGB((1.0 - mask.data)[..., None] * warped.data)
    return PreAlignResult(guidance=guidance, mask=mask, flow_fwd=flow_fwd, flow_bwd=flow_bwd)
