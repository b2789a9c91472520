"""Depth normalization and flow-aligned temporal smoothing.

Depth maps arrive from an external estimator one frame at a time; this
module rescales them into a common working range with a single clip-level
affine map (per-frame normalization would reintroduce temporal flicker) and
suppresses per-frame outliers by averaging each pixel's depth along its
optical-flow trajectory with Gaussian weights in time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyInputError


@dataclass
class FlowField:
    """Pixel displacements from frame i to frame i+1 plus a validity mask.

    valid == False marks flow vectors deemed unusable upstream (e.g. failed
    forward-backward consistency); smoothing drops samples reached through
    invalid flow.
    """
    flow: np.ndarray    # (H, W, 2), (du, dv) in pixels
    valid: np.ndarray   # (H, W) bool

    def __post_init__(self):
        self.valid = np.asarray(self.valid, dtype=bool)
        h, w = self.valid.shape
        if self.flow.shape != (h, w, 2):
            raise ValueError(f"flow shape {self.flow.shape} does not match valid {self.valid.shape}")


@dataclass
class DepthClip:
    depths: list[np.ndarray]
    range: tuple[float, float]


def normalize_depth(raw_depths: list[np.ndarray], d_near: float, d_far: float) -> DepthClip:
    """Affinely map the clip's global [min, max] onto [d_near, d_far].

    One affine map is computed over the whole clip, not per frame. A clip
    with constant depth maps to the midpoint of the target range.
    """
    if not raw_depths:
        raise EmptyInputError("empty depth clip")
    if not (0 < d_near < d_far):
        raise ValueError(f"need 0 < d_near < d_far, got ({d_near}, {d_far})")
    lo = min(float(d.min()) for d in raw_depths)
    hi = max(float(d.max()) for d in raw_depths)
    if lo <= 0 or not np.isfinite(lo) or not np.isfinite(hi):
        raise ValueError("raw depths must be positive and finite")
    if hi == lo:
        mid = 0.5 * (d_near + d_far)
        out = [np.full_like(d, mid, dtype=np.float64) for d in raw_depths]
    else:
        scale = (d_far - d_near) / (hi - lo)
        out = [d_near + (d.astype(np.float64) - lo) * scale for d in raw_depths]
    return DepthClip(depths=out, range=(d_near, d_far))


def _sample_bilinear(img: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(img, [py, px], order=1, mode="nearest")


def _sample_valid(valid: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    h, w = valid.shape
    inb = (px >= 0) & (px <= w - 1) & (py >= 0) & (py <= h - 1)
    near = ndimage.map_coordinates(valid.astype(np.float64), [py, px], order=0,
                                   mode="constant", cval=0.0)
    return inb & (near >= 0.5)


def temporal_smooth(clip: DepthClip, flows_fwd: list[FlowField], radius: int = 2,
                    sigma: float = 1.0, flows_bwd: list[FlowField] | None = None,
                    ) -> DepthClip:
    """Gaussian-weighted temporal average of each pixel's depth along its
    flow trajectory.

    For frame s, samples come from frames s-radius..s+radius by chaining the
    supplied forward flows (bilinear depth lookup at each chained position);
    backward positions reuse ``flows_bwd`` when given (flows_bwd[i] maps
    frame i+1 to frame i), otherwise they negate the forward flow, a
    documented approximation. Samples whose chain crosses invalid flow or
    leaves the frame are dropped and the Gaussian weights renormalized; if
    nothing remains the unsmoothed value is kept. The result is clamped to
    the clip range.
    """
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    n = len(clip.depths)
    if len(flows_fwd) < n - 1:
        raise ValueError(f"need {n - 1} forward flows for {n} frames, got {len(flows_fwd)}")
    h, w = clip.depths[0].shape
    base_py, base_px = np.mgrid[0:h, 0:w].astype(np.float64)
    weights = np.exp(-np.arange(-radius, radius + 1, dtype=np.float64) ** 2 / (2.0 * sigma ** 2))

    out = []
    for s in range(n):
        acc = np.zeros((h, w), dtype=np.float64)
        wacc = np.zeros((h, w), dtype=np.float64)
        for off_i, off in enumerate(range(-radius, radius + 1)):
            j = s + off
            if j < 0 or j >= n:
                continue
            px, py = base_px.copy(), base_py.copy()
            ok = np.ones((h, w), dtype=bool)
            if off > 0:
                for step in range(s, j):
                    f = flows_fwd[step]
                    ok &= _sample_valid(f.valid, px, py)
                    du = _sample_bilinear(f.flow[..., 0], px, py)
                    dv = _sample_bilinear(f.flow[..., 1], px, py)
                    px, py = px + du, py + dv
            elif off < 0:
                for step in range(s - 1, j - 1, -1):
                    f = flows_bwd[step] if flows_bwd is not None else flows_fwd[step]
                    sign = 1.0 if flows_bwd is not None else -1.0
                    ok &= _sample_valid(f.valid, px, py)
                    du = _sample_bilinear(f.flow[..., 0], px, py)
                    dv = _sample_bilinear(f.flow[..., 1], px, py)
                    px, py = px + sign * du, py + sign * dv
            ok &= (px >= 0) & (px <= w - 1) & (py >= 0) & (py <= h - 1)
            sample = _sample_bilinear(clip.depths[j], px, py)
            acc += np.where(ok, weights[off_i] * sample, 0.0)
            wacc += np.where(ok, weights[off_i], 0.0)
        smoothed = np.where(wacc > 0, acc / np.maximum(wacc, 1e-300), clip.depths[s])
        out.append(np.clip(smoothed, clip.range[0], clip.range[1]))
    return DepthClip(depths=out, range=clip.range)
