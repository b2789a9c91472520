"""Pinhole cameras, forward depth-based warping onto layered planes, and
warp-artifact repair.

Warping splats each valid source pixel onto one of K depth-stratified
planes in the target view (strata uniform in disparity, so each layer spans
equal parallax). Per-plane repair removes isolated splats and fills thin
cracks before the planes are composited back to front into a single warped
frame plus a disocclusion mask.

Coordinate conventions: pixel (u, v) addresses a pixel center at integer
coordinates; ``orientation`` rotates world-frame directions into the camera
frame (x right, y down, z forward), so a world point X projects via
p = orientation @ (X - position).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, EmptyInputError


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    position: np.ndarray       # (3,) meters, world frame
    orientation: np.ndarray    # (3, 3) world->camera rotation, row-major
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "orientation", np.asarray(self.orientation, dtype=np.float64))
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if self.width < 8 or self.height < 8:
            raise ConfigError(f"camera resolution too small: {self.width}x{self.height}")
        if self.position.shape != (3,):
            raise ConfigError(f"position must be a 3-vector, got shape {self.position.shape}")
        R = self.orientation
        if R.shape != (3, 3) or np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
            raise ConfigError("orientation must be a 3x3 rotation (orthonormal within 1e-9)")

    def moved(self, world_offset: np.ndarray) -> "Camera":
        return Camera(self.fx, self.fy, self.cx, self.cy,
                      self.position + np.asarray(world_offset, dtype=np.float64),
                      self.orientation, self.width, self.height)

    def moved_in_camera_frame(self, local_offset: np.ndarray) -> "Camera":
        """Offset given along the camera's own axes (x right, y down, z forward)."""
        world = self.orientation.T @ np.asarray(local_offset, dtype=np.float64)
        return self.moved(world)


@dataclass
class RgbdFrame:
    color: np.ndarray   # (H, W, 3) in [0, 1]
    depth: np.ndarray   # (H, W) meters
    mask: np.ndarray    # (H, W) bool, True = valid

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        h, w = self.depth.shape
        if self.color.shape != (h, w, 3) or self.mask.shape != (h, w):
            raise ValueError(
                f"color/depth/mask shapes disagree: {self.color.shape}, "
                f"{self.depth.shape}, {self.mask.shape}")
        d = self.depth[self.mask]
        if d.size and (not np.all(np.isfinite(d)) or np.any(d <= 0)):
            raise ValueError("depth must be finite and positive wherever mask is set")

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


@dataclass
class MpiPlane:
    color: np.ndarray   # (H, W, 3), zero where unoccupied
    mask: np.ndarray    # (H, W) bool
    depth: np.ndarray   # (H, W), forward-warped depth, zero where unoccupied


@dataclass
class MultiPlaneImage:
    planes: list[MpiPlane]          # index 0 = nearest
    bounds: np.ndarray              # (K+1,) strictly monotone, disparity units

    @property
    def k(self) -> int:
        return len(self.planes)


@dataclass
class WarpResult:
    frame: RgbdFrame
    disocclusion: np.ndarray        # (H, W) bool, True = known

    def __post_init__(self):
        self.disocclusion = np.asarray(self.disocclusion, dtype=bool)


@dataclass
class CameraRig:
    mode: str                       # "stereo" | "spatial"
    cameras: list[Camera]

    def __len__(self) -> int:
        return len(self.cameras)


# ---------------------------------------------------------------------------
# Warping
# ---------------------------------------------------------------------------

def warp_coordinates(src: RgbdFrame, src_cam: Camera, dst_cam: Camera,
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Continuous target coordinates and depths for every valid source pixel.

    Returns (coords, depths): coords is (H, W, 2) holding (u, v) in the
    destination image, depths is (H, W) in the destination camera frame.
    Invalid source pixels (and points behind the destination camera) map to
    NaN.
    """
    if (src_cam.width, src_cam.height) != (dst_cam.width, dst_cam.height):
        raise ConfigError("source and destination cameras must share resolution")
    h, w = src.shape
    if (w, h) != (src_cam.width, src_cam.height):
        raise ConfigError(f"frame {w}x{h} does not match camera {src_cam.width}x{src_cam.height}")

    u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    d = src.depth.astype(np.float64)
    x = (u - src_cam.cx) * d / src_cam.fx
    y = (v - src_cam.cy) * d / src_cam.fy
    cam_pts = np.stack([x, y, d], axis=-1)

    world = cam_pts @ src_cam.orientation + src_cam.position        # R^T p + pos
    dst_pts = (world - dst_cam.position) @ dst_cam.orientation.T    # R (X - pos)

    z = dst_pts[..., 2]
    valid = src.mask & (z > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        pu = dst_cam.fx * dst_pts[..., 0] / z + dst_cam.cx
        pv = dst_cam.fy * dst_pts[..., 1] / z + dst_cam.cy

    coords = np.stack([pu, pv], axis=-1)
    coords[~valid] = np.nan
    depths = np.where(valid, z, np.nan)
    return coords, depths


def round_half_up(x: np.ndarray) -> np.ndarray:
    """Splat rounding: half-way values round up, so a constant sub-pixel
    offset maps the pixel grid to a uniformly shifted grid (banker's rounding
    would shred a half-integer-disparity region into alternating stripes)."""
    return np.floor(x + 0.5)


def disparity_bounds(d_near: float, d_far: float, k: int) -> np.ndarray:
    """K+1 plane boundaries uniform in disparity (1/depth), nearest first."""
    if not (0 < d_near < d_far):
        raise ConfigError(f"need 0 < d_near < d_far, got ({d_near}, {d_far})")
    return np.linspace(1.0 / d_near, 1.0 / d_far, k + 1)


def project_to_planes(src: RgbdFrame, src_cam: Camera, dst_cam: Camera, k: int,
                      depth_range: tuple[float, float] | None = None) -> MultiPlaneImage:
    """Forward-warp a frame onto K depth-stratified planes in the target view.

    Each valid pixel is splatted (nearest-pixel rounding) onto exactly one
    plane chosen by its destination-space depth; collisions within a plane
    resolve in favor of the nearer sample. Pixels whose depth falls outside
    the stratification range land on the closest end plane.
    """
    if k < 1:
        raise ConfigError(f"need k >= 1 planes, got {k}")
    coords, depths = warp_coordinates(src, src_cam, dst_cam)
    h, w = src.shape

    with np.errstate(invalid="ignore"):
        tx = round_half_up(coords[..., 0])
        ty = round_half_up(coords[..., 1])
    valid = np.isfinite(depths) & (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    if not valid.any():
        raise EmptyInputError("no valid pixel maps into the destination view")

    d = depths[valid]
    if depth_range is None:
        depth_range = (float(d.min()), float(d.max()))
    d_near, d_far = depth_range
    if d_near == d_far:                       # constant-depth degenerate range
        d_near, d_far = d_near * 0.5, d_far * 2.0
    bounds = disparity_bounds(d_near, d_far, k)

    # bounds are decreasing in disparity; plane 0 = nearest (largest disparity)
    ascending = bounds[::-1]
    idx_from_far = np.clip(np.searchsorted(ascending, 1.0 / d, side="right") - 1, 0, k - 1)
    plane_idx = (k - 1) - idx_from_far

    tgt = (plane_idx * (h * w) + ty[valid].astype(np.intp) * w + tx[valid].astype(np.intp))
    # write far-to-near so the nearest sample wins each collision
    order = np.argsort(-d, kind="stable")
    tgt = tgt[order]

    color_flat = np.zeros((k * h * w, 3), dtype=np.float64)
    depth_flat = np.zeros(k * h * w, dtype=np.float64)
    mask_flat = np.zeros(k * h * w, dtype=bool)
    color_flat[tgt] = src.color[valid][order]
    depth_flat[tgt] = d[order]
    mask_flat[tgt] = True

    planes = [MpiPlane(color=color_flat[i * h * w:(i + 1) * h * w].reshape(h, w, 3),
                       mask=mask_flat[i * h * w:(i + 1) * h * w].reshape(h, w),
                       depth=depth_flat[i * h * w:(i + 1) * h * w].reshape(h, w))
              for i in range(k)]
    return MultiPlaneImage(planes=planes, bounds=bounds)


# ---------------------------------------------------------------------------
# Per-plane repair
# ---------------------------------------------------------------------------

def _box_response(mask: np.ndarray) -> np.ndarray:
    # normalized 3x3 box filter (entries 1/9), zero-padded borders
    return ndimage.uniform_filter(mask.astype(np.float64), size=3, mode="constant", cval=0.0)


def gaussian_kernel3(sigma: float) -> np.ndarray:
    """3x3 Gaussian kernel normalized to sum 1."""
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    ax = np.array([-1.0, 0.0, 1.0])
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def remove_isolated(plane_color: np.ndarray, plane_mask: np.ndarray,
                    threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Clear occupied pixels whose 3x3 occupancy response falls below threshold.

    Removal passes repeat until stable, so the result is a fixed point: a
    second application never removes anything further. No pixel is ever added.
    """
    mask = np.asarray(plane_mask, dtype=bool).copy()
    while True:
        isolated = mask & (_box_response(mask) < threshold)
        if not isolated.any():
            break
        mask[isolated] = False
    color = np.where(mask[..., None], plane_color, 0.0)
    return color, mask


def _fill_candidates(mask: np.ndarray, kernel: np.ndarray, threshold: float) -> np.ndarray:
    response = ndimage.convolve(mask.astype(np.float64), kernel, mode="constant", cval=0.0)
    padded = np.pad(mask, 1)
    # interpolation needs support on opposite sides: left & right, or up & down
    opposing = ((padded[1:-1, :-2] & padded[1:-1, 2:])
                | (padded[:-2, 1:-1] & padded[2:, 1:-1]))
    return ~mask & (response > threshold) & opposing


def fill_cracks(plane_color: np.ndarray, plane_mask: np.ndarray,
                sigma: float = 0.8, threshold: float = 0.2,
                ) -> tuple[np.ndarray, np.ndarray]:
    """Fill thin holes whose 3x3 Gaussian occupancy response exceeds threshold.

    A hole qualifies only if occupied pixels flank it on opposite sides
    (horizontally or vertically), i.e. a value can actually be interpolated;
    that keeps region boundaries from dilating. Filled colors are the
    Gaussian average of occupied neighbors with weights renormalized over
    the occupied support. Passes repeat until stable (fixed point); occupied
    pixels are never removed or recolored.
    """
    color, mask = _fill_cracks_values(plane_color, plane_mask, sigma, threshold)
    return color, mask


def _fill_cracks_values(values: np.ndarray, plane_mask: np.ndarray,
                        sigma: float, threshold: float,
                        ) -> tuple[np.ndarray, np.ndarray]:
    kernel = gaussian_kernel3(sigma)
    mask = np.asarray(plane_mask, dtype=bool).copy()
    values = np.asarray(values, dtype=np.float64).copy()
    while True:
        cracks = _fill_candidates(mask, kernel, threshold)
        if not cracks.any():
            break
        weight = ndimage.convolve(mask.astype(np.float64), kernel, mode="constant", cval=0.0)
        for c in range(values.shape[-1]):
            acc = ndimage.convolve(np.where(mask, values[..., c], 0.0), kernel,
                                   mode="constant", cval=0.0)
            values[..., c][cracks] = acc[cracks] / weight[cracks]
        mask[cracks] = True
    return values, mask


def repair_planes(mpi: MultiPlaneImage, isolated_threshold: float = 0.5,
                  crack_sigma: float = 0.8, crack_threshold: float = 0.2,
                  ) -> MultiPlaneImage:
    """Apply isolated-point removal then crack filling to every plane,
    keeping the carried depth channel consistent with the repaired masks."""
    out = []
    for p in mpi.planes:
        color, mask = remove_isolated(p.color, p.mask, isolated_threshold)
        depth = np.where(mask, p.depth, 0.0)
        stacked = np.concatenate([color, depth[..., None]], axis=-1)
        stacked, mask = _fill_cracks_values(stacked, mask, crack_sigma, crack_threshold)
        out.append(MpiPlane(color=stacked[..., :3], mask=mask, depth=stacked[..., 3]))
    return MultiPlaneImage(planes=out, bounds=mpi.bounds)


def blend_planes(mpi: MultiPlaneImage) -> WarpResult:
    """Back-to-front composite of the (repaired) planes.

    Iterates from the farthest plane to the nearest, overwriting wherever a
    fronter plane is occupied; the output mask is the union of plane masks
    and uncovered pixels keep color 0.
    """
    h, w = mpi.planes[0].mask.shape
    color = np.zeros((h, w, 3), dtype=np.float64)
    depth = np.zeros((h, w), dtype=np.float64)
    mask = np.zeros((h, w), dtype=bool)
    for p in reversed(mpi.planes):
        m = p.mask
        color = np.where(m[..., None], p.color, color)
        depth = np.where(m, p.depth, depth)
        mask |= m
    frame = RgbdFrame(color=color, depth=depth, mask=mask)
    return WarpResult(frame=frame, disocclusion=mask.copy())


def warp_frame(src: RgbdFrame, src_cam: Camera, dst_cam: Camera, k: int = 4,
               depth_range: tuple[float, float] | None = None,
               isolated_threshold: float = 0.5, crack_sigma: float = 0.8,
               crack_threshold: float = 0.2) -> WarpResult:
    """Full warp: plane projection, per-plane repair, back-to-front blend."""
    mpi = project_to_planes(src, src_cam, dst_cam, k, depth_range)
    mpi = repair_planes(mpi, isolated_threshold, crack_sigma, crack_threshold)
    return blend_planes(mpi)


# ---------------------------------------------------------------------------
# Padding and rigs
# ---------------------------------------------------------------------------

def outpaint_padding(fx: float, baseline: float, d_min: float) -> int:
    """Padding equal to the maximum disparity, ceil(fx * baseline / d_min)."""
    if fx <= 0:
        raise ConfigError(f"focal length must be positive, got {fx}")
    if baseline < 0:
        raise ConfigError(f"baseline must be nonnegative, got {baseline}")
    if d_min <= 0:
        raise ConfigError(f"minimum depth must be positive, got {d_min}")
    q = fx * baseline / d_min
    r = round(q)
    # snap near-integer disparities before the ceiling (float overshoot,
    # e.g. 100 * 0.07 / 7 -> 1.0000000000000002)
    return int(r) if abs(q - r) < 1e-9 else math.ceil(q)


def build_rig(mode: str, n_views: int, baseline_or_radius: float,
              template: Camera) -> CameraRig:
    """Ordered virtual viewpoints sharing the template's intrinsics/orientation.

    stereo: n_views cameras uniformly spaced along the template's horizontal
    axis over a segment of the given length, view 0 at the reference.

    spatial: n_views cameras on a circle of the given radius in the camera
    plane; the circle passes through the reference viewpoint so that view 0
    (and the coinciding last view, for circular consistency) sees the
    reference video unwarped.
    """
    if mode == "stereo":
        if n_views < 2:
            raise ConfigError(f"stereo rig needs >= 2 views, got {n_views}")
        step = baseline_or_radius / (n_views - 1)
        cams = [template.moved_in_camera_frame([v * step, 0.0, 0.0])
                for v in range(n_views)]
    elif mode == "spatial":
        if n_views < 3:
            raise ConfigError(f"spatial rig needs >= 3 views, got {n_views}")
        r = baseline_or_radius
        # angular step 2*pi/(n-1); the index wraps so the last view's position
        # is bit-identical to the first (circular consistency)
        angles = 2.0 * np.pi * (np.arange(n_views) % (n_views - 1)) / (n_views - 1)
        cams = [template.moved_in_camera_frame([r * (1.0 - np.cos(a)), r * np.sin(a), 0.0])
                for a in angles]
    else:
        raise ConfigError(f"unknown rig mode {mode!r}")
    return CameraRig(mode=mode, cameras=cams)
