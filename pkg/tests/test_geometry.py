"""Warping, plane projection, repair operators, blending, rigs."""

import numpy as np
import pytest

from framematrix.errors import ConfigError, EmptyInputError
from framematrix.geometry import (Camera, MpiPlane, MultiPlaneImage, RgbdFrame,
                                  blend_planes, build_rig, fill_cracks,
                                  gaussian_kernel3, outpaint_padding,
                                  project_to_planes, remove_isolated, repair_planes,
                                  round_half_up, warp_coordinates, warp_frame)


def make_camera(fx=100.0, width=64, height=48, x=0.0):
    return Camera(fx=fx, fy=fx, cx=(width - 1) / 2, cy=(height - 1) / 2,
                  position=np.array([x, 0.0, 0.0]), orientation=np.eye(3),
                  width=width, height=height)


def constant_depth_frame(cam, depth, seed=0):
    rng = np.random.default_rng(seed)
    color = rng.uniform(0, 1, size=(cam.height, cam.width, 3))
    return RgbdFrame(color=color, depth=np.full((cam.height, cam.width), depth),
                     mask=np.ones((cam.height, cam.width), dtype=bool))


# ---------------------------------------------------------------------------
# warp_coordinates
# ---------------------------------------------------------------------------

def test_disparity_formula_constant_depth():
    src_cam = make_camera(fx=100.0)
    dst_cam = make_camera(fx=100.0, x=0.07)
    frame = constant_depth_frame(src_cam, 7.0)
    coords, depths = warp_coordinates(frame, src_cam, dst_cam)
    u, v = np.meshgrid(np.arange(src_cam.width), np.arange(src_cam.height))
    dx = coords[..., 0] - u
    dy = coords[..., 1] - v
    assert np.max(np.abs(np.abs(dx) - 1.0)) < 1e-9   # fx*b/d = 100*0.07/7 = 1 px
    assert np.max(np.abs(dy)) < 1e-9
    assert np.max(np.abs(depths - 7.0)) < 1e-9


def test_identity_warp():
    cam = make_camera()
    frame = constant_depth_frame(cam, 3.0)
    coords, depths = warp_coordinates(frame, cam, cam)
    u, v = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
    assert np.max(np.abs(coords[..., 0] - u)) < 1e-9
    assert np.max(np.abs(coords[..., 1] - v)) < 1e-9
    assert np.array_equal(depths, frame.depth)


def test_max_min_disparity_from_depth_range():
    src = make_camera(fx=500.0, width=96, height=64)
    dst = make_camera(fx=500.0, width=96, height=64, x=0.07)
    depth = np.full((64, 96), 1.0)
    depth[:, 48:] = 10.0
    frame = RgbdFrame(color=np.zeros((64, 96, 3)), depth=depth,
                      mask=np.ones((64, 96), dtype=bool))
    coords, _ = warp_coordinates(frame, src, dst)
    u = np.arange(96)[None, :].repeat(64, axis=0)
    disp = np.abs(coords[..., 0] - u)
    assert disp[:, :48].max() == pytest.approx(35.0, abs=1e-9)
    assert disp[:, 48:].min() == pytest.approx(3.5, abs=1e-9)


def test_warp_marks_invalid_pixels_with_nan():
    cam = make_camera()
    mask = np.ones((cam.height, cam.width), dtype=bool)
    mask[0, 0] = False
    frame = RgbdFrame(color=np.zeros((cam.height, cam.width, 3)),
                      depth=np.full((cam.height, cam.width), 2.0), mask=mask)
    coords, depths = warp_coordinates(frame, cam, make_camera(x=0.01))
    assert np.isnan(coords[0, 0]).all() and np.isnan(depths[0, 0])
    assert np.isfinite(coords[1:, :]).all()


def test_warp_resolution_mismatch_rejected():
    cam = make_camera()
    other = make_camera(width=32, height=32)
    frame = constant_depth_frame(cam, 2.0)
    with pytest.raises(ConfigError):
        warp_coordinates(frame, cam, other)


def test_round_trip_warp_within_one_pixel():
    # warp A->B (raw splat, no repair) then back B->A with the forward-warped
    # depth: every mutually visible pixel returns within the rounding bound
    a = make_camera(fx=120.0)
    b = make_camera(fx=120.0, x=0.05)
    rng = np.random.default_rng(1)
    depth = rng.uniform(2.0, 9.0, size=(a.height, a.width))
    frame = RgbdFrame(color=np.zeros((a.height, a.width, 3)), depth=depth,
                      mask=np.ones((a.height, a.width), dtype=bool))
    warped = blend_planes(project_to_planes(frame, a, b, k=4, depth_range=(1.0, 10.0)))
    coords_fwd, depths_fwd = warp_coordinates(frame, a, b)
    back = warp_coordinates(warped.frame, b, a)[0]

    tx = round_half_up(coords_fwd[..., 0]).astype(int)
    ty = round_half_up(coords_fwd[..., 1]).astype(int)
    inb = (tx >= 0) & (tx < a.width) & (ty >= 0) & (ty < a.height)
    u, v = np.meshgrid(np.arange(a.width, dtype=float), np.arange(a.height, dtype=float))
    errs = []
    for y, x in zip(*np.nonzero(inb)):
        if warped.frame.depth[ty[y, x], tx[y, x]] == depths_fwd[y, x]:   # survived z-buffer
            bx, by = back[ty[y, x], tx[y, x]]
            errs.append(np.hypot(bx - u[y, x], by - v[y, x]))
    assert errs and max(errs) <= 1.0 + 1e-6


# ---------------------------------------------------------------------------
# project_to_planes
# ---------------------------------------------------------------------------

def brute_force_plane(d, bounds):
    # reference plane assignment: disparity against stratified bounds
    q = 1.0 / d
    k = len(bounds) - 1
    for i in range(k):
        lo, hi = bounds[i + 1], bounds[i]
        if (q <= hi and q >= lo) or (i == 0 and q > hi) or (i == k - 1 and q < lo):
            return i
    return k - 1


def test_two_depth_populations_land_on_distinct_planes():
    src = make_camera(fx=60.0)
    dst = make_camera(fx=60.0, x=0.03)
    depth = np.full((src.height, src.width), 1.5)
    depth[:, src.width // 2:] = 8.0
    frame = RgbdFrame(color=np.ones((src.height, src.width, 3)) * 0.5,
                      depth=depth, mask=np.ones((src.height, src.width), dtype=bool))
    mpi = project_to_planes(frame, src, dst, k=4, depth_range=(1.0, 10.0))
    occupied = [i for i, p in enumerate(mpi.planes) if p.mask.any()]
    assert len(occupied) == 2
    for i, p in enumerate(mpi.planes):
        if p.mask.any():
            depths_here = np.unique(p.depth[p.mask])
            assert len(depths_here) == 1
            assert brute_force_plane(depths_here[0], mpi.bounds) == i


def test_plane_assignment_matches_brute_force_on_random_depths():
    src = make_camera(fx=50.0, width=32, height=24)
    dst = make_camera(fx=50.0, width=32, height=24, x=0.02)
    rng = np.random.default_rng(2)
    depth = rng.uniform(1.0, 10.0, size=(24, 32))
    frame = RgbdFrame(color=rng.uniform(0, 1, (24, 32, 3)), depth=depth,
                      mask=np.ones((24, 32), dtype=bool))
    mpi = project_to_planes(frame, src, dst, k=4, depth_range=(1.0, 10.0))
    # every splatted sample's plane agrees with the brute-force rule
    for i, p in enumerate(mpi.planes):
        for d in p.depth[p.mask]:
            assert brute_force_plane(d, mpi.bounds) == i


def test_every_valid_pixel_lands_on_exactly_one_plane():
    src = make_camera(fx=80.0, width=40, height=30)
    dst = make_camera(fx=80.0, width=40, height=30, x=0.04)
    rng = np.random.default_rng(3)
    depth = rng.uniform(1.0, 10.0, size=(30, 40))
    frame = RgbdFrame(color=rng.uniform(0, 1, (30, 40, 3)), depth=depth,
                      mask=np.ones((30, 40), dtype=bool))
    mpi = project_to_planes(frame, src, dst, k=4, depth_range=(1.0, 10.0))
    coords, depths = warp_coordinates(frame, src, dst)
    tx = round_half_up(coords[..., 0]).astype(int)
    ty = round_half_up(coords[..., 1]).astype(int)
    inb = (tx >= 0) & (tx < 40) & (ty >= 0) & (ty < 30)
    # each in-bounds source pixel occupies its brute-force plane (and only
    # that plane can hold its splat)
    for y, x in zip(*np.nonzero(inb)):
        i = brute_force_plane(depths[y, x], mpi.bounds)
        assert mpi.planes[i].mask[ty[y, x], tx[y, x]]


def test_single_plane_equals_classical_zbuffer_warp():
    src = make_camera(fx=80.0, width=40, height=30)
    dst = make_camera(fx=80.0, width=40, height=30, x=0.04)
    rng = np.random.default_rng(4)
    depth = rng.uniform(1.0, 10.0, size=(30, 40))
    frame = RgbdFrame(color=rng.uniform(0, 1, (30, 40, 3)), depth=depth,
                      mask=np.ones((30, 40), dtype=bool))
    mpi1 = project_to_planes(frame, src, dst, k=1, depth_range=(1.0, 10.0))
    blended = blend_planes(mpi1)
    # brute-force z-buffer splat
    coords, depths = warp_coordinates(frame, src, dst)
    zbuf = np.full((30, 40), np.inf)
    color = np.zeros((30, 40, 3))
    for y in range(30):
        for x in range(40):
            tx, ty = round_half_up(coords[y, x, 0]), round_half_up(coords[y, x, 1])
            if not (0 <= tx < 40 and 0 <= ty < 30):
                continue
            tx, ty = int(tx), int(ty)
            if depths[y, x] < zbuf[ty, tx]:
                zbuf[ty, tx] = depths[y, x]
                color[ty, tx] = frame.color[y, x]
    assert np.array_equal(blended.frame.mask, np.isfinite(zbuf))
    assert np.allclose(blended.frame.color, color)


def test_constant_depth_occupies_one_plane():
    src = make_camera()
    dst = make_camera(x=0.02)
    frame = constant_depth_frame(src, 4.0)
    mpi = project_to_planes(frame, src, dst, k=4, depth_range=(1.0, 10.0))
    assert sum(1 for p in mpi.planes if p.mask.any()) == 1


def test_all_invalid_pixels_rejected():
    cam = make_camera()
    frame = RgbdFrame(color=np.zeros((cam.height, cam.width, 3)),
                      depth=np.ones((cam.height, cam.width)),
                      mask=np.zeros((cam.height, cam.width), dtype=bool))
    with pytest.raises(EmptyInputError):
        project_to_planes(frame, cam, make_camera(x=0.01), k=4)


# ---------------------------------------------------------------------------
# remove_isolated
# ---------------------------------------------------------------------------

def test_lone_pixel_removed():
    mask = np.zeros((5, 5), dtype=bool)
    mask[2, 2] = True
    color = np.ones((5, 5, 3))
    _, out = remove_isolated(color, mask)
    assert not out.any()          # response 1/9 < 0.5


def test_full_mask_loses_only_corners():
    # kernel-sum oracle: corners 4/9 < 0.5, edges 6/9, interior 9/9
    mask = np.ones((6, 7), dtype=bool)
    color = np.ones((6, 7, 3))
    _, out = remove_isolated(color, mask)
    expect = np.ones((6, 7), dtype=bool)
    for y, x in [(0, 0), (0, 6), (5, 0), (5, 6)]:
        expect[y, x] = False
    assert np.array_equal(out, expect)


def test_pixel_with_four_supported_neighbors_kept():
    # center has exactly 4 of 8 neighbors occupied (response 5/9 >= 0.5) and
    # those neighbors are themselves supported by a solid block below
    mask = np.zeros((6, 8), dtype=bool)
    mask[1:4, 0:6] = True          # solid block, rows 1..3
    mask[0, 2] = True              # the probe pixel
    mask[0, 3] = True
    mask[0, 4] = True
    resp = (np.ones((3, 3)) / 9.0)
    from scipy.ndimage import convolve
    probe_response = convolve(mask.astype(float), resp, mode="constant")[0, 2]
    assert probe_response == pytest.approx(5 / 9)
    _, out = remove_isolated(np.ones((6, 8, 3)), mask)
    assert out[0, 2]


def test_remove_isolated_idempotent_and_monotone():
    rng = np.random.default_rng(5)
    for _ in range(25):
        mask = rng.random((20, 24)) < rng.uniform(0.2, 0.9)
        color = rng.random((20, 24, 3))
        c1, m1 = remove_isolated(color, mask)
        c2, m2 = remove_isolated(c1, m1)
        assert np.array_equal(m1, m2) and np.array_equal(c1, c2)
        assert not (m1 & ~mask).any()          # never adds
        assert np.array_equal(c1[~m1], np.zeros_like(c1[~m1]))


# ---------------------------------------------------------------------------
# fill_cracks
# ---------------------------------------------------------------------------

def test_one_pixel_gap_filled_with_neighbor_average():
    mask = np.ones((7, 9), dtype=bool)
    mask[:, 4] = False
    color = np.zeros((7, 9, 3))
    color[:, :4] = 0.2
    color[:, 5:] = 0.8
    out_color, out_mask = fill_cracks(color, mask)
    assert out_mask.all()
    # symmetric occupied support left/right -> average of 0.2 and 0.8
    assert np.allclose(out_color[2:5, 4], 0.5, atol=1e-12)


def test_empty_mask_unchanged():
    color = np.zeros((5, 5, 3))
    mask = np.zeros((5, 5), dtype=bool)
    out_color, out_mask = fill_cracks(color, mask)
    assert not out_mask.any() and not out_color.any()


def test_single_diagonal_neighbor_not_filled():
    # response equals the corner weight of the normalized kernel, below 0.2
    kernel = gaussian_kernel3(0.8)
    corner = kernel[0, 0]
    assert corner == pytest.approx(np.exp(-2 / (2 * 0.8 ** 2))
                                   / (1 + 4 * np.exp(-1 / (2 * 0.8 ** 2))
                                      + 4 * np.exp(-2 / (2 * 0.8 ** 2))))
    assert corner < 0.2
    mask = np.zeros((5, 5), dtype=bool)
    mask[3, 3] = True
    _, out_mask = fill_cracks(np.ones((5, 5, 3)), mask)
    assert not out_mask[2, 2]


def test_fill_cracks_never_removes_or_recolors():
    rng = np.random.default_rng(6)
    mask = rng.random((15, 15)) < 0.6
    color = rng.random((15, 15, 3)) * mask[..., None]
    out_color, out_mask = fill_cracks(color, mask)
    assert (out_mask | ~mask).all() and (mask <= out_mask).all()
    assert np.array_equal(out_color[mask], color[mask])


def test_fill_cracks_keeps_straight_boundaries():
    # region boundaries must not dilate (no opposing support outside)
    mask = np.zeros((10, 10), dtype=bool)
    mask[4:, :] = True
    _, out_mask = fill_cracks(np.ones((10, 10, 3)), mask)
    assert np.array_equal(out_mask, mask)


def test_fill_cracks_idempotent():
    rng = np.random.default_rng(7)
    for _ in range(25):
        mask = rng.random((18, 18)) < rng.uniform(0.3, 0.95)
        color = rng.random((18, 18, 3)) * mask[..., None]
        c1, m1 = fill_cracks(color, mask)
        c2, m2 = fill_cracks(c1, m1)
        assert np.array_equal(m1, m2) and np.array_equal(c1, c2)


# ---------------------------------------------------------------------------
# blend_planes
# ---------------------------------------------------------------------------

def _plane(h, w, value=0.0, mask=None, depth=1.0):
    m = np.zeros((h, w), dtype=bool) if mask is None else mask
    color = np.full((h, w, 3), value) * m[..., None]
    return MpiPlane(color=color, mask=m, depth=np.full((h, w), depth) * m)


def test_front_plane_occludes_back():
    h, w = 4, 4
    m = np.ones((h, w), dtype=bool)
    planes = [_plane(h, w, 0.9, m, 1.0), _plane(h, w), _plane(h, w, 0.1, m, 9.0)]
    out = blend_planes(MultiPlaneImage(planes=planes, bounds=np.array([1, .6, .3, .1])))
    assert np.allclose(out.frame.color, 0.9)
    assert np.allclose(out.frame.depth, 1.0)


def test_uncovered_pixels_zero_and_unmasked():
    h, w = 4, 4
    planes = [_plane(h, w) for _ in range(3)]
    out = blend_planes(MultiPlaneImage(planes=planes, bounds=np.array([1, .6, .3, .1])))
    assert not out.frame.mask.any() and not out.frame.color.any()
    assert np.array_equal(out.disocclusion, out.frame.mask)


def test_back_plane_survives_when_alone():
    h, w = 4, 4
    m = np.zeros((h, w), dtype=bool)
    m[1, 1] = True
    planes = [_plane(h, w), _plane(h, w), _plane(h, w, 0.4, m, 8.0)]
    out = blend_planes(MultiPlaneImage(planes=planes, bounds=np.array([1, .6, .3, .1])))
    assert out.frame.color[1, 1, 0] == pytest.approx(0.4)
    assert out.frame.mask[1, 1] and out.frame.mask.sum() == 1


def test_blend_mask_is_union_of_plane_masks():
    rng = np.random.default_rng(8)
    h, w = 10, 12
    planes = [_plane(h, w, 0.5, rng.random((h, w)) < 0.3, d)
              for d in (1.0, 3.0, 9.0)]
    mpi = MultiPlaneImage(planes=planes, bounds=np.array([1, .6, .3, .1]))
    out = blend_planes(mpi)
    union = planes[0].mask | planes[1].mask | planes[2].mask
    assert np.array_equal(out.frame.mask, union)


# ---------------------------------------------------------------------------
# outpaint_padding / rigs
# ---------------------------------------------------------------------------

def test_outpaint_padding_values():
    assert outpaint_padding(500.0, 0.07, 1.0) == 35
    assert outpaint_padding(100.0, 0.07, 7.0) == 1
    assert outpaint_padding(100.0, 0.0, 1.0) == 0
    with pytest.raises(ConfigError):
        outpaint_padding(500.0, 0.07, 0.0)


def test_stereo_rig_spacing():
    rig = build_rig("stereo", 6, 0.07, make_camera())
    xs = [c.position[0] for c in rig.cameras]
    assert xs[0] == 0.0
    steps = np.diff(xs)
    assert np.allclose(steps, 0.014)
    assert xs[-1] == pytest.approx(0.07)


def test_stereo_rig_two_views():
    rig = build_rig("stereo", 2, 0.07, make_camera())
    assert rig.cameras[0].position[0] == 0.0
    assert rig.cameras[1].position[0] == pytest.approx(0.07)


def test_spatial_rig_circular_closure():
    rig = build_rig("spatial", 16, 0.07, make_camera())
    assert len(rig.cameras) == 16
    assert np.array_equal(rig.cameras[15].position, rig.cameras[0].position)
    # all positions lie on a circle of radius 0.07 through the reference
    center = rig.cameras[0].position + np.array([0.07, 0.0, 0.0])
    for cam in rig.cameras:
        assert np.linalg.norm(cam.position - center) == pytest.approx(0.07)
    # angular step 2*pi/15: consecutive chord length
    chord = 2 * 0.07 * np.sin(np.pi / 15)
    for a, b in zip(rig.cameras[:-1], rig.cameras[1:]):
        assert np.linalg.norm(a.position - b.position) == pytest.approx(chord)


def test_rig_rejects_bad_counts():
    with pytest.raises(ConfigError):
        build_rig("stereo", 1, 0.07, make_camera())
    with pytest.raises(ConfigError):
        build_rig("spatial", 2, 0.07, make_camera())
    with pytest.raises(ConfigError):
        build_rig("volumetric", 4, 0.07, make_camera())


def test_camera_validation():
    with pytest.raises(ConfigError):
        make_camera(fx=-1.0)
    with pytest.raises(ConfigError):
        Camera(fx=10, fy=10, cx=1, cy=1, position=np.zeros(3),
               orientation=np.eye(3) * 1.001, width=64, height=48)
    with pytest.raises(ConfigError):
        Camera(fx=10, fy=10, cx=1, cy=1, position=np.zeros(3),
               orientation=np.eye(3), width=4, height=48)


# ---------------------------------------------------------------------------
# full warp properties
# ---------------------------------------------------------------------------

def test_warp_repair_pipeline_masks_monotone():
    src = make_camera(fx=90.0)
    dst = make_camera(fx=90.0, x=0.05)
    rng = np.random.default_rng(9)
    depth = np.full((src.height, src.width), 6.0)
    depth[10:30, 20:40] = 2.0
    frame = RgbdFrame(color=rng.uniform(0, 1, (src.height, src.width, 3)),
                      depth=depth, mask=np.ones((src.height, src.width), dtype=bool))
    mpi = project_to_planes(frame, src, dst, k=4, depth_range=(1.0, 10.0))
    repaired = repair_planes(mpi)
    for before, after in zip(mpi.planes, repaired.planes):
        removed_then_filled = after.mask
        # depth stays positive wherever the repaired mask is set
        assert (after.depth[removed_then_filled] > 0).all()
    blended = blend_planes(repaired)
    union = np.zeros_like(blended.frame.mask)
    for p in repaired.planes:
        union |= p.mask
    assert np.array_equal(blended.frame.mask, union)
