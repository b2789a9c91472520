"""Depth normalization and flow-aligned temporal smoothing."""

import numpy as np
import pytest

from framematrix.depthproc import (DepthClip, FlowField, normalize_depth,
                                   temporal_smooth)
from framematrix.errors import EmptyInputError


def zero_flows(n, h, w):
    return [FlowField(flow=np.zeros((h, w, 2)), valid=np.ones((h, w), dtype=bool))
            for _ in range(n)]


# ---------------------------------------------------------------------------
# normalize_depth
# ---------------------------------------------------------------------------

def test_normalize_affine_endpoints_and_midpoint():
    raw = [np.array([[2.0, 20.0], [11.0, 2.0]])]
    clip = normalize_depth(raw, 1.0, 10.0)
    assert clip.depths[0][0, 0] == pytest.approx(1.0)
    assert clip.depths[0][0, 1] == pytest.approx(10.0)
    assert clip.depths[0][1, 0] == pytest.approx(5.5)
    assert clip.range == (1.0, 10.0)


def test_normalize_identity_when_already_in_range():
    raw = [np.array([[1.0, 10.0], [4.0, 7.0]])]
    clip = normalize_depth(raw, 1.0, 10.0)
    assert np.allclose(clip.depths[0], raw[0])


def test_normalize_constant_maps_to_midpoint():
    raw = [np.full((3, 3), 5.0), np.full((3, 3), 5.0)]
    clip = normalize_depth(raw, 1.0, 10.0)
    for d in clip.depths:
        assert np.allclose(d, 5.5)


def test_normalize_uses_global_not_per_frame_extrema():
    raw = [np.full((2, 2), 2.0), np.full((2, 2), 20.0)]
    clip = normalize_depth(raw, 1.0, 10.0)
    assert np.allclose(clip.depths[0], 1.0)
    assert np.allclose(clip.depths[1], 10.0)


def test_normalize_rejects_empty_and_nonpositive():
    with pytest.raises(EmptyInputError):
        normalize_depth([], 1.0, 10.0)
    with pytest.raises(ValueError):
        normalize_depth([np.array([[0.0, 1.0]])], 1.0, 10.0)
    with pytest.raises(ValueError):
        normalize_depth([np.ones((2, 2))], 10.0, 1.0)


# ---------------------------------------------------------------------------
# temporal_smooth
# ---------------------------------------------------------------------------

def test_static_scene_perturbation_shrinks_by_center_weight():
    # closed-form oracle: renormalized Gaussian weights over a full window,
    # radius 2, sigma 1 -> center weight 1 / (1 + 2e^-0.5 + 2e^-2) ~ 0.4026
    h, w, n = 6, 8, 9
    base = 5.0
    depths = [np.full((h, w), base) for _ in range(n)]
    depths[4] = depths[4].copy()
    depths[4][3, 3] += 1.0
    clip = DepthClip(depths=depths, range=(1.0, 10.0))
    out = temporal_smooth(clip, zero_flows(n - 1, h, w), radius=2, sigma=1.0)
    weights = np.exp(-np.arange(-2, 3) ** 2 / 2.0)
    w0 = weights[2] / weights.sum()
    assert w0 == pytest.approx(0.4026, abs=2e-4)
    assert out.depths[4][3, 3] == pytest.approx(base + w0 * 1.0, abs=1e-12)
    # neighbors in time see the perturbation with the offset-1 weight
    w1 = weights[1] / weights.sum()
    assert out.depths[3][3, 3] == pytest.approx(base + w1 * 1.0, abs=1e-12)


def test_identical_frames_unchanged_under_any_flow():
    h, w, n = 5, 7, 6
    rng = np.random.default_rng(0)
    depths = [np.full((h, w), 4.2) for _ in range(n)]
    flows = [FlowField(flow=rng.uniform(-2, 2, (h, w, 2)),
                       valid=np.ones((h, w), dtype=bool)) for _ in range(n - 1)]
    clip = DepthClip(depths=depths, range=(1.0, 10.0))
    out = temporal_smooth(clip, flows, radius=2, sigma=1.0)
    for d in out.depths:
        assert np.allclose(d, 4.2)


def test_window_truncation_renormalizes():
    # frame 0 only has forward samples; equal values stay fixed, and a
    # perturbed frame-1 value enters with weight w1/(w0+w1+w2)
    h, w, n = 4, 4, 5
    depths = [np.full((h, w), 3.0) for _ in range(n)]
    depths[1] = depths[1].copy()
    depths[1][2, 2] = 4.0
    clip = DepthClip(depths=depths, range=(1.0, 10.0))
    out = temporal_smooth(clip, zero_flows(n - 1, h, w), radius=2, sigma=1.0)
    g = np.exp(-np.arange(0, 3) ** 2 / 2.0)      # offsets 0, 1, 2 for frame 0
    expect = 3.0 + (g[1] / g.sum()) * 1.0
    assert out.depths[0][2, 2] == pytest.approx(expect, abs=1e-12)


def test_flow_alignment_follows_moving_object():
    # depth pattern translates 1 px right per frame; exact flow keeps each
    # trajectory constant, so smoothing leaves the moving edge intact
    h, w, n = 6, 12, 5
    depths = []
    for s in range(n):
        d = np.full((h, w), 8.0)
        d[:, 2 + s:5 + s] = 2.0
        depths.append(d)
    flow = np.zeros((h, w, 2))
    flow[..., 0] = 1.0
    flows = [FlowField(flow=flow.copy(), valid=np.ones((h, w), dtype=bool))
             for _ in range(n - 1)]
    clip = DepthClip(depths=depths, range=(1.0, 10.0))
    out = temporal_smooth(clip, flows, radius=2, sigma=1.0)
    # interior frame, away from image borders: pattern preserved exactly
    assert np.allclose(out.depths[2][:, 4:7], 2.0)
    assert np.allclose(out.depths[2][:, 8:10], 8.0)


def test_invalid_flow_samples_dropped():
    h, w, n = 4, 4, 3
    depths = [np.full((h, w), 5.0), np.full((h, w), 9.0), np.full((h, w), 5.0)]
    bad = FlowField(flow=np.zeros((h, w, 2)), valid=np.zeros((h, w), dtype=bool))
    clip = DepthClip(depths=depths, range=(1.0, 10.0))
    out = temporal_smooth(clip, [bad, bad], radius=1, sigma=1.0)
    # frame 0 cannot reach frame 1 (invalid flow): stays at 5.0
    assert np.allclose(out.depths[0], 5.0)
    # frame 1 keeps only its own sample
    assert np.allclose(out.depths[1], 9.0)


def test_output_clamped_to_range():
    h, w = 4, 4
    depths = [np.full((h, w), 1.0), np.full((h, w), 1.0)]
    clip = DepthClip(depths=depths, range=(2.0, 10.0))   # values below range
    out = temporal_smooth(clip, zero_flows(1, h, w), radius=1, sigma=1.0)
    assert np.all(out.depths[0] >= 2.0)


def test_variance_reduction_on_static_scene():
    # i.i.d. per-frame noise on a static scene: temporal variance strictly drops
    h, w, n = 40, 40, 9
    rng = np.random.default_rng(3)
    depths = [5.0 + 0.3 * rng.standard_normal((h, w)) for s in range(n)]
    clip = DepthClip(depths=depths, range=(1.0, 10.0))
    out = temporal_smooth(clip, zero_flows(n - 1, h, w), radius=2, sigma=1.0)
    mid = slice(2, n - 2)
    before = np.stack(depths[mid])
    after = np.stack(out.depths[mid])
    var_before = before.var(axis=0).mean()
    var_after = after.var(axis=0).mean()
    assert var_after < 0.5 * var_before


def test_smoothed_values_stay_within_window_hull():
    h, w, n = 8, 8, 7
    rng = np.random.default_rng(4)
    depths = [rng.uniform(2.0, 9.0, (h, w)) for _ in range(n)]
    clip = DepthClip(depths=depths, range=(1.0, 10.0))
    out = temporal_smooth(clip, zero_flows(n - 1, h, w), radius=2, sigma=1.0)
    for s in range(2, n - 2):
        window = np.stack(depths[s - 2:s + 3])
        assert np.all(out.depths[s] >= window.min(axis=0) - 1e-12)
        assert np.all(out.depths[s] <= window.max(axis=0) + 1e-12)
