"""End-to-end pipeline: ingest, depth prep, optional outpainting, warping,
frame-matrix denoising, Poisson blending, and export.

Input directory layout (all lossless, inspectable files):

    frames/t###.png              reference video, 8-bit RGB
    depth/t###.pfm               per-frame depth, float32 meters
    flow_fwd/t###_{u,v}.pfm      forward optical flow frame i -> i+1
    flow_fwd/t###_valid.png      optional flow validity mask (255 = usable)
    scene.json                   optional procedural scene (enables the
                                 exact oracle)

Every run writes ``report.json`` (seed, config hash, per-stage timings,
invariant summary) plus a checksummed manifest, so ``verify_output`` can
re-check an output directory after the fact.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from .bridge import bridge_oracle
from .config import PipelineConfig
from .depthproc import DepthClip, FlowField, normalize_depth, temporal_smooth
from .diffusion import (DenoiserOracle, LatentCodec, NoiseSchedule, box_codec,
                        exact_oracle, smoothing_oracle)
from .errors import ConfigError, StageError
from .export import (SpatialDataset, compose_anaglyph, compose_side_by_side,
                     export_spatial, uniform_timestamps, verify_spatial)
from .fileio import read_pfm, read_png, to_uint8, write_png
from .geometry import (Camera, RgbdFrame, WarpResult, build_rig,
                       outpaint_padding, warp_frame)
from .matrix import (build_frame_matrix, denoise_frame_matrix,
                     denoise_single_video, extract_stereo, poisson_blend,
                     pool_mask)
from .rng import KeyedRng
from .synthetic import encode_truth_latents, load_scene


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def _sorted_files(directory: Path, pattern: str) -> list[Path]:
    return sorted(directory.glob(pattern))


def ingest(input_dir: Path | str, need_flows: bool,
           ) -> tuple[np.ndarray, list[np.ndarray], list[FlowField] | None]:
    """Load reference frames, depths, and (when required) forward flows."""
    root = Path(input_dir)
    frame_files = _sorted_files(root / "frames", "t*.png")
    if not frame_files:
        raise ConfigError(f"no input frames found under {root / 'frames'}")
    colors = np.stack([read_png(p).astype(np.float32) / 255.0 for p in frame_files])
    n = len(frame_files)

    depths = []
    for s in range(n):
        p = root / "depth" / f"t{s:03d}.pfm"
        if not p.exists():
            raise ConfigError(f"missing depth file: {p}")
        depths.append(read_pfm(p).astype(np.float64))

    flows = None
    if need_flows:
        flows = []
        for s in range(n - 1):
            pu = root / "flow_fwd" / f"t{s:03d}_u.pfm"
            pv = root / "flow_fwd" / f"t{s:03d}_v.pfm"
            for p in (pu, pv):
                if not p.exists():
                    raise ConfigError(f"missing flow file: {p}")
            flow = np.stack([read_pfm(pu), read_pfm(pv)], axis=-1).astype(np.float64)
            vfile = root / "flow_fwd" / f"t{s:03d}_valid.png"
            valid = (read_png(vfile) >= 128) if vfile.exists() \
                else np.ones(flow.shape[:2], dtype=bool)
            flows.append(FlowField(flow=flow, valid=valid))
    return colors, depths, flows


# ---------------------------------------------------------------------------
# Oracle construction
# ---------------------------------------------------------------------------

def make_oracle(config: PipelineConfig, sched: NoiseSchedule, codec: LatentCodec,
                input_dir: Path | str, cameras: list[Camera]) -> DenoiserOracle:
    """Oracle per the config: exact (needs scene.json), smoothing, or bridge."""
    if config.oracle == "exact":
        scene_file = Path(input_dir) / "scene.json"
        if not scene_file.exists():
            raise ConfigError(
                "exact oracle needs a procedural scene description "
                f"(missing {scene_file})")
        scene = load_scene(input_dir)
        z0_star = encode_truth_latents(scene, cameras, codec)
        return exact_oracle(z0_star, sched)
    if config.oracle == "smoothing":
        return smoothing_oracle(sched)
    return bridge_oracle(config.bridge_address)


# ---------------------------------------------------------------------------
# Outpainting
# ---------------------------------------------------------------------------

def outpaint_then_inpaint(colors: np.ndarray, clip: DepthClip, pad: int,
                          template: Camera, config: PipelineConfig,
                          codec: LatentCodec, sched: NoiseSchedule,
                          input_dir: Path | str, rng: KeyedRng,
                          ) -> tuple[np.ndarray, DepthClip, Camera]:
    """Widen the reference clip by ``pad`` columns per side and fill the new
    bands by single-video denoising inpainting.

    Band depth is mirrored from the nearest known columns so subsequent
    warping has usable geometry. Returns the padded clip and the widened
    camera (principal point shifted by ``pad``).
    """
    if pad == 0:
        return colors, clip, template
    n, h, w0 = colors.shape[:3]
    padded_cam = Camera(template.fx, template.fy, template.cx + pad, template.cy,
                        template.position, template.orientation,
                        w0 + 2 * pad, h)

    colors_p = np.pad(colors, ((0, 0), (0, 0), (pad, pad), (0, 0)))
    depths_p = [np.pad(d, ((0, 0), (pad, pad)), mode="symmetric") for d in clip.depths]
    known = np.zeros((h, w0 + 2 * pad), dtype=bool)
    known[:, pad:pad + w0] = True

    oracle = make_oracle(config, sched, codec, input_dir, [padded_cam])
    f = codec.downsample
    lat_shape = codec.encode(np.zeros((h, w0 + 2 * pad, 3))).shape
    latent_mask = pool_mask(known, f)
    band_rng = rng.child("outpaint")

    known_latents = np.stack([codec.encode(np.where(known[..., None], colors_p[s], 0.0))
                              for s in range(n)])
    latents = np.stack([band_rng.normal(lat_shape, "init", s, 0) for s in range(n)])
    masks = np.broadcast_to(latent_mask, (n,) + latent_mask.shape)
    image_known = colors_p.astype(np.float32) * known[None, :, :, None]
    image_masks = np.broadcast_to(known, (n,) + known.shape)

    decoded = denoise_single_video(latents, known_latents, masks, image_known,
                                   image_masks, config.plan(), oracle, codec,
                                   sched, config.reinject, band_rng,
                                   condition=config.condition_id,
                                   reinject_every_resample=config.reinject_every_resample)
    out = np.empty_like(colors_p)
    for s in range(n):
        out[s] = poisson_blend(decoded[s], image_known[s], known,
                               tol=config.poisson_tol, max_iters=config.poisson_iters)
    return out, DepthClip(depths=depths_p, range=clip.range), padded_cam


# ---------------------------------------------------------------------------
# Full run
# ---------------------------------------------------------------------------

def _write_frames(root: Path, rel: str, frames: np.ndarray, files: dict) -> None:
    d = root / rel
    d.mkdir(parents=True, exist_ok=True)
    for s in range(frames.shape[0]):
        name = f"{rel}/t{s:03d}.png"
        write_png(root / name, frames[s])
        files[name] = None


def run_pipeline(config: PipelineConfig, input_dir: Path | str,
                 out_dir: Path | str) -> dict:
    """Execute all stages and write outputs plus report.json; returns the report."""
    t_start = time.perf_counter()
    timings: dict[str, float] = {}
    invariants: dict[str, bool] = {}
    root_out = Path(out_dir)
    root_out.mkdir(parents=True, exist_ok=True)

    def clock(stage: str, t0: float) -> float:
        t1 = time.perf_counter()
        timings[stage] = round(t1 - t0, 4)
        return t1

    # ingest + depth preparation
    t0 = time.perf_counter()
    colors, raw_depths, flows = ingest(input_dir, need_flows=config.smooth_depth)
    n_frames, height, width0 = colors.shape[:3]
    clip = normalize_depth(raw_depths, config.depth_near, config.depth_far)
    if config.smooth_depth:
        clip = temporal_smooth(clip, flows, radius=config.smooth_radius,
                               sigma=config.smooth_sigma)
    t0 = clock("ingest_depth", t0)

    sched = config.schedule()
    plan = config.plan()
    codec = box_codec(config.codec_downsample)
    rng = KeyedRng(config.seed)

    cx = config.principal_x if config.principal_x is not None else (width0 - 1) / 2
    cy = config.principal_y if config.principal_y is not None else (height - 1) / 2
    template = Camera(fx=config.focal, fy=config.focal, cx=cx, cy=cy,
                      position=np.zeros(3), orientation=np.eye(3),
                      width=width0, height=height)

    # optional outpainting (padding rounded up to the codec block size)
    pad = 0
    if config.outpaint:
        p_exact = outpaint_padding(config.focal, config.rig_extent, config.depth_near)
        f = config.codec_downsample
        pad = -(-p_exact // f) * f
        colors, clip, template = outpaint_then_inpaint(
            colors, clip, pad, template, config, codec, sched, input_dir, rng)
    t0 = clock("outpaint", t0)

    # warp the reference into every rig viewpoint
    rig = build_rig(config.mode, config.rig_views, config.rig_extent, template)
    ref_frames = [RgbdFrame(color=colors[s].astype(np.float64), depth=clip.depths[s],
                            mask=np.ones((height, template.width), dtype=bool))
                  for s in range(n_frames)]
    warps: list[list[WarpResult]] = []
    mask_monotone = True
    for s in range(n_frames):
        row = []
        for v, cam in enumerate(rig.cameras):
            try:
                if np.array_equal(cam.position, rig.cameras[0].position):
                    wr = WarpResult(frame=ref_frames[s],
                                    disocclusion=ref_frames[s].mask.copy())
                else:
                    wr = warp_frame(ref_frames[s], template, cam, k=config.planes,
                                    depth_range=(config.depth_near, config.depth_far),
                                    isolated_threshold=config.isolated_threshold,
                                    crack_sigma=config.crack_sigma,
                                    crack_threshold=config.crack_threshold)
            except Exception as e:
                raise StageError("warp", str(e), frame=s, view=v) from e
            row.append(wr)
        warps.append(row)
    t0 = clock("warp", t0)

    # frame-matrix denoising
    oracle = make_oracle(config, sched, codec, input_dir, rig.cameras)
    fm = build_frame_matrix(warps, codec, config.condition_id, rng, rig=rig)
    del warps
    pass_log: list[tuple[int, int, str]] = []
    decoded = denoise_frame_matrix(fm, plan, oracle, codec, sched, config.reinject,
                                   rng, hook=lambda e: pass_log.append(
                                       (e["t"], e["n"], e["direction"])),
                                   workers=config.workers,
                                   reinject_every_resample=config.reinject_every_resample)
    t0 = clock("denoise", t0)

    # image-space blending
    out_frames = np.empty(decoded.shape[:2] + (height, width0, 3), dtype=np.uint8)
    out_masks = np.empty(decoded.shape[:2] + (height, width0), dtype=bool)
    known_exact = True
    poisson_fallbacks = 0
    sl = slice(pad, pad + width0)
    for s in range(n_frames):
        for v in range(decoded.shape[1]):
            try:
                stats: dict = {}
                blended = poisson_blend(decoded[s, v], fm.image_known[s, v],
                                        fm.image_masks[s, v], tol=config.poisson_tol,
                                        max_iters=config.poisson_iters, stats=stats)
            except Exception as e:
                raise StageError("poisson", str(e), frame=s, view=v) from e
            poisson_fallbacks += stats.get("fallback_components", 0)
            m = fm.image_masks[s, v]
            if np.any(blended[m] != fm.image_known[s, v][m]):
                known_exact = False
            out_frames[s, v] = to_uint8(blended[:, sl])
            out_masks[s, v] = m[:, sl]
    invariants["known_pixels_copied_exactly"] = known_exact
    invariants["column0_fully_known"] = bool(fm.latent_masks[:, 0].all())
    expected_passes = sum(plan.n_resamples(plan.step_index(t)) for t in plan.timesteps())
    invariants["alternation_pass_count_matches_plan"] = len(pass_log) == expected_passes
    t0 = clock("blend", t0)

    # export
    files: dict[str, str | None] = {}
    if config.mode == "stereo":
        left, right = extract_stereo(out_frames)
        _write_frames(root_out, "left", left, files)
        _write_frames(root_out, "right", right, files)
        _write_frames(root_out, "sbs", compose_side_by_side(left, right), files)
        _write_frames(root_out, "anaglyph", compose_anaglyph(left, right), files)
        _write_frames(root_out, "masks/left", out_masks[:, 0].astype(np.uint8) * 255, files)
        _write_frames(root_out, "masks/right", out_masks[:, -1].astype(np.uint8) * 255, files)
        from .export import _file_checksum
        manifest = {"schema_version": 1, "mode": "stereo",
                    "times": n_frames, "views": out_frames.shape[1],
                    "checksums": {rel: _file_checksum(root_out / rel) for rel in files}}
        (root_out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    else:
        export_rig = build_rig(config.mode, config.rig_views, config.rig_extent,
                               Camera(config.focal, config.focal, cx, cy,
                                      np.zeros(3), np.eye(3), width0, height))
        depth0 = np.asarray(clip.depths[0], dtype=np.float32)[:, sl]
        ref_depths = None
        if config.export_all_depths:
            ref_depths = np.stack([np.asarray(d, dtype=np.float32)[:, sl]
                                   for d in clip.depths])
        dataset = SpatialDataset(frames=out_frames, depth0=depth0, cameras=export_rig,
                                 timestamps=uniform_timestamps(n_frames),
                                 reference_depths=ref_depths)
        export_spatial(dataset, root_out / "dataset")
        for v in range(out_frames.shape[1]):
            _write_frames(root_out, f"masks/v{v:03d}",
                          out_masks[:, v].astype(np.uint8) * 255, files)
    t0 = clock("export", t0)

    report = {
        "mode": config.mode,
        "seed": config.seed,
        "config": config.model_dump(),
        "config_hash": config.config_hash(),
        "frames": n_frames,
        "views": int(out_frames.shape[1]),
        "resolution": [height, width0],
        "outpaint_pad": pad,
        "poisson_fallback_components": poisson_fallbacks,
        "invariants": invariants,
        "timings": timings,
        "total_seconds": round(time.perf_counter() - t_start, 4),
    }
    (root_out / "report.json").write_text(json.dumps(report, indent=1))
    return report


def verify_output(out_dir: Path | str) -> list[str]:
    """Re-run integrity checks on a finished output directory."""
    root = Path(out_dir)
    issues: list[str] = []
    report_file = root / "report.json"
    if not report_file.exists():
        return [f"missing report: {report_file}"]
    report = json.loads(report_file.read_text())
    for name, ok in report.get("invariants", {}).items():
        if not ok:
            issues.append(f"invariant failed during run: {name}")

    if (root / "dataset").exists():
        issues.extend(verify_spatial(root / "dataset"))
    if (root / "manifest.json").exists():
        manifest = json.loads((root / "manifest.json").read_text())
        from .export import _file_checksum
        for rel, expect in manifest.get("checksums", {}).items():
            p = root / rel
            if not p.exists():
                issues.append(f"missing file: {rel}")
            elif _file_checksum(p) != expect:
                issues.append(f"checksum mismatch: {rel}")
    return issues
