"""Frame-matrix denoising inpainting.

The frame matrix is an (S+1) x (V+1) grid of frames: rows share a timestamp
(a camera sweep), columns share a viewpoint (a temporal video). Disoccluded
regions left by warping are filled by alternately denoising the columns
(temporal direction) and rows (spatial direction) with a resampling step in
between, compositing each cell's known region from its re-noised clean
latent at every step. An optional once-per-step re-injection re-encodes a
composite of warped pixels and the current denoised prediction to purge
zero-contaminated latent cells along disocclusion boundaries.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .diffusion import (DenoiserOracle, DenoiserOutput, LatentCodec, NoiseSchedule,
                        SamplingPlan, forward_noise, posterior_step, predict_z0,
                        resample_noise)
from .errors import OracleContractError
from .geometry import CameraRig, WarpResult
from .rng import KeyedRng

Hook = Callable[[dict], None]


# ---------------------------------------------------------------------------
# Frame matrix construction
# ---------------------------------------------------------------------------

@dataclass
class FrameMatrix:
    latents: np.ndarray         # (S+1, V+1, h, w, C) current noisy latents
    known_latents: np.ndarray   # (S+1, V+1, h, w, C) encoded warped frames
    latent_masks: np.ndarray    # (S+1, V+1, h, w) bool, True = fully known cell
    image_known: np.ndarray     # (S+1, V+1, H, W, 3) warped colors, zero where unknown
    image_masks: np.ndarray     # (S+1, V+1, H, W) bool
    rig: CameraRig | None
    condition: int
    # immutable bases for re-injection: the original masked encoding and the
    # per-cell fraction of known pixels (None: derive from the codec)
    base_known: np.ndarray | None = None
    known_fraction: np.ndarray | None = None

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.latents.shape[0], self.latents.shape[1]


def pool_mask(image_mask: np.ndarray, factor: int) -> np.ndarray:
    """Conservative mask downsample: a latent cell is known only if every
    covered image pixel is known (AND over each factor x factor block)."""
    h, w = image_mask.shape
    if h % factor or w % factor:
        raise ValueError(f"mask {h}x{w} not divisible by {factor}")
    blocks = np.asarray(image_mask, dtype=bool).reshape(h // factor, factor,
                                                        w // factor, factor)
    return blocks.all(axis=(1, 3))


def mask_fraction(image_mask: np.ndarray, factor: int) -> np.ndarray:
    """Per-cell fraction of known pixels (block mean of the binary mask)."""
    from .diffusion import _block_mean
    a = np.asarray(image_mask, dtype=np.float64)
    return _block_mean(_block_mean(a, factor, a.ndim - 2), factor, a.ndim - 1)


def build_frame_matrix(warps: Sequence[Sequence[WarpResult]], codec: LatentCodec,
                       condition: int, rng: KeyedRng,
                       rig: CameraRig | None = None) -> FrameMatrix:
    """Encode a grid of warped frames into latent space with pooled masks
    and draw the initial noise latents from the keyed generator."""
    n_rows = len(warps)
    if n_rows == 0 or any(len(row) != len(warps[0]) for row in warps):
        raise ValueError("warp grid must be rectangular and non-empty")
    n_cols = len(warps[0])
    h_img, w_img = warps[0][0].frame.shape
    f = codec.downsample

    for s in range(n_rows):
        if not warps[s][0].disocclusion.all():
            raise ValueError(f"column 0 must be fully known (reference view), row {s} is not")

    lat_shape = codec.encode(warps[0][0].frame.color).shape
    latents = np.empty((n_rows, n_cols) + lat_shape, dtype=np.float64)
    known = np.empty_like(latents)
    masks = np.empty((n_rows, n_cols) + lat_shape[:2], dtype=bool)
    fractions = np.empty((n_rows, n_cols) + lat_shape[:2], dtype=np.float64)
    image_known = np.empty((n_rows, n_cols, h_img, w_img, 3), dtype=np.float32)
    image_masks = np.empty((n_rows, n_cols, h_img, w_img), dtype=bool)

    for s in range(n_rows):
        for v in range(n_cols):
            wr = warps[s][v]
            if wr.frame.shape != (h_img, w_img):
                raise ValueError(f"warp grid cell ({s},{v}) has mismatched shape")
            image_known[s, v] = wr.frame.color
            image_masks[s, v] = wr.disocclusion
            # encode from the stored (float32) pixels so re-encoding the
            # image record reproduces these latents bit for bit
            known[s, v] = codec.encode(image_known[s, v])
            masks[s, v] = pool_mask(wr.disocclusion, f)
            fractions[s, v] = mask_fraction(wr.disocclusion, f)
            latents[s, v] = rng.normal(lat_shape, "init", s, v)

    return FrameMatrix(latents=latents, known_latents=known, latent_masks=masks,
                       image_known=image_known, image_masks=image_masks,
                       rig=rig, condition=condition,
                       base_known=known.copy(), known_fraction=fractions)


# ---------------------------------------------------------------------------
# Sequence denoising
# ---------------------------------------------------------------------------

def denoise_sequence(seq: np.ndarray, known: np.ndarray, mask: np.ndarray, t: int,
                     oracle: DenoiserOracle, sched: NoiseSchedule,
                     eps: np.ndarray, xi: np.ndarray, *, condition: int = 0,
                     direction: str = "temporal",
                     cells: Sequence[tuple[int, int]] | None = None) -> np.ndarray:
    """One denoising step of a row or column sequence.

    Known cells become the clean latents re-noised to level t-1 (using the
    supplied eps draw); unknown cells take the posterior step from level t
    (using xi); the two are composited by the latent mask.
    """
    seq = np.asarray(seq)
    outs = oracle(list(seq), condition, t, direction, cells)
    if len(outs) != len(seq):
        raise OracleContractError(f"oracle returned {len(outs)} outputs for {len(seq)} frames")
    for frame, out in zip(seq, outs):
        if out.epsilon.shape != frame.shape or out.variance.shape != frame.shape:
            raise OracleContractError(
                f"oracle output shape {out.epsilon.shape} != latent shape {frame.shape}")
    stacked = DenoiserOutput(epsilon=np.stack([o.epsilon for o in outs]),
                             variance=np.stack([o.variance for o in outs]))
    z_known = forward_noise(known, t - 1, eps, sched)
    z_unknown = posterior_step(seq, stacked, t, sched, xi)
    return np.where(np.asarray(mask, dtype=bool)[..., None], z_known, z_unknown)


def _reinject_column(latents_col: np.ndarray, image_known_col: np.ndarray,
                     image_masks_col: np.ndarray, t: int, oracle: DenoiserOracle,
                     codec: LatentCodec, sched: NoiseSchedule,
                     cells: list[tuple[int, int]], condition: int,
                     base_known: np.ndarray | None = None,
                     known_fraction: np.ndarray | None = None) -> np.ndarray:
    """Updated known latents for one column: predict the clean latents from
    the current state, decode, composite with warped pixels in image space,
    and re-encode.

    For block-linear codecs the image-space round trip reduces exactly to a
    per-cell blend of the original masked encoding with the prediction,
    weighted by the cell's unknown-pixel fraction; the literal path runs for
    arbitrary codecs.
    """
    outs = oracle(list(latents_col), condition, t, "temporal", cells)
    stacked = DenoiserOutput(epsilon=np.stack([o.epsilon for o in outs]),
                             variance=np.stack([o.variance for o in outs]))
    z0_tilde = predict_z0(latents_col, stacked, t, sched)
    if (getattr(codec, "block_linear", False)
            and base_known is not None and known_fraction is not None):
        return base_known + (1.0 - known_fraction[..., None]) * z0_tilde
    x0 = codec.decode(z0_tilde)
    composite = np.where(image_masks_col[..., None], image_known_col, x0)
    return codec.encode(composite)


def boundary_reinjection(fm: FrameMatrix, t: int, oracle: DenoiserOracle,
                         codec: LatentCodec, sched: NoiseSchedule,
                         views: Sequence[int] | None = None) -> None:
    """Refresh ``known_latents`` in place from the current denoised estimate.

    The warped images and their masks are never modified; only the encoded
    known latents are replaced, which purges the zeros that masked encoding
    smeared across disocclusion boundaries.
    """
    n_rows, n_cols = fm.grid_shape
    for v in (range(n_cols) if views is None else views):
        cells = [(s, v) for s in range(n_rows)]
        base = None if fm.base_known is None else fm.base_known[:, v]
        frac = None if fm.known_fraction is None else fm.known_fraction[:, v]
        fm.known_latents[:, v] = _reinject_column(
            fm.latents[:, v], fm.image_known[:, v], fm.image_masks[:, v],
            t, oracle, codec, sched, cells, fm.condition,
            base_known=base, known_fraction=frac)


# ---------------------------------------------------------------------------
# Full-matrix loop
# ---------------------------------------------------------------------------

def _map_tasks(fn, args_list, workers: int):
    if workers <= 1 or len(args_list) <= 1:
        return [fn(*args) for args in args_list]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda a: fn(*a), args_list))


def denoise_frame_matrix(fm: FrameMatrix, plan: SamplingPlan, oracle: DenoiserOracle,
                         codec: LatentCodec, sched: NoiseSchedule, reinject: bool,
                         rng: KeyedRng, hook: Hook | None = None,
                         workers: int = 1,
                         reinject_every_resample: bool = False) -> np.ndarray:
    """Run the alternating temporal/spatial denoising loop and decode.

    For each visited timestep (descending by the plan's jump), passes
    n = 1..N alternate: odd n denoises every column, even n denoises every
    row, with one step of noise re-added between consecutive passes. During
    the refinement phase a view restriction, when set, freezes all other
    columns. Re-injection, when enabled, runs once per outer step after the
    step's final resample (or before every pass when
    ``reinject_every_resample`` is set). Returns the decoded
    (S+1, V+1, H, W, 3) grid.
    """
    plan.validate_for(sched)
    n_rows, n_cols = fm.grid_shape
    cond = fm.condition

    def denoise_column(v: int, t: int, n: int) -> tuple[int, np.ndarray]:
        cells = [(s, v) for s in range(n_rows)]
        eps = np.stack([rng.normal(fm.latents.shape[2:], "known", t, n, s, v) for s in range(n_rows)])
        xi = np.stack([rng.normal(fm.latents.shape[2:], "xi", t, n, s, v) for s in range(n_rows)])
        out = denoise_sequence(fm.latents[:, v], fm.known_latents[:, v],
                               fm.latent_masks[:, v], t, oracle, sched, eps, xi,
                               condition=cond, direction="temporal", cells=cells)
        return v, out

    def denoise_row(s: int, t: int, n: int) -> tuple[int, np.ndarray]:
        cells = [(s, v) for v in range(n_cols)]
        eps = np.stack([rng.normal(fm.latents.shape[2:], "known", t, n, s, v) for v in range(n_cols)])
        xi = np.stack([rng.normal(fm.latents.shape[2:], "xi", t, n, s, v) for v in range(n_cols)])
        out = denoise_sequence(fm.latents[s], fm.known_latents[s],
                               fm.latent_masks[s], t, oracle, sched, eps, xi,
                               condition=cond, direction="spatial", cells=cells)
        return s, out

    for t in plan.timesteps():
        step = plan.step_index(t)
        n_res = plan.n_resamples(step)
        restricted = plan.restricted_views(step)
        active = list(range(n_cols)) if restricted is None else \
            [v for v in restricted if 0 <= v < n_cols]

        for n in range(1, n_res + 1):
            if reinject and (reinject_every_resample or n == n_res):
                boundary_reinjection(fm, t, oracle, codec, sched,
                                     views=None if restricted is None else active)

            before = fm.latents.copy() if hook else None
            if n % 2 == 1:
                results = _map_tasks(denoise_column, [(v, t, n) for v in active], workers)
                for v, out in results:
                    fm.latents[:, v] = out
                direction = "temporal"
            else:
                if n_cols > 1:
                    results = _map_tasks(denoise_row, [(s, t, n) for s in range(n_rows)], workers)
                    for s, out in results:
                        if restricted is None:
                            fm.latents[s] = out
                        else:
                            for v in active:
                                fm.latents[s, v] = out[v]
                direction = "spatial"

            if hook:
                hook({"t": t, "n": n, "direction": direction, "step_index": step,
                      "resamples": n_res,
                      "max_abs_update": float(np.max(np.abs(fm.latents - before)))})

            if n < n_res and t > 1:
                for v in active:
                    for s in range(n_rows):
                        xi = rng.normal(fm.latents.shape[2:], "resample", t, n, s, v)
                        fm.latents[s, v] = resample_noise(fm.latents[s, v], t - 1, sched, xi)

    decoded = np.empty(fm.latents.shape[:2] + fm.image_known.shape[2:], dtype=np.float32)
    for s in range(n_rows):
        for v in range(n_cols):
            decoded[s, v] = codec.decode(fm.latents[s, v])
    return decoded


def denoise_single_video(latents: np.ndarray, known_latents: np.ndarray,
                         latent_masks: np.ndarray, image_known: np.ndarray,
                         image_masks: np.ndarray, plan: SamplingPlan,
                         oracle: DenoiserOracle, codec: LatentCodec,
                         sched: NoiseSchedule, reinject: bool, rng: KeyedRng,
                         condition: int = 0,
                         reinject_every_resample: bool = False) -> np.ndarray:
    """Dedicated single-video inpainting path (one temporal sequence).

    Structurally the degenerate V = 0 case of the matrix loop: spatial
    passes over a single view are the identity, so only temporal passes and
    the interleaved resampling run. Draw keys use view index 0, making the
    result bit-identical to a V = 0 matrix run under the same seed.
    Returns the decoded (S+1, H, W, 3) video.
    """
    plan.validate_for(sched)
    n_frames = latents.shape[0]
    cells = [(s, 0) for s in range(n_frames)]
    latents = latents.copy()
    known_latents = known_latents.copy()
    base_known = known_latents.copy()
    known_frac = mask_fraction(np.asarray(image_masks, dtype=bool), codec.downsample)

    for t in plan.timesteps():
        n_res = plan.n_resamples(plan.step_index(t))
        for n in range(1, n_res + 1):
            if reinject and (reinject_every_resample or n == n_res):
                known_latents = _reinject_column(latents, image_known, image_masks,
                                                 t, oracle, codec, sched, cells, condition,
                                                 base_known=base_known,
                                                 known_fraction=known_frac)
            if n % 2 == 1:
                eps = np.stack([rng.normal(latents.shape[1:], "known", t, n, s, 0)
                                for s in range(n_frames)])
                xi = np.stack([rng.normal(latents.shape[1:], "xi", t, n, s, 0)
                               for s in range(n_frames)])
                latents = denoise_sequence(latents, known_latents, latent_masks, t,
                                           oracle, sched, eps, xi, condition=condition,
                                           direction="temporal", cells=cells)
            if n < n_res and t > 1:
                for s in range(n_frames):
                    xi = rng.normal(latents.shape[1:], "resample", t, n, s, 0)
                    latents[s] = resample_noise(latents[s], t - 1, sched, xi)

    return np.stack([codec.decode(latents[s]) for s in range(n_frames)]).astype(np.float32)


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

def extract_stereo(frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Leftmost and rightmost view columns of a decoded grid."""
    if frames.ndim < 3 or frames.shape[1] < 2:
        raise ValueError("stereo extraction needs at least two view columns")
    return frames[:, 0], frames[:, -1]


# ---------------------------------------------------------------------------
# Poisson blending
# ---------------------------------------------------------------------------

def _neighbor_sum(a: np.ndarray) -> np.ndarray:
    p = np.pad(a, ((1, 1), (1, 1), (0, 0)))
    return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]


def _solve_component(g: np.ndarray, u: np.ndarray, sm: np.ndarray,
                     deg: np.ndarray, tol: float, max_iters: int,
                     omega: float | None) -> tuple[int, float]:
    """Red-black over-relaxed Gauss-Seidel on one region; updates u in place."""
    bh, bw = sm.shape
    degc = deg[..., None]
    b = degc * g - _neighbor_sum(g)                 # guidance divergence
    if omega is None:
        # optimal factor from the Jacobi spectral radius of the bounding box
        rho = 0.5 * (np.cos(np.pi / (bh + 1)) + np.cos(np.pi / (bw + 1)))
        omega = 2.0 / (1.0 + np.sqrt(1.0 - rho * rho))
    yy, xx = np.mgrid[0:bh, 0:bw]
    red = sm & (((yy + xx) % 2) == 0)
    black = sm & (((yy + xx) % 2) == 1)

    iterations = 0
    while True:
        res = b + _neighbor_sum(u) - degc * u
        residual = float(np.max(np.abs(res[sm])))
        if residual < tol or iterations >= max_iters:
            return iterations, residual
        for parity in (red, black):
            gs = (b + _neighbor_sum(u)) / degc
            u[parity] += omega * (gs[parity] - u[parity])
        iterations += 1


def poisson_blend(generated: np.ndarray, warped: np.ndarray, mask: np.ndarray,
                  tol: float = 1e-5, max_iters: int = 10000,
                  omega: float | None = None, stats: dict | None = None) -> np.ndarray:
    """Gradient-domain blend of generated content into a warped frame.

    Known pixels (mask == True) are copied from ``warped`` verbatim. Unknown
    pixels solve the discrete Poisson equation with guidance gradients taken
    from ``generated`` and Dirichlet boundary values from the known pixels,
    by red-black Gauss-Seidel sweeps (over-relaxed by ``omega``, default the
    standard optimal factor per region) until the max residual drops below
    ``tol`` or ``max_iters`` is reached. Connected components are decoupled
    by their Dirichlet boundaries and solved independently on tight bounding
    boxes. Components with no known boundary cannot be anchored and fall
    back to the generated values; they are counted in ``stats`` when a dict
    is supplied.
    """
    mask = np.asarray(mask, dtype=bool)
    unknown = ~mask
    out = np.array(warped, copy=True)
    if stats is not None:
        stats.update({"iterations": 0, "residual": 0.0,
                      "fallback_components": 0, "fallback_pixels": 0})
    if not unknown.any():
        return out

    h, w = mask.shape
    plus = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    labels, n_comp = ndimage.label(unknown, structure=plus)
    known_adjacent = ndimage.binary_dilation(mask, structure=plus)
    anchored = np.zeros(n_comp + 1, dtype=bool)
    anchored[np.unique(labels[known_adjacent & unknown])] = True
    anchored[0] = True

    orphan_mask = unknown & ~anchored[labels]
    if orphan_mask.any():
        out[orphan_mask] = generated[orphan_mask]
        if stats is not None:
            stats["fallback_components"] = int((~anchored[1:]).sum())
            stats["fallback_pixels"] = int(orphan_mask.sum())

    gen64 = np.asarray(generated, dtype=np.float64)
    out64 = np.asarray(out, dtype=np.float64)
    total_iters = 0
    worst = 0.0
    for comp, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None or not anchored[comp]:
            continue
        y0 = max(sl[0].start - 1, 0)
        y1 = min(sl[0].stop + 1, h)
        x0 = max(sl[1].start - 1, 0)
        x1 = min(sl[1].stop + 1, w)
        sm = labels[y0:y1, x0:x1] == comp
        g = gen64[y0:y1, x0:x1]
        u = out64[y0:y1, x0:x1].copy()
        u[sm] = g[sm]                               # initial guess
        deg = np.full(sm.shape, 4.0)
        if y0 == 0:
            deg[0] -= 1
        if y1 == h:
            deg[-1] -= 1
        if x0 == 0:
            deg[:, 0] -= 1
        if x1 == w:
            deg[:, -1] -= 1
        iters, residual = _solve_component(g, u, sm, deg, tol, max_iters, omega)
        total_iters += iters
        worst = max(worst, residual)
        region = out[y0:y1, x0:x1]
        region[sm] = u[sm].astype(out.dtype, copy=False)

    if stats is not None:
        stats["iterations"] = total_iters
        stats["residual"] = worst
    return out
