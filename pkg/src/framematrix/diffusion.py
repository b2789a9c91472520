"""DDPM noise-schedule math, sampling updates, and pluggable denoiser/codec.

The denoiser and the latent image codec are interfaces so the whole sampling
stack can run against deterministic test implementations: an exact oracle
that knows the clean target latents, a smoothing oracle that pulls latents
toward their local spatial mean, and a block-average codec that mimics the
boundary contamination an 8x-downsampling autoencoder introduces around
masked (zeroed) regions.

This module also defines the binary wire format used to call an external
denoiser over a byte stream (see ``bridge`` for the socket client/server).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from scipy import ndimage

from .errors import CodecError, ConfigError, OracleContractError, ProtocolError

Cell = tuple[int, int]


# ---------------------------------------------------------------------------
# Noise schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances and their running product, 1-indexed by timestep.

    ``beta[0]`` and ``alpha_bar[0]`` are sentinels (0 and 1) so that
    ``alpha_bar[t] == alpha_bar[t-1] * (1 - beta[t])`` holds for t = 1..T and
    noising to "timestep 0" is the identity.
    """

    T: int
    beta: np.ndarray        # length T+1, beta[0] == 0
    alpha_bar: np.ndarray   # length T+1, alpha_bar[0] == 1


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear variance ramp from beta_start to beta_end over T steps."""
    if T < 1:
        raise ConfigError(f"schedule needs T >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    beta = np.zeros(T + 1, dtype=np.float64)
    beta[1:] = np.linspace(beta_start, beta_end, T)
    alpha_bar = np.ones(T + 1, dtype=np.float64)
    alpha_bar[1:] = np.cumprod(1.0 - beta[1:])
    return NoiseSchedule(T=T, beta=beta, alpha_bar=alpha_bar)


def _check_t(t: int, sched: NoiseSchedule, low: int) -> None:
    if not (low <= t <= sched.T):
        raise ValueError(f"timestep {t} outside [{low}, {sched.T}]")


def forward_noise(z0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Noise a clean latent to level t: sqrt(ab_t) z0 + sqrt(1 - ab_t) eps.

    t = 0 is legal and returns z0 (identity), which the compositing loop
    relies on at its final step.
    """
    _check_t(t, sched, low=0)
    ab = sched.alpha_bar[t]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def posterior_step(zt: np.ndarray, out: "DenoiserOutput", t: int,
                   sched: NoiseSchedule, xi: np.ndarray) -> np.ndarray:
    """One reverse step from level t given a noise prediction.

    Returns the posterior mean plus sqrt(variance) * xi. At t = 1 the
    variance term is forced to zero so the final step is deterministic.
    """
    _check_t(t, sched, low=1)
    if np.any(out.variance < 0):
        raise OracleContractError("denoiser returned negative variance")
    beta_t = sched.beta[t]
    ab_t = sched.alpha_bar[t]
    mean = (zt - (beta_t / np.sqrt(1.0 - ab_t)) * out.epsilon) / np.sqrt(1.0 - beta_t)
    if t == 1:
        return mean
    return mean + np.sqrt(out.variance) * xi


def predict_z0(zt: np.ndarray, out: "DenoiserOutput", t: int, sched: NoiseSchedule) -> np.ndarray:
    """Clean-latent estimate implied by a noise prediction at level t."""
    _check_t(t, sched, low=1)
    ab_t = sched.alpha_bar[t]
    return (zt - np.sqrt(1.0 - ab_t) * out.epsilon) / np.sqrt(ab_t)


def resample_noise(z_prev: np.ndarray, t_minus_1: int, sched: NoiseSchedule,
                   xi: np.ndarray) -> np.ndarray:
    """Re-add one step of noise: sqrt(1 - beta_{t-1}) z + sqrt(beta_{t-1}) xi."""
    _check_t(t_minus_1, sched, low=1)
    beta = sched.beta[t_minus_1]
    return np.sqrt(1.0 - beta) * z_prev + np.sqrt(beta) * xi


# ---------------------------------------------------------------------------
# Denoiser oracle interface and built-in implementations
# ---------------------------------------------------------------------------

@dataclass
class DenoiserOutput:
    epsilon: np.ndarray
    variance: np.ndarray


@runtime_checkable
class DenoiserOracle(Protocol):
    """Per-sequence noise predictor.

    Implementations must be deterministic given (frames, condition, t,
    direction) and their own construction-time state, and must return one
    output per input frame with matching shapes. ``cells`` carries each
    frame's (time, view) grid coordinate; oracles that do not need grid
    alignment (e.g. a remote model) may ignore it.
    """

    def __call__(self, frames: Sequence[np.ndarray], condition: int, t: int,
                 direction: str, cells: Sequence[Cell] | None = None,
                 ) -> list[DenoiserOutput]: ...


class ExactOracle:
    """Denoiser that knows the true clean latents.

    Returns the algebraically exact noise prediction
    (z_t - sqrt(ab_t) z0*) / sqrt(1 - ab_t) with zero variance, so any
    sampling loop using it converges onto z0* and the whole pipeline can be
    verified to machine precision.
    """

    def __init__(self, z0_star: np.ndarray, sched: NoiseSchedule):
        # z0_star: (S+1, V+1, h, w, C) grid of clean latents
        if z0_star.ndim != 5:
            raise OracleContractError(f"z0_star must be a 5-d grid, got shape {z0_star.shape}")
        self.z0_star = np.asarray(z0_star, dtype=np.float64)
        self.sched = sched

    def __call__(self, frames, condition, t, direction, cells=None):
        if cells is None or len(cells) != len(frames):
            raise OracleContractError("exact oracle needs one (s, v) cell per frame")
        ab = self.sched.alpha_bar[t]
        outs = []
        for frame, (s, v) in zip(frames, cells):
            target = self.z0_star[s, v]
            if frame.shape != target.shape:
                raise OracleContractError(
                    f"latent shape {frame.shape} != reference shape {target.shape} at cell ({s},{v})")
            eps = (frame - np.sqrt(ab) * target) / np.sqrt(1.0 - ab)
            outs.append(DenoiserOutput(epsilon=eps, variance=np.zeros_like(eps)))
        return outs


def exact_oracle(z0_star: np.ndarray, sched: NoiseSchedule) -> ExactOracle:
    return ExactOracle(z0_star, sched)


class SmoothingOracle:
    """Ground-truth-free denoiser that pulls latents toward their 3x3 mean.

    Exists to exercise the non-exact oracle code paths; the implied clean
    latent for each frame is its local spatial average.
    """

    def __init__(self, sched: NoiseSchedule):
        self.sched = sched

    def __call__(self, frames, condition, t, direction, cells=None):
        ab = self.sched.alpha_bar[t]
        outs = []
        for frame in frames:
            local = ndimage.uniform_filter(frame, size=(3, 3, 1), mode="nearest")
            eps = (frame - np.sqrt(ab) * local) / np.sqrt(1.0 - ab)
            outs.append(DenoiserOutput(epsilon=eps, variance=np.zeros_like(eps)))
        return outs


def smoothing_oracle(sched: NoiseSchedule) -> SmoothingOracle:
    return SmoothingOracle(sched)


# ---------------------------------------------------------------------------
# Latent codec interface and block-average implementation
# ---------------------------------------------------------------------------

@runtime_checkable
class LatentCodec(Protocol):
    """Deterministic image <-> latent transform with a fixed downsample factor."""

    downsample: int

    def encode(self, image: np.ndarray) -> np.ndarray: ...

    def decode(self, latent: np.ndarray) -> np.ndarray: ...


def _block_mean(a: np.ndarray, f: int, axis: int) -> np.ndarray:
    # pairwise averaging of adjacent runs: bit-exact on constant blocks for
    # power-of-two factors (0.5 * (x + x) == x), so encode(decode(z)) == z
    a = np.moveaxis(a, axis, 0)
    n = f
    while n > 1 and n % 2 == 0:
        a = 0.5 * (a[0::2] + a[1::2])
        n //= 2
    if n > 1:
        a = a.reshape((a.shape[0] // n, n) + a.shape[1:]).mean(axis=1)
    return np.moveaxis(a, 0, axis)


class BoxCodec:
    """f x f block-average encoder with nearest-neighbor decoder.

    encode(decode(z)) is the identity (exactly, for power-of-two factors);
    decode(encode(x)) equals x exactly on block-constant images. A latent
    cell whose block straddles a zeroed disocclusion region averages the
    zeros in, reproducing the boundary feature contamination that
    re-injection is designed to purge.
    """

    # decode is block-constant and encode a block mean, so compositing a
    # decoded prediction into an image and re-encoding reduces to a per-cell
    # linear blend; consumers may exploit this
    block_linear = True

    def __init__(self, downsample: int = 8):
        if downsample < 1:
            raise CodecError(f"downsample factor must be >= 1, got {downsample}")
        self.downsample = downsample

    def latent_shape(self, h: int, w: int) -> tuple[int, int, int]:
        f = self.downsample
        if h % f or w % f:
            raise CodecError(f"image {h}x{w} not divisible by block size {f}")
        return (h // f, w // f, 3)

    def encode(self, image: np.ndarray) -> np.ndarray:
        # accepts (..., H, W, C); leading dims are treated as a batch
        h, w = image.shape[-3], image.shape[-2]
        f = self.downsample
        if h % f or w % f:
            raise CodecError(f"image {h}x{w} not divisible by block size {f}")
        a = np.asarray(image, dtype=np.float64)
        a = _block_mean(a, f, a.ndim - 3)
        return _block_mean(a, f, a.ndim - 2)

    def decode(self, latent: np.ndarray) -> np.ndarray:
        f = self.downsample
        return np.repeat(np.repeat(latent, f, axis=-3), f, axis=-2)


def box_codec(downsample: int = 8) -> BoxCodec:
    return BoxCodec(downsample)


# ---------------------------------------------------------------------------
# Sampling plan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingPlan:
    """Outer-step schedule: which timesteps are visited and how often each
    is resampled.

    Visited timesteps are 1 + (i-1)*jump for step index i = outer_steps..1,
    so the final visited timestep is always 1 and the last update is
    deterministic. Steps with index <= phase_boundary form the refinement
    phase: they use the second resample count and, if
    ``refinement_view_restriction`` is set, only those view columns keep
    being denoised (all others stay frozen).
    """

    outer_steps: int
    jump: int
    resample_counts: tuple[int, int] = (8, 4)
    phase_boundary: int = 25
    refinement_view_restriction: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.outer_steps < 1 or self.jump < 1:
            raise ConfigError("outer_steps and jump must be >= 1")
        if any(n < 1 for n in self.resample_counts):
            raise ConfigError(f"resample counts must be >= 1, got {self.resample_counts}")

    def validate_for(self, sched: NoiseSchedule) -> None:
        if self.outer_steps * self.jump > sched.T:
            raise ConfigError(
                f"plan covers {self.outer_steps * self.jump} timesteps but schedule has T={sched.T}")

    def timesteps(self) -> list[int]:
        return [1 + (i - 1) * self.jump for i in range(self.outer_steps, 0, -1)]

    def step_index(self, t: int) -> int:
        return (t - 1) // self.jump + 1

    def n_resamples(self, step_index: int) -> int:
        coarse, refine = self.resample_counts
        return coarse if step_index > self.phase_boundary else refine

    def restricted_views(self, step_index: int) -> tuple[int, ...] | None:
        if step_index <= self.phase_boundary:
            return self.refinement_view_restriction
        return None


# ---------------------------------------------------------------------------
# Denoiser bridge wire format
# ---------------------------------------------------------------------------
#
# Length-prefixed binary frames over a byte stream: each message is a u32
# little-endian payload length followed by the payload.
#
#   request payload:  magic "FMDN", version u16 = 1, type u8 = 1,
#                     direction u8 (0 = temporal, 1 = spatial), timestep u32,
#                     condition-id u32, frame count u16, then per frame
#                     h u16, w u16, c u16 and h*w*c little-endian f32.
#   response payload: magic, version, type u8 = 2, then per frame an epsilon
#                     blob and a variance blob, each with the same
#                     h u16, w u16, c u16 header and f32 payload.
#
# All integers are little-endian.

MAGIC = b"FMDN"
PROTOCOL_VERSION = 1
MSG_REQUEST = 1
MSG_RESPONSE = 2
_DIRECTION_CODE = {"temporal": 0, "spatial": 1}
_DIRECTION_NAME = {0: "temporal", 1: "spatial"}


def _pack_blob(arr: np.ndarray) -> bytes:
    a = np.ascontiguousarray(arr, dtype="<f4")
    if a.ndim != 3:
        raise ProtocolError(f"tensor blobs must be h x w x c, got shape {arr.shape}")
    h, w, c = a.shape
    if max(h, w, c) > 0xFFFF:
        raise ProtocolError(f"dimension too large for u16 header: {a.shape}")
    return struct.pack("<HHH", h, w, c) + a.tobytes()


class _Reader:
    def __init__(self, payload: bytes):
        self.buf = payload
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ProtocolError("truncated message")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def exhausted(self) -> bool:
        return self.pos == len(self.buf)


def _read_blob(r: _Reader) -> np.ndarray:
    h, w, c = r.unpack("<HHH")
    raw = r.take(4 * h * w * c)
    return np.frombuffer(raw, dtype="<f4").reshape(h, w, c).copy()


def _check_header(r: _Reader, expect_type: int) -> None:
    magic = r.take(4)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = r.unpack("<H")
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    (mtype,) = r.unpack("<B")
    if mtype != expect_type:
        raise ProtocolError(f"unexpected message type {mtype}, expected {expect_type}")


def pack_request(direction: str, timestep: int, condition: int,
                 frames: Sequence[np.ndarray]) -> bytes:
    if direction not in _DIRECTION_CODE:
        raise ProtocolError(f"unknown direction {direction!r}")
    if len(frames) > 0xFFFF:
        raise ProtocolError("too many frames for u16 count")
    head = MAGIC + struct.pack("<HBBIIH", PROTOCOL_VERSION, MSG_REQUEST,
                               _DIRECTION_CODE[direction], timestep, condition,
                               len(frames))
    payload = head + b"".join(_pack_blob(f) for f in frames)
    return struct.pack("<I", len(payload)) + payload


def unpack_request(payload: bytes) -> tuple[str, int, int, list[np.ndarray]]:
    r = _Reader(payload)
    _check_header(r, MSG_REQUEST)
    dcode, timestep, condition, count = r.unpack("<BIIH")
    if dcode not in _DIRECTION_NAME:
        raise ProtocolError(f"unknown direction code {dcode}")
    frames = [_read_blob(r) for _ in range(count)]
    if not r.exhausted():
        raise ProtocolError("trailing bytes after request frames")
    return _DIRECTION_NAME[dcode], timestep, condition, frames


def pack_response(outputs: Sequence[DenoiserOutput]) -> bytes:
    head = MAGIC + struct.pack("<HB", PROTOCOL_VERSION, MSG_RESPONSE)
    body = b"".join(_pack_blob(o.epsilon) + _pack_blob(o.variance) for o in outputs)
    payload = head + body
    return struct.pack("<I", len(payload)) + payload


def unpack_response(payload: bytes) -> list[DenoiserOutput]:
    r = _Reader(payload)
    _check_header(r, MSG_RESPONSE)
    outputs = []
    while not r.exhausted():
        eps = _read_blob(r)
        var = _read_blob(r)
        if eps.shape != var.shape:
            raise ProtocolError(
                f"epsilon/variance shape mismatch: {eps.shape} vs {var.shape}")
        outputs.append(DenoiserOutput(epsilon=eps, variance=var))
    return outputs
