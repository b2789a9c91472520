"""Pipeline configuration: every knob validated at load time.

Defaults follow the reference operating point: 0.07 m interocular baseline,
working depth range (1, 10), 6 stereo / 16 spatial cameras, 4 warp planes,
a 1000-timestep schedule sampled in 50 steps of 20 with 8 resamples per
step dropping to 4 at step 25.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, Field, field_validator, model_validator

from .diffusion import NoiseSchedule, SamplingPlan, make_schedule
from .errors import ConfigError


class PipelineConfig(BaseModel):
    mode: Literal["stereo", "spatial"] = "stereo"
    stereo_views: int = Field(6, ge=2)
    spatial_views: int = Field(16, ge=3)
    baseline: float = Field(0.07, ge=0)
    radius: float = Field(0.07, gt=0)

    depth_near: float = Field(1.0, gt=0)
    depth_far: float = Field(10.0, gt=0)
    planes: int = Field(4, ge=1)
    isolated_threshold: float = Field(0.5, gt=0, lt=1)
    crack_threshold: float = Field(0.2, gt=0, lt=1)
    crack_sigma: float = Field(0.8, gt=0)

    smooth_depth: bool = True
    smooth_radius: int = Field(2, ge=1)
    smooth_sigma: float = Field(1.0, gt=0)

    timesteps: int = Field(1000, ge=1)
    beta_start: float = Field(1e-4, gt=0, lt=1)
    beta_end: float = Field(0.02, gt=0, lt=1)
    steps: int = Field(50, ge=1)
    jump: int = Field(20, ge=1)
    resamples_coarse: int = Field(8, ge=1)
    resamples_refine: int = Field(4, ge=1)
    phase_boundary: int = Field(25, ge=0)
    refine_views: Optional[list[int]] = None

    focal: float = Field(500.0, gt=0)
    principal_x: Optional[float] = None     # default: image center
    principal_y: Optional[float] = None

    codec: Literal["box"] = "box"
    codec_downsample: int = Field(8, ge=1)
    oracle: Literal["exact", "smoothing", "bridge"] = "smoothing"
    bridge_address: Optional[str] = None
    condition_id: int = Field(0, ge=0)

    outpaint: bool = False
    reinject: bool = True
    reinject_every_resample: bool = False
    poisson_tol: float = Field(1e-5, gt=0)
    poisson_iters: int = Field(10000, ge=1)

    seed: int = 0
    workers: int = Field(1, ge=1)
    export_all_depths: bool = False

    @field_validator("beta_end")
    @classmethod
    def _beta_order(cls, v, info):
        if "beta_start" in info.data and v < info.data["beta_start"]:
            raise ValueError("beta_end must be >= beta_start")
        return v

    @model_validator(mode="after")
    def _cross_checks(self):
        if self.depth_far <= self.depth_near:
            raise ValueError("depth_far must exceed depth_near")
        if self.steps * self.jump > self.timesteps:
            raise ValueError("steps * jump must not exceed timesteps")
        if self.oracle == "bridge" and not self.bridge_address:
            raise ValueError("bridge oracle requires bridge_address")
        return self

    # -- derived objects ----------------------------------------------------

    @property
    def rig_views(self) -> int:
        return self.stereo_views if self.mode == "stereo" else self.spatial_views

    @property
    def rig_extent(self) -> float:
        return self.baseline if self.mode == "stereo" else self.radius

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.timesteps, self.beta_start, self.beta_end)

    def plan(self) -> SamplingPlan:
        restriction = tuple(self.refine_views) if self.refine_views else None
        return SamplingPlan(outer_steps=self.steps, jump=self.jump,
                            resample_counts=(self.resamples_coarse, self.resamples_refine),
                            phase_boundary=self.phase_boundary,
                            refinement_view_restriction=restriction)

    def config_hash(self) -> str:
        payload = json.dumps(self.model_dump(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def load_config(path: Path | str | None = None,
                overrides: dict[str, str] | None = None,
                seed_env: str | None = None) -> PipelineConfig:
    """Build a config from an optional YAML key-value file plus overrides.

    Override values are parsed as YAML scalars so ``--set planes=4`` or
    ``--set refine_views=[0,5]`` coerce to the right types. ``seed_env``
    (the FM_SEED environment value, when set) wins over both.
    """
    data: dict = {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text())
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must be a key-value mapping")
        data.update(loaded)
    for key, raw in (overrides or {}).items():
        data[key] = yaml.safe_load(raw) if isinstance(raw, str) else raw
    if seed_env is not None:
        data["seed"] = int(seed_env)
    try:
        return PipelineConfig(**data)
    except Exception as e:
        raise ConfigError(str(e)) from e
