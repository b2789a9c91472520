"""Stereoscopic and multi-view spatial video synthesis from monocular RGB-D
input via multi-plane warping and frame-matrix denoising inpainting."""

__version__ = "0.1.0"

from .config import PipelineConfig, load_config
from .diffusion import (BoxCodec, DenoiserOracle, DenoiserOutput, ExactOracle,
                        LatentCodec, NoiseSchedule, SamplingPlan, box_codec,
                        exact_oracle, forward_noise, make_schedule,
                        posterior_step, predict_z0, resample_noise,
                        smoothing_oracle)
from .geometry import (Camera, CameraRig, MultiPlaneImage, RgbdFrame, WarpResult,
                       blend_planes, build_rig, fill_cracks, outpaint_padding,
                       project_to_planes, remove_isolated, warp_coordinates,
                       warp_frame)
from .matrix import (FrameMatrix, boundary_reinjection, build_frame_matrix,
                     denoise_frame_matrix, denoise_sequence,
                     denoise_single_video, extract_stereo, poisson_blend)
from .pipeline import run_pipeline, verify_output
from .rng import KeyedRng
from .synthetic import SyntheticScene, default_scene, make_synthetic
