"""Final deliverables: stereo packaging and the posed multi-view dataset.

The spatial dataset layout consumed by downstream 4D optimizers:

    cameras.json             shared intrinsics + per-view 3x4 extrinsics
                             (row-major, meters) and explicit positions
    frames/v{view:03}/t{time:03}.png   8-bit RGB
    depth/t{time:03}_v000.pfm          reference-view depth as float32 PFM
                                       (t000 always; all times behind a flag)
    manifest.json            counts, per-file 64-bit checksums, schema v1

The manifest is written last as the commit marker; re-reading an exported
directory reproduces the dataset bit-exactly and any tampered file is
reported by path.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ExportError
from .fileio import read_pfm, read_png, write_pfm, write_png
from .geometry import Camera, CameraRig

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Stereo packaging
# ---------------------------------------------------------------------------

def compose_side_by_side(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Horizontal concatenation per frame, left view on the left."""
    if left.shape != right.shape:
        raise ValueError(f"left/right shapes differ: {left.shape} vs {right.shape}")
    return np.concatenate([left, right], axis=-2)


def compose_anaglyph(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Red channel from the left view, green and blue from the right."""
    if left.shape != right.shape:
        raise ValueError(f"left/right shapes differ: {left.shape} vs {right.shape}")
    out = right.copy()
    out[..., 0] = left[..., 0]
    return out


# ---------------------------------------------------------------------------
# Spatial dataset
# ---------------------------------------------------------------------------

@dataclass
class SpatialDataset:
    frames: np.ndarray                  # (S+1, V+1, H, W, 3) uint8
    depth0: np.ndarray                  # (H, W) float32, reference view at t=0
    cameras: CameraRig
    timestamps: np.ndarray              # (S+1,) strictly increasing in [0, 1]
    reference_depths: np.ndarray | None = None   # (S+1, H, W) float32, optional

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.uint8)
        self.depth0 = np.asarray(self.depth0, dtype=np.float32)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        s1, v1 = self.frames.shape[:2]
        if len(self.cameras.cameras) != v1:
            raise ValueError(f"{v1} view columns but {len(self.cameras.cameras)} cameras")
        if self.timestamps.shape != (s1,) or np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be one strictly increasing value per frame")
        if self.depth0.shape != self.frames.shape[2:4]:
            raise ValueError("depth0 resolution does not match frames")


def uniform_timestamps(n_frames: int) -> np.ndarray:
    """Normalized times 0..1, uniform over the clip."""
    if n_frames == 1:
        return np.zeros(1)
    return np.arange(n_frames, dtype=np.float64) / (n_frames - 1)


def _file_checksum(path: Path) -> str:
    h = hashlib.blake2b(digest_size=8)
    h.update(path.read_bytes())
    return h.hexdigest()


def _camera_record(cam: Camera) -> dict:
    t = -cam.orientation @ cam.position
    extr = np.concatenate([cam.orientation, t[:, None]], axis=1)
    return {
        "extrinsics_3x4": [float(x) for x in extr.reshape(-1)],
        "position": [float(x) for x in cam.position],
        "orientation": [float(x) for x in cam.orientation.reshape(-1)],
    }


def export_spatial(dataset: SpatialDataset, out_dir: Path | str) -> dict:
    """Write the posed multi-view dataset; returns the manifest."""
    root = Path(out_dir)
    try:
        (root / "depth").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ExportError(f"cannot create export directory {root}: {e}") from e

    s1, v1, height, width = dataset.frames.shape[:4]
    cam0 = dataset.cameras.cameras[0]
    cameras = {
        "width": width, "height": height,
        "fx": cam0.fx, "fy": cam0.fy, "cx": cam0.cx, "cy": cam0.cy,
        "mode": dataset.cameras.mode,
        "views": [_camera_record(c) for c in dataset.cameras.cameras],
        "timestamps": [float(t) for t in dataset.timestamps],
    }
    (root / "cameras.json").write_text(json.dumps(cameras, indent=1))

    files = ["cameras.json"]
    for v in range(v1):
        vdir = root / "frames" / f"v{v:03d}"
        vdir.mkdir(parents=True, exist_ok=True)
        for s in range(s1):
            rel = f"frames/v{v:03d}/t{s:03d}.png"
            write_png(root / rel, dataset.frames[s, v])
            files.append(rel)

    write_pfm(root / "depth/t000_v000.pfm", dataset.depth0)
    files.append("depth/t000_v000.pfm")
    if dataset.reference_depths is not None:
        for s in range(1, s1):
            rel = f"depth/t{s:03d}_v000.pfm"
            write_pfm(root / rel, dataset.reference_depths[s])
            files.append(rel)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "views": v1,
        "times": s1,
        "frame_count": s1 * v1,
        "width": width,
        "height": height,
        "checksums": {rel: _file_checksum(root / rel) for rel in files},
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


def verify_spatial(out_dir: Path | str) -> list[str]:
    """Re-checksum an exported dataset; returns a list of problems (empty = ok)."""
    root = Path(out_dir)
    issues = []
    mpath = root / "manifest.json"
    if not mpath.exists():
        return [f"missing manifest: {mpath}"]
    manifest = json.loads(mpath.read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        issues.append(f"unsupported schema_version {manifest.get('schema_version')}")
    checks = manifest.get("checksums", {})
    if len(checks) < manifest.get("frame_count", 0):
        issues.append("manifest lists fewer files than frame_count")
    for rel, expect in checks.items():
        p = root / rel
        if not p.exists():
            issues.append(f"missing file: {rel}")
        elif _file_checksum(p) != expect:
            issues.append(f"checksum mismatch: {rel}")
    return issues


def import_spatial(out_dir: Path | str) -> SpatialDataset:
    """Read back an exported dataset, failing on any checksum mismatch."""
    root = Path(out_dir)
    issues = verify_spatial(root)
    if issues:
        raise ExportError("; ".join(issues))
    manifest = json.loads((root / "manifest.json").read_text())
    cameras = json.loads((root / "cameras.json").read_text())
    s1, v1 = manifest["times"], manifest["views"]

    frames = np.stack([
        np.stack([read_png(root / f"frames/v{v:03d}/t{s:03d}.png") for v in range(v1)])
        for s in range(s1)])
    depth0 = read_pfm(root / "depth/t000_v000.pfm")
    ref_depths = None
    if (root / "depth/t001_v000.pfm").exists():
        ref_depths = np.stack([read_pfm(root / f"depth/t{s:03d}_v000.pfm")
                               for s in range(s1)])

    cams = [Camera(fx=cameras["fx"], fy=cameras["fy"], cx=cameras["cx"], cy=cameras["cy"],
                   position=np.array(rec["position"]),
                   orientation=np.array(rec["orientation"]).reshape(3, 3),
                   width=cameras["width"], height=cameras["height"])
            for rec in cameras["views"]]
    rig = CameraRig(mode=cameras.get("mode", "spatial"), cameras=cams)
    return SpatialDataset(frames=frames, depth0=depth0, cameras=rig,
                          timestamps=np.array(cameras["timestamps"]),
                          reference_depths=ref_depths)
