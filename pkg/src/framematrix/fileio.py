"""Lossless image and depth/flow file formats: 8-bit PNG and float32 PFM."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize floats in [0, 1] to 8-bit; uint8 input passes through."""
    if img.dtype == np.uint8:
        return img
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_png(path: Path | str, img: np.ndarray) -> None:
    arr = to_uint8(img)
    mode = "RGB" if arr.ndim == 3 else "L"
    Image.fromarray(arr, mode=mode).save(str(path), format="PNG")


def read_png(path: Path | str) -> np.ndarray:
    with Image.open(str(path)) as im:
        return np.asarray(im)


def write_pfm(path: Path | str, data: np.ndarray) -> None:
    """Grayscale PFM, little-endian float32, rows stored bottom-to-top."""
    a = np.asarray(data, dtype="<f4")
    if a.ndim != 2:
        raise ValueError(f"PFM writer expects a 2-d array, got shape {a.shape}")
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(a[::-1]).tobytes())


def read_pfm(path: Path | str) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"Pf", b"PF"):
            raise ValueError(f"{path}: not a PFM file (header {header!r})")
        channels = 3 if header == b"PF" else 1
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        count = w * h * channels
        data = np.frombuffer(f.read(4 * count), dtype=dtype).astype(np.float32)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return data.reshape(shape)[::-1].copy()
