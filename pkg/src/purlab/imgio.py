"""Image file I/O: 16-bit PNG for lab artifacts, folder ingestion.

Images on disk are 16-bit RGB PNG; in memory they are float64 (3,H,W)
in [-1,1].
"""

from __future__ import annotations

import warnings
from pathlib import Path

import cv2
import numpy as np

__all__ = ["write_png16", "read_image", "ingest_images"]


def write_png16(path, img: np.ndarray) -> None:
    """Write a [-1,1] (3,H,W) image as 16-bit RGB PNG."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected (3,H,W) image, got {arr.shape}")
    scaled = np.clip((arr.transpose(1, 2, 0) + 1.0) / 2.0, 0.0, 1.0) * 65535.0
    bgr = np.round(scaled).astype(np.uint16)[:, :, ::-1]
    if not cv2.imwrite(str(path), bgr):
        raise IOError(f"could not write {path}")


def read_image(path) -> np.ndarray:
    """Read any PNG/JPEG into a float64 (3,H,W) array in [-1,1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"could not decode {path}")
    if raw.ndim == 2:
        raw = raw[:, :, None].repeat(3, axis=2)
    if raw.shape[2] == 4:
        raw = raw[:, :, :3]
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    rgb = raw[:, :, ::-1].astype(np.float64) / scale
    return rgb.transpose(2, 0, 1) * 2.0 - 1.0


def _center_crop_square(img: np.ndarray) -> np.ndarray:
    _, h, w = img.shape
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    return img[:, top:top + side, left:left + side]


def ingest_images(directory, size: int = 32) -> np.ndarray:
    """Decode, center-crop to square and bilinear-resize every image in
    a directory; non-images are skipped with a warning."""
    root = Path(directory)
    if not root.is_dir():
        raise ValueError(f"{directory} is not a directory")
    images = []
    for path in sorted(root.iterdir()):
        if not path.is_file():
            continue
        try:
            img = read_image(path)
        except IOError:
            warnings.warn(f"skipping non-image file {path.name}")
            continue
        img = _center_crop_square(img)
        if img.shape[1] != size:
            hwc = img.transpose(1, 2, 0)
            hwc = cv2.resize(hwc, (size, size), interpolation=cv2.INTER_LINEAR)
            img = hwc.transpose(2, 0, 1)
        images.append(np.clip(img, -1.0, 1.0))
    if not images:
        raise ValueError(f"no decodable images in {directory}")
    return np.stack(images)
