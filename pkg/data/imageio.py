"""Netpbm image files (P5 grayscale, P6 colour, maxval 255) through Pillow."""
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from sgplab.exceptions import InvalidArgumentError

logger = logging.getLogger(__name__)


def to_bytes(values) -> np.ndarray:
    """Linear [0, 1] -> 0..255 mapping with rounding"""
    return np.round(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255).astype(np.uint8)


def write_pgm(path, image) -> Path:
    """Write a 1×H×W (or H×W) image as binary PGM"""
    arr = np.asarray(image)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise InvalidArgumentError(f"PGM needs a single-channel image, got shape {np.asarray(image).shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_bytes(arr)).save(path, format='PPM')
    return path


def write_ppm(path, image) -> Path:
    """Write a C×H×W image as binary PPM; one channel is replicated, three are RGB"""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise InvalidArgumentError(f"PPM needs a 1×H×W or 3×H×W image, got shape {arr.shape}")
    if arr.shape[0] == 1:
        arr = np.repeat(arr, 3, axis=0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(to_bytes(arr).transpose(1, 2, 0))).save(path, format='PPM')
    return path


def read_image(path) -> np.ndarray:
    """Read a PGM or PPM file as a float32 C×H×W array in [0, 1]"""
    with Image.open(path) as img:
        if img.mode not in ('L', 'RGB'):
            raise InvalidArgumentError(f"{path}: unsupported image mode {img.mode}")
        arr = np.asarray(img, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        return arr[None]
    return np.ascontiguousarray(arr.transpose(2, 0, 1))
