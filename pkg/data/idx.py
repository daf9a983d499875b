"""
IDX ingestion (the MNIST file layout).

    images: >u4 magic 0x00000803 | >u4 count | >u4 rows | >u4 cols | u8 pixels, row-major
    labels: >u4 magic 0x00000801 | >u4 count | u8 labels
"""
import logging
import struct
from pathlib import Path

import numpy as np

from sgplab.exceptions import BadMagicError, CountMismatchError, TruncatedIdxError
from .datasets import ALL, Dataset

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def _read(path) -> bytes:
    path = Path(path)
    try:
        return path.read_bytes()
    except OSError as e:
        logger.error(f"Cannot read IDX file {path}: {str(e)}")
        raise


def _header(blob, path, magic, dims):
    size = 4 * (2 + dims)
    if len(blob) < size:
        raise TruncatedIdxError(path, f"header needs {size} bytes, file has {len(blob)}")
    fields = struct.unpack_from(f'>{2 + dims}I', blob)
    if fields[0] != magic:
        raise BadMagicError(path, f"bad magic 0x{fields[0]:08x}, expected 0x{magic:08x}")
    return fields[1:], size


def read_idx_images(path) -> np.ndarray:
    blob = _read(path)
    (count, rows, cols), offset = _header(blob, path, IMAGE_MAGIC, 2)
    expected = count * rows * cols
    if len(blob) - offset < expected:
        raise TruncatedIdxError(path, f"expected {expected} pixel bytes, found {len(blob) - offset}")
    return np.frombuffer(blob, dtype=np.uint8, count=expected, offset=offset).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    blob = _read(path)
    (count,), offset = _header(blob, path, LABEL_MAGIC, 0)
    if len(blob) - offset < count:
        raise TruncatedIdxError(path, f"expected {count} label bytes, found {len(blob) - offset}")
    return np.frombuffer(blob, dtype=np.uint8, count=count, offset=offset)


def load_idx(images_path, labels_path, num_classes=None) -> Dataset:
    """Pixels scaled to [0, 1], grayscale replicated to 3 channels"""
    pixels = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if pixels.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            labels_path, f"{labels.shape[0]} labels but {images_path} holds {pixels.shape[0]} images"
        )
    if num_classes is None:
        num_classes = max(2, int(labels.max()) + 1) if labels.size else 2
    images = np.repeat((pixels.astype(np.float32) / 255.0)[:, None], 3, axis=1)
    logger.info(f"Loaded {len(labels)} IDX examples from {images_path}")
    return Dataset(images, labels.astype(np.int64), num_classes, ALL, 0)


def write_idx(images, labels, images_path, labels_path):
    """Inverse of load_idx for uint8 (N, H, W) pixels"""
    pixels = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    Path(images_path).write_bytes(struct.pack('>4I', IMAGE_MAGIC, *pixels.shape) + pixels.tobytes())
    Path(labels_path).write_bytes(struct.pack('>2I', LABEL_MAGIC, len(labels)) + labels.tobytes())
