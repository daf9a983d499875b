"""
Bit-exact weight container.

    b"SGPMODL1" | u32 LE header length | UTF-8 JSON header | f32 LE payload | u32 LE CRC32(payload)

The header holds architecture_id, input_shape, num_classes and a tensor table
name -> [offset, element count] over the payload.
"""
import json
import logging
import struct
import zlib
from pathlib import Path

import numpy as np

from sgplab.exceptions import (
    ChecksumError,
    ModelFormatError,
    TruncatedModelError,
    UnsupportedArchitectureError,
    VersionMismatchError,
)
from .classifiers import ARCHITECTURE_IDS, Classifier

logger = logging.getLogger(__name__)

MAGIC = b'SGPMODL1'
MAGIC_FAMILY = b'SGPMODL'
FORMAT_VERSION = 1


def dumps_model(model: Classifier) -> bytes:
    header = {
        'format_version': FORMAT_VERSION,
        'architecture_id': model.architecture_id,
        'input_shape': list(model.input_shape),
        'num_classes': model.num_classes,
        'tensors': {name: [offset, count] for name, _, offset, count in model.layout},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')
    payload = model.params.astype('<f4').tobytes()
    return b''.join([
        MAGIC,
        struct.pack('<I', len(header_bytes)),
        header_bytes,
        payload,
        struct.pack('<I', zlib.crc32(payload)),
    ])


def _is_table_entry(entry) -> bool:
    """[offset, element count] with non-negative integers"""
    return (
        isinstance(entry, list) and len(entry) == 2
        and all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in entry)
    )


def loads_model(blob: bytes, source='<bytes>') -> Classifier:
    if len(blob) < len(MAGIC) + 4:
        raise TruncatedModelError(f"{source}: file too short for a model container")
    magic = blob[:len(MAGIC)]
    if magic != MAGIC:
        if magic.startswith(MAGIC_FAMILY):
            raise VersionMismatchError(f"{source}: container version {magic[-1:].decode(errors='replace')!r} is not supported")
        raise ModelFormatError(f"{source}: not a model container (magic {magic!r})")

    (header_len,) = struct.unpack_from('<I', blob, len(MAGIC))
    header_start = len(MAGIC) + 4
    header_end = header_start + header_len
    if header_end > len(blob):
        raise TruncatedModelError(f"{source}: header truncated")
    try:
        header = json.loads(blob[header_start:header_end].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"{source}: unreadable header: {e}") from e
    if not isinstance(header, dict):
        raise ModelFormatError(f"{source}: header is not a JSON object")

    if header.get('format_version') != FORMAT_VERSION:
        raise VersionMismatchError(f"{source}: header format_version {header.get('format_version')!r}")
    architecture_id = header.get('architecture_id')
    if architecture_id not in ARCHITECTURE_IDS:
        raise UnsupportedArchitectureError(f"{source}: unsupported architecture {architecture_id!r}")

    tensors = header.get('tensors')
    if not isinstance(tensors, dict) or not all(_is_table_entry(entry) for entry in tensors.values()):
        raise ModelFormatError(f"{source}: malformed tensor table {tensors!r}")

    count = sum(entry[1] for entry in tensors.values())
    payload_end = header_end + 4 * count
    if payload_end + 4 > len(blob):
        raise TruncatedModelError(f"{source}: payload truncated ({len(blob) - header_end} of {4 * count + 4} bytes)")
    payload = blob[header_end:payload_end]
    (crc,) = struct.unpack_from('<I', blob, payload_end)
    if zlib.crc32(payload) != crc:
        raise ChecksumError(f"{source}: payload CRC32 mismatch")

    try:
        model = Classifier(architecture_id, header.get('input_shape'), header.get('num_classes'))
    except (TypeError, ValueError) as e:
        raise ModelFormatError(f"{source}: bad input_shape or num_classes: {e}") from e
    expected = {name: [offset, n] for name, _, offset, n in model.layout}
    if expected != tensors:
        raise ModelFormatError(f"{source}: tensor table does not match {architecture_id}")
    model.params = np.frombuffer(payload, dtype='<f4').astype(np.float32)
    return model


def save_model(model: Classifier, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps_model(model))
    logger.info(f"Saved {model.architecture_id} ({model.parameter_count} params) to {path}")
    return path


def load_model(path) -> Classifier:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        logger.error(f"Cannot read model container {path}: {str(e)}")
        raise
    return loads_model(blob, source=str(path))
