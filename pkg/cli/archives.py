"""
Adversarial example archives.

    <dir>/x/NNNNN.ppm, <dir>/adv/NNNNN.ppm   8-bit views for inspection
    <dir>/x.npy, x_adv.npy, labels.npy        exact float32 tensors
    <dir>/archive.json                        attack config, surrogates, per-example records

8-bit PPM cannot hold an ε-bounded float perturbation exactly, so evaluation
always reads the .npy tensors.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np

from data.imageio import write_ppm
from data.storage import image_name
from sgplab.exceptions import ArchiveFormatError

logger = logging.getLogger(__name__)

ARCHIVE_FILE = 'archive.json'
TENSOR_FILES = ('x.npy', 'x_adv.npy', 'labels.npy')


@dataclass
class Archive:
    x: np.ndarray
    x_adv: np.ndarray
    labels: np.ndarray
    metadata: Dict = field(default_factory=dict)

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def records(self) -> List:
        return list(zip(self.x, self.x_adv, self.labels.tolist()))

    @property
    def surrogate(self) -> str:
        return self.metadata.get('surrogate', 'unknown')

    @property
    def attack(self) -> str:
        return self.metadata.get('attack', 'unknown')


def save_archive(results, directory, metadata) -> Path:
    directory = Path(directory)
    (directory / 'x').mkdir(parents=True, exist_ok=True)
    (directory / 'adv').mkdir(parents=True, exist_ok=True)

    examples = []
    for index, result in enumerate(results):
        write_ppm(directory / 'x' / image_name(index), result.x)
        write_ppm(directory / 'adv' / image_name(index), result.x_adv)
        examples.append({
            'index': index,
            'label': result.label,
            'linf': result.linf,
            'gradient_calls': result.gradient_call_count,
            'initial_loss': result.loss_trace[0] if result.loss_trace else None,
            'final_loss': result.loss_trace[-1] if result.loss_trace else None,
        })

    if results:
        x = np.stack([r.x for r in results]).astype(np.float32)
        x_adv = np.stack([r.x_adv for r in results]).astype(np.float32)
    else:
        x = x_adv = np.zeros((0,), dtype=np.float32)
    labels = np.array([r.label for r in results], dtype=np.int64)
    for name, tensor in zip(TENSOR_FILES, (x, x_adv, labels)):
        np.save(directory / name, tensor, allow_pickle=False)

    document = {**metadata, 'count': len(examples), 'examples': examples}
    (directory / ARCHIVE_FILE).write_text(json.dumps(document, indent=2, sort_keys=True) + '\n')
    logger.info(f"Archived {len(examples)} adversarial examples in {directory}")
    return directory


def load_archive(directory) -> Archive:
    directory = Path(directory)
    try:
        metadata = json.loads((directory / ARCHIVE_FILE).read_text())
        x, x_adv, labels = (np.load(directory / name, allow_pickle=False) for name in TENSOR_FILES)
    except FileNotFoundError as e:
        raise ArchiveFormatError(directory, f"missing {Path(e.filename).name}") from e
    except ValueError as e:
        raise ArchiveFormatError(directory, f"unreadable archive: {e}") from e

    if not (len(x) == len(x_adv) == len(labels) == metadata.get('count', len(labels))):
        raise ArchiveFormatError(
            directory, f"inconsistent sizes: x={len(x)} x_adv={len(x_adv)} labels={len(labels)}"
        )
    if x.shape != x_adv.shape:
        raise ArchiveFormatError(directory, f"x has shape {x.shape} but x_adv has {x_adv.shape}")
    return Archive(x, x_adv, labels, metadata)
