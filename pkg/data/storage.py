"""
Datasets on disk: a directory of numbered PPM files, labels.csv (filename,label)
and dataset.json (num_classes, split, generator_seed, image_size, count).
"""
import csv
import json
import logging
from pathlib import Path

import numpy as np

from sgplab.exceptions import InvalidArgumentError
from .datasets import Dataset
from .imageio import read_image, write_ppm

logger = logging.getLogger(__name__)

LABELS_FILE = 'labels.csv'
METADATA_FILE = 'dataset.json'


def image_name(index) -> str:
    return f'{index:05d}.ppm'


def save_dataset_dir(ds: Dataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / LABELS_FILE, 'w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(['filename', 'label'])
        for index, example in enumerate(ds.examples):
            name = image_name(index)
            write_ppm(directory / name, example.image)
            writer.writerow([name, example.label])
    metadata = {
        'num_classes': ds.num_classes,
        'split': ds.split,
        'generator_seed': ds.generator_seed,
        'image_size': ds.image_shape[1],
        'count': len(ds),
    }
    (directory / METADATA_FILE).write_text(json.dumps(metadata, indent=2, sort_keys=True) + '\n')
    logger.info(f"Wrote {len(ds)} {ds.split} examples to {directory}")
    return directory


def load_dataset_dir(directory) -> Dataset:
    directory = Path(directory)
    metadata_path = directory / METADATA_FILE
    if not metadata_path.exists():
        raise FileNotFoundError(f"{directory} is not a dataset directory (no {METADATA_FILE})")
    try:
        metadata = json.loads(metadata_path.read_text())
    except json.JSONDecodeError as e:
        raise InvalidArgumentError(f"{metadata_path}: unreadable metadata: {e}") from e

    with open(directory / LABELS_FILE, newline='') as handle:
        rows = list(csv.DictReader(handle))
    if len(rows) != metadata.get('count', len(rows)):
        raise InvalidArgumentError(f"{directory}: {len(rows)} labels but metadata says {metadata['count']}")
    if not rows:
        size = metadata['image_size']
        images = np.zeros((0, 3, size, size), dtype=np.float32)
    else:
        images = np.stack([read_image(directory / row['filename']) for row in rows])
    labels = np.array([int(row['label']) for row in rows], dtype=np.int64)
    return Dataset(images, labels, metadata['num_classes'], metadata['split'], metadata['generator_seed'])
