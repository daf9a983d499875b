import logging
from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np

from sgplab.exceptions import InvalidArgumentError

logger = logging.getLogger(__name__)

TRAIN = 'train'
TEST = 'test'
ALL = 'all'
SPLIT_CHOICES = [(TRAIN, 'Training split'), (TEST, 'Test split'), (ALL, 'Unsplit')]


@dataclass(frozen=True)
class LabeledExample:
    image: np.ndarray
    label: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Images stacked as (N, C, H, W) float32 in [0, 1] with integer labels"""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = ALL
    generator_seed: int = 0

    def __post_init__(self):
        images = np.ascontiguousarray(self.images, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64).reshape(-1)
        if images.ndim != 4:
            raise InvalidArgumentError(f"images must be (N, C, H, W), got shape {images.shape}")
        if images.shape[0] != labels.shape[0]:
            raise InvalidArgumentError(f"{images.shape[0]} images but {labels.shape[0]} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise InvalidArgumentError(f"labels must lie in [0, {self.num_classes})")
        if images.size and (images.min() < 0 or images.max() > 1 or not np.all(np.isfinite(images))):
            raise InvalidArgumentError("image values must lie in [0, 1]")
        object.__setattr__(self, 'images', images)
        object.__setattr__(self, 'labels', labels)

    def __len__(self):
        return int(self.labels.shape[0])

    def __getitem__(self, index) -> LabeledExample:
        return LabeledExample(self.images[index], int(self.labels[index]))

    @property
    def examples(self) -> Iterator[LabeledExample]:
        return (self[i] for i in range(len(self)))

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices, split=None) -> 'Dataset':
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.images[indices], self.labels[indices], self.num_classes,
            split or self.split, self.generator_seed,
        )

    def head(self, n) -> 'Dataset':
        return self.subset(np.arange(min(n, len(self))))


def split(ds: Dataset, test_fraction=0.2, seed=0) -> Tuple[Dataset, Dataset]:
    """Seeded shuffle, then the first round(n·test_fraction) indices become the test split"""
    if not 0 <= test_fraction <= 1:
        raise InvalidArgumentError(f"test_fraction must lie in [0, 1], got {test_fraction}")
    order = np.random.default_rng(seed).permutation(len(ds))
    n_test = int(round(len(ds) * test_fraction))
    return ds.subset(order[n_test:], TRAIN), ds.subset(order[:n_test], TEST)
