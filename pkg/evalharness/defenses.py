"""
Target-side stand-ins for published defenses.

A DefenseWrapper preprocesses the input (Gaussian blur or bit-depth reduction)
and classifies with the wrapped model; an adversarially trained model is
wrapped without preprocessing.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from nn.classifiers import Classifier
from sgplab.exceptions import InvalidArgumentError
from tensorcore.ops import conv2d_reflect

logger = logging.getLogger(__name__)

NONE = 'none'
BLUR = 'blur'
BITDEPTH = 'bitdepth'
ADV_TRAINED = 'adv_trained'

DEFENSE_CHOICES = [
    (NONE, 'No preprocessing'),
    (BLUR, 'Gaussian blur of the input'),
    (BITDEPTH, 'Bit-depth reduction of the input'),
    (ADV_TRAINED, 'Adversarially trained model'),
]

DEFAULT_BLUR_SIGMA = 1.0
DEFAULT_BITS = 4


def blur_kernel(sigma) -> np.ndarray:
    """Normalized Gaussian with radius ceil(3σ)"""
    radius = max(1, math.ceil(3 * sigma))
    offsets = np.arange(-radius, radius + 1)
    profile = np.exp(-offsets ** 2 / (2 * sigma ** 2))
    kernel = np.outer(profile, profile)
    return kernel / kernel.sum()


def reduce_bit_depth(batch, bits) -> np.ndarray:
    levels = 2 ** bits - 1
    return np.round(batch * levels) / levels


@dataclass(frozen=True, eq=False)
class DefenseWrapper:
    inner: Classifier
    kind: str = NONE
    param: Optional[float] = None
    name: str = 'model'

    def __post_init__(self):
        if self.kind not in dict(DEFENSE_CHOICES):
            raise InvalidArgumentError(f"unknown defense kind {self.kind!r}")
        if self.kind == BLUR:
            sigma = DEFAULT_BLUR_SIGMA if self.param is None else float(self.param)
            if sigma <= 0:
                raise InvalidArgumentError(f"blur sigma must be positive, got {sigma}")
            object.__setattr__(self, 'param', sigma)
        elif self.kind == BITDEPTH:
            if self.param is not None and not float(self.param).is_integer():
                raise InvalidArgumentError(f"bit depth must be a whole number, got {self.param}")
            bits = DEFAULT_BITS if self.param is None else int(self.param)
            if not 1 <= bits <= 8:
                raise InvalidArgumentError(f"bit depth must lie in [1, 8], got {bits}")
            object.__setattr__(self, 'param', bits)

    @classmethod
    def parse(cls, model: Classifier, name: str, spec: str) -> 'DefenseWrapper':
        """Build from a command-line spec such as 'blur:1.0', 'bitdepth:4' or 'none'"""
        kind, _, value = spec.partition(':')
        try:
            param = float(value) if value else None
        except ValueError as e:
            raise InvalidArgumentError(f"bad defense parameter in {spec!r}") from e
        return cls(model, kind, param, name)

    @property
    def id(self) -> str:
        if self.kind == BLUR:
            return f'{self.name}+blur{self.param}'
        if self.kind == BITDEPTH:
            return f'{self.name}+bitdepth{self.param}'
        if self.kind == ADV_TRAINED:
            return f'{self.name}+adv'
        return self.name

    @property
    def input_shape(self):
        return self.inner.input_shape

    @property
    def num_classes(self):
        return self.inner.num_classes

    def preprocess(self, batch) -> np.ndarray:
        batch = np.asarray(batch)
        if self.kind == BLUR:
            kernel = blur_kernel(self.param)
            return np.stack([conv2d_reflect(image, kernel) for image in batch]) if len(batch) else batch
        if self.kind == BITDEPTH:
            return reduce_bit_depth(batch, self.param).astype(batch.dtype, copy=False)
        return batch

    def logits(self, batch) -> np.ndarray:
        return self.inner.forward_batch(self.preprocess(batch))

    def predict(self, batch) -> np.ndarray:
        return self.logits(batch).argmax(axis=1)
