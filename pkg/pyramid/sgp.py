"""
Segmented Gaussian pyramid.

Layer 1 is the input itself. Every further layer blurs the previous base with
the 5×5 binomial kernel and samples it three ways (rows and columns, rows
only, columns only); the row-and-column sample becomes the next base. An
m-layer pyramid therefore holds 3m − 2 examples, each carrying the chain of
linear operators that produced it so input gradients can be pulled back.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from sgplab.exceptions import DepthExceededError, InvalidArgumentError
from tensorcore.ops import (
    BLUR_KERNEL,
    LinearOpDescriptor,
    apply,
    as_image,
    pullback_chain,
    resize,
    resize_adjoint,
)

logger = logging.getLogger(__name__)

ORIGINAL = 0
ROW_COLUMN = 1
ROW = 2
COLUMN = 3

SCHEME_CHOICES = [
    (ORIGINAL, 'original'),
    (ROW_COLUMN, 'rc'),
    (ROW, 'r'),
    (COLUMN, 'c'),
]
SCHEME_NAMES = dict(SCHEME_CHOICES)
SAMPLING_SCHEMES = (ROW_COLUMN, ROW, COLUMN)

MIN_PYRAMID_SIZE = 8


@dataclass(frozen=True, eq=False)
class GaussianKernel:
    coefficients: np.ndarray

    @property
    def size(self) -> int:
        return self.coefficients.shape[0]


def gaussian_kernel() -> GaussianKernel:
    """(1/256)·[1 4 6 4 1]ᵀ[1 4 6 4 1]"""
    return GaussianKernel(BLUR_KERNEL)


@dataclass(frozen=True, eq=False)
class ScaleExample:
    layer: int
    scheme: int
    image: np.ndarray
    forward_map: Tuple[LinearOpDescriptor, ...] = ()

    @property
    def tag(self) -> str:
        return f'L{self.layer}-{SCHEME_NAMES[self.scheme]}'

    def resize_op(self, original_shape, mode='bilinear') -> LinearOpDescriptor:
        _, h, w = original_shape
        return LinearOpDescriptor.resize(self.image.shape, h, w, mode)

    def resized(self, original_shape, mode='bilinear') -> np.ndarray:
        """R(T[i, j]): the example brought back to the input's spatial size"""
        _, h, w = original_shape
        return resize(self.image, h, w, mode)


@dataclass(frozen=True, eq=False)
class ScaleSet:
    m: int
    examples: Tuple[ScaleExample, ...]

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def get(self, layer, scheme) -> ScaleExample:
        for example in self.examples:
            if (example.layer, example.scheme) == (layer, scheme):
                return example
        raise KeyError((layer, scheme))


def scale_count(m) -> int:
    return 3 * m - 2


def _ceil_halvings(n, times):
    for _ in range(times):
        n = (n + 1) // 2
    return n


def feasible_depth(shape, floor=MIN_PYRAMID_SIZE) -> int:
    """Largest m whose layer-m base keeps min(H, W) ≥ floor; never below 1"""
    _, h, w = shape
    m = 1
    while min(_ceil_halvings(h, m), _ceil_halvings(w, m)) >= floor:
        m += 1
    return m


def build_sgp(x, m, floor=MIN_PYRAMID_SIZE) -> ScaleSet:
    x = as_image(x)
    if m < 1:
        raise InvalidArgumentError(f"pyramid depth m must be >= 1, got {m}")
    feasible = feasible_depth(x.shape, floor)
    if m > feasible:
        _, h, w = x.shape
        dimension = f'height {h}' if h <= w else f'width {w}'
        raise DepthExceededError(m, feasible, x.shape, dimension)

    examples = [ScaleExample(1, ORIGINAL, x.copy())]
    base, base_map = x, ()
    for layer in range(2, m + 1):
        blur = LinearOpDescriptor.blur(base.shape)
        blurred = apply(blur, base)
        for scheme in SAMPLING_SCHEMES:
            sample = LinearOpDescriptor.downsample(base.shape, SCHEME_NAMES[scheme])
            examples.append(ScaleExample(layer, scheme, apply(sample, blurred), base_map + (blur, sample)))
        rc = examples[-3]
        base, base_map = rc.image, rc.forward_map
    logger.debug(f"Built {m}-layer pyramid over {x.shape}: {len(examples)} examples")
    return ScaleSet(m, tuple(examples))


def pullback_to_input(ex: ScaleExample, cotangent, original_shape, mode='bilinear') -> np.ndarray:
    """Adjoint of R ∘ T[i, j] applied to a cotangent living at the input's size"""
    cot = as_image(cotangent, 'cotangent')
    original_shape = tuple(original_shape)
    if cot.shape != original_shape:
        raise InvalidArgumentError(f"cotangent shape {cot.shape} does not match input shape {original_shape}")
    at_scale = resize_adjoint(cot, ex.image.shape, mode)
    return pullback_chain(ex.forward_map, at_scale)

