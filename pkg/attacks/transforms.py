"""
Input and gradient transforms stacked on top of the pyramid.

DIM is expressed as a chain of linear operators so its adjoint is exact; the
random draws only choose the chain.
"""
import logging
from typing import List, Tuple

import numpy as np

from sgplab.exceptions import InvalidArgumentError
from tensorcore.ops import LinearOpDescriptor, apply_chain, as_image, conv2d_reflect

logger = logging.getLogger(__name__)


def dim_plan(shape, p, rng, max_scale=1.1, mode='bilinear', scale=None, offset=None) -> Tuple[LinearOpDescriptor, ...]:
    """
    With probability p: resize by s ~ U[1, max_scale], zero-pad at a random
    offset onto a round(max_scale·H) × round(max_scale·W) canvas, resize back.
    Returns () when the transform is skipped. scale and offset force the draws.
    """
    if not 0 <= p <= 1:
        raise InvalidArgumentError(f"DIM probability must lie in [0, 1], got {p}")
    if p == 0 or rng.random() >= p:
        return ()
    c, h, w = shape
    canvas_h, canvas_w = int(round(max_scale * h)), int(round(max_scale * w))
    if scale is None:
        scale = rng.uniform(1.0, max_scale)
    scaled_h = min(max(int(round(scale * h)), h), canvas_h)
    scaled_w = min(max(int(round(scale * w)), w), canvas_w)
    if offset is None:
        offset = (int(rng.integers(0, canvas_h - scaled_h + 1)), int(rng.integers(0, canvas_w - scaled_w + 1)))
    top, left = offset
    grow = LinearOpDescriptor.resize(shape, scaled_h, scaled_w, mode)
    pad = LinearOpDescriptor.zero_pad(grow.output_shape, canvas_h, canvas_w, top, left)
    back = LinearOpDescriptor.resize(pad.output_shape, h, w, mode)
    return grow, pad, back


def dim_transform(x, p, rng, max_scale=1.1, mode='bilinear', scale=None, offset=None) -> np.ndarray:
    x = as_image(x)
    return apply_chain(dim_plan(x.shape, p, rng, max_scale, mode, scale, offset), x)


def tim_kernel(kernel_size) -> np.ndarray:
    """Normalized 2-D Gaussian with σ = kernel_size / 3"""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise InvalidArgumentError(f"TIM kernel size must be a positive odd number, got {kernel_size}")
    sigma = kernel_size / 3
    offsets = np.arange(kernel_size) - kernel_size // 2
    profile = np.exp(-offsets ** 2 / (2 * sigma ** 2))
    kernel = np.outer(profile, profile)
    return kernel / kernel.sum()


def tim_smooth_gradient(g, kernel_size) -> np.ndarray:
    return conv2d_reflect(g, tim_kernel(kernel_size))


def sim_scale_copies(x, copies) -> List[np.ndarray]:
    """x / 2^k for k = 0 … copies − 1"""
    if copies < 1:
        raise InvalidArgumentError(f"SIM needs at least one copy, got {copies}")
    x = as_image(x)
    return [x / 2 ** k for k in range(copies)]
