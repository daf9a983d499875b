"""
Seeded synthetic shapes dataset.

Four classes drawn at a random position, size and colour on a dim noise
background: filled circle, square outline, triangle, cross.
"""
import logging

import numpy as np

from sgplab.exceptions import InvalidArgumentError
from .datasets import ALL, Dataset

logger = logging.getLogger(__name__)

CIRCLE = 0
SQUARE_OUTLINE = 1
TRIANGLE = 2
CROSS = 3

SHAPE_CHOICES = [
    (CIRCLE, 'filled circle'),
    (SQUARE_OUTLINE, 'square outline'),
    (TRIANGLE, 'triangle'),
    (CROSS, 'cross'),
]
NUM_SHAPES = len(SHAPE_CHOICES)
MIN_IMAGE_SIZE = 16

BACKGROUND_MAX = 0.15
FOREGROUND_RANGE = (0.6, 1.0)
FOREGROUND_NOISE = 0.05


def shape_mask(shape_id, size, cy, cx, radius) -> np.ndarray:
    """Boolean size×size mask of one shape centred at (cy, cx)"""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    if shape_id == CIRCLE:
        return dy ** 2 + dx ** 2 <= radius ** 2
    if shape_id == SQUARE_OUTLINE:
        thickness = max(1.0, radius / 3)
        extent = np.maximum(np.abs(dy), np.abs(dx))
        return (extent <= radius) & (extent > radius - thickness)
    if shape_id == TRIANGLE:
        # apex at the top, base at cy + radius
        return (np.abs(dy) <= radius) & (np.abs(dx) <= (dy + radius) / 2)
    if shape_id == CROSS:
        arm = max(1.0, radius / 4)
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= radius)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= radius))
    raise InvalidArgumentError(f"unknown shape id {shape_id}")


def draw_example(rng, shape_id, size) -> np.ndarray:
    radius = rng.uniform(0.2 * size, 0.35 * size)
    low, high = radius + 1, size - radius - 2
    cy, cx = rng.uniform(low, high, size=2)
    image = rng.uniform(0.0, BACKGROUND_MAX, size=(3, size, size))
    colour = rng.uniform(*FOREGROUND_RANGE, size=3)
    mask = shape_mask(shape_id, size, cy, cx, radius)
    foreground = colour[:, None, None] + rng.uniform(-FOREGROUND_NOISE, FOREGROUND_NOISE, size=image.shape)
    image = np.where(mask[None], foreground, image)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def gen_synthetic(n, seed=0, image_size=32) -> Dataset:
    """Class-balanced shapes dataset; identical (n, seed, image_size) gives identical arrays"""
    if n < 1:
        raise InvalidArgumentError(f"n must be at least 1, got {n}")
    if image_size < MIN_IMAGE_SIZE:
        raise InvalidArgumentError(f"image_size must be at least {MIN_IMAGE_SIZE}, got {image_size}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % NUM_SHAPES)
    images = np.stack([draw_example(rng, int(label), image_size) for label in labels])
    logger.info(f"Generated {n} synthetic {image_size}x{image_size} examples (seed={seed})")
    return Dataset(images, labels, NUM_SHAPES, ALL, seed)
