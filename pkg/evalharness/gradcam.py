"""
Grad-CAM attention maps for the convolutional classifiers.
"""
import logging

import numpy as np

from nn.classifiers import Classifier
from pyramid.sgp import build_sgp
from sgplab.exceptions import InvalidArgumentError
from tensorcore.ops import as_image, resize_bilinear

logger = logging.getLogger(__name__)

ACTIVE_THRESHOLD = 0.2


def gradcam(model: Classifier, x, class_idx) -> np.ndarray:
    """
    Heatmap of the regions driving logit `class_idx`, as a 1×H×W image in [0, 1].

    Channel weights are the spatial means of ∂logit/∂A over the last conv
    activation A; the map is ReLU(Σ_k w_k·A_k), bilinearly upsampled and
    divided by its maximum. An all-zero map stays all-zero.
    """
    x = as_image(x)
    if not 0 <= int(class_idx) < model.num_classes:
        raise InvalidArgumentError(f"class index {class_idx} outside [0, {model.num_classes})")
    index = model.last_conv_activation_index()

    logits, caches, params = model.forward_with_cache(x[None])
    activation, _, _ = model.forward_with_cache(x[None], stop_after=index)
    seed = np.zeros_like(logits)
    seed[0, int(class_idx)] = 1
    dactivation, _ = model.backward(seed, caches, params, down_to=index + 1)

    weights = dactivation[0].mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, activation[0], axes=1), 0)
    heatmap = resize_bilinear(cam[None], x.shape[1], x.shape[2])
    heatmap = np.maximum(heatmap, 0)
    peak = heatmap.max()
    if peak > 0:
        heatmap = heatmap / peak
    return heatmap.astype(x.dtype, copy=False)


def active_fraction(heatmap, threshold=ACTIVE_THRESHOLD) -> float:
    return float(np.mean(np.asarray(heatmap) > threshold))


def scale_heatmaps(model: Classifier, x, class_idx, m, floor=None, mode='bilinear'):
    """(tag, resized scale example, heatmap) for every pyramid example of x"""
    x = as_image(x)
    scales = build_sgp(x, m) if floor is None else build_sgp(x, m, floor)
    maps = []
    for example in scales:
        image = example.resized(x.shape, mode)
        maps.append((example.tag, image, gradcam(model, image, class_idx)))
    logger.info(f"Computed {len(maps)} Grad-CAM maps for a depth-{m} pyramid")
    return maps
