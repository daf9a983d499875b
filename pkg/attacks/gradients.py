"""
Surrogate models and the composite input gradient.

A Surrogate fuses the logits of one or more classifiers with fixed weights and
differentiates the cross-entropy of the fused logits. composite_gradient
averages that gradient over the 3m − 2 pyramid examples, each optionally
DIM-transformed and expanded into SIM intensity copies, and maps every
per-example gradient back to the input.
"""
import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Tuple

import numpy as np

from nn.classifiers import Classifier, cross_entropy
from pyramid.sgp import MIN_PYRAMID_SIZE, build_sgp, pullback_to_input
from sgplab.exceptions import InvalidArgumentError
from tensorcore.ops import apply_chain, as_image, pullback_chain, resize
from .config import CHAINED, DETACHED, AttackConfig
from .transforms import dim_plan

logger = logging.getLogger(__name__)

WEIGHT_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class Surrogate:
    models: Tuple[Classifier, ...]
    weights: Tuple[float, ...]

    def __post_init__(self):
        if not self.models:
            raise InvalidArgumentError("a surrogate needs at least one model")
        if len(self.weights) != len(self.models):
            raise InvalidArgumentError(f"{len(self.models)} models but {len(self.weights)} weights")
        first = self.models[0]
        for model in self.models[1:]:
            if model.num_classes != first.num_classes:
                raise InvalidArgumentError(
                    f"ensemble members disagree on num_classes ({first.num_classes} vs {model.num_classes})"
                )
            if model.input_shape != first.input_shape:
                raise InvalidArgumentError(
                    f"ensemble members disagree on input_shape ({first.input_shape} vs {model.input_shape})"
                )
        if abs(sum(self.weights) - 1.0) > WEIGHT_TOLERANCE:
            raise InvalidArgumentError(f"ensemble weights must sum to 1, got {sum(self.weights)}")

    @classmethod
    def of(cls, models, weights=None) -> 'Surrogate':
        if isinstance(models, Surrogate):
            return models
        if isinstance(models, Classifier):
            models = [models]
        models = tuple(models)
        if weights is None:
            weights = [1.0 / len(models)] * len(models)
        return cls(models, tuple(float(w) for w in weights))

    @property
    def input_shape(self):
        return self.models[0].input_shape

    @property
    def num_classes(self):
        return self.models[0].num_classes

    def checksums(self):
        return [model.checksum() for model in self.models]

    def _check_labels(self, labels, n):
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != n:
            raise InvalidArgumentError(f"got {labels.shape[0]} labels for {n} inputs")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise InvalidArgumentError(f"labels must lie in [0, {self.num_classes}), got {labels.tolist()}")
        return labels

    def logits(self, batch) -> np.ndarray:
        fused = None
        for weight, model in zip(self.weights, self.models):
            term = weight * model.forward_batch(batch)
            fused = term if fused is None else fused + term
        return fused

    def losses(self, batch, labels) -> np.ndarray:
        fused = self.logits(batch)
        losses, _ = cross_entropy(fused, self._check_labels(labels, fused.shape[0]))
        return losses

    def batch_input_grads(self, batch, labels):
        """Per-example cross-entropy of the fused logits and its input gradient"""
        runs = [model.forward_with_cache(batch) for model in self.models]
        fused = None
        for weight, (logits, _, _) in zip(self.weights, runs):
            term = weight * logits
            fused = term if fused is None else fused + term
        losses, dlogits = cross_entropy(fused, self._check_labels(labels, fused.shape[0]))
        dx = None
        for weight, model, (_, caches, params) in zip(self.weights, self.models, runs):
            grad, _ = model.backward(weight * dlogits, caches, params)
            dx = grad if dx is None else dx + grad
        return losses, dx


def ensemble_grad(models: Sequence[Classifier], weights, x, y) -> np.ndarray:
    """Input gradient of the cross-entropy of Σ_k w_k·logits_k"""
    x = as_image(x)
    _, grads = Surrogate.of(models, weights).batch_input_grads(x[None], [y])
    return grads[0]


class CompositeGradient(NamedTuple):
    grad: np.ndarray
    calls: int


def composite_gradient_with_count(surrogate, x, y, cfg: AttackConfig, rng=None) -> CompositeGradient:
    """
    Mean gradient over every pyramid example of x, mapped back to x.

    Composition order: pyramid outermost, DIM per example, SIM copies per
    example. TIM is not applied here; it acts on the averaged gradient.
    """
    surrogate = Surrogate.of(surrogate)
    x = as_image(x)
    shape = x.shape
    _, h, w = shape
    scales = build_sgp(x, cfg.layers, cfg.min_pyramid_size)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    plans, inputs = [], []
    for example in scales:
        base = example.resized(shape, cfg.resize_mode)
        plan = dim_plan(shape, cfg.dim_prob, rng, cfg.dim_max_scale, cfg.resize_mode) if cfg.dim_prob > 0 else ()
        transformed = apply_chain(plan, base)
        plans.append(plan)
        inputs.extend(transformed / 2 ** k for k in range(cfg.sim_copies))

    _, grads = surrogate.batch_input_grads(np.stack(inputs), [y] * len(inputs))

    total = None
    for index, (example, plan) in enumerate(zip(scales, plans)):
        copies = grads[index * cfg.sim_copies:(index + 1) * cfg.sim_copies]
        if cfg.sim_copies == 1:
            at_input_size = copies[0]
        else:
            at_input_size = sum(copy / 2 ** k for k, copy in enumerate(copies)) / cfg.sim_copies
        at_input_size = pullback_chain(plan, at_input_size)
        if cfg.grad_mode == CHAINED:
            term = pullback_to_input(example, at_input_size, shape, cfg.resize_mode)
        else:
            term = resize(at_input_size, h, w, 'bilinear')
        total = term if total is None else total + term
    return CompositeGradient(total / len(scales), len(inputs))


def composite_gradient(models, x, y, m=1, grad_mode=CHAINED, resize_mode='bilinear',
                       min_pyramid_size=MIN_PYRAMID_SIZE) -> np.ndarray:
    """ḡ = (1 / (3m − 2)) Σ over scale examples of the pulled-back (or resized) gradient"""
    if grad_mode not in (CHAINED, DETACHED):
        raise InvalidArgumentError(f"grad_mode must be chained or detached, got {grad_mode!r}")
    cfg = AttackConfig(layers=m, grad_mode=grad_mode, resize_mode=resize_mode, min_pyramid_size=min_pyramid_size)
    return composite_gradient_with_count(models, x, y, cfg).grad
