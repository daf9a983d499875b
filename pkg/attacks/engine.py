import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from nn.classifiers import Classifier
from sgplab.exceptions import InvalidArgumentError
from tensorcore.ops import as_image
from .config import AttackConfig
from .gradients import Surrogate, composite_gradient_with_count
from .transforms import tim_smooth_gradient

logger = logging.getLogger(__name__)


@dataclass
class AttackState:
    t: int
    momentum: np.ndarray
    x_adv: np.ndarray


@dataclass
class AdversarialResult:
    x: np.ndarray
    x_adv: np.ndarray
    label: int
    loss_trace: List[float] = field(default_factory=list)
    gradient_call_count: int = 0

    @property
    def perturbation(self) -> np.ndarray:
        return self.x_adv - self.x

    @property
    def linf(self) -> float:
        return float(np.max(np.abs(self.perturbation))) if self.x.size else 0.0


def _check_input(x, y, num_classes):
    x = as_image(x)
    if x.size and (x.min() < 0 or x.max() > 1):
        raise InvalidArgumentError("attack input must lie in [0, 1]")
    if not 0 <= int(y) < num_classes:
        raise InvalidArgumentError(f"label {y} outside [0, {num_classes})")
    return x


def _surrogate_loss(surrogate: Surrogate, x, y) -> float:
    return float(surrogate.losses(x[None], [y])[0])


def sgp_attack(surrogate, x, y, cfg: AttackConfig, rng=None) -> AdversarialResult:
    """
    Momentum iterative sign attack on the composite pyramid gradient.

    Per iteration: ḡ = composite gradient (TIM-smoothed when enabled),
    g ← μ·g + ḡ/‖ḡ‖₁ (zero term when ‖ḡ‖₁ = 0), x ← x + α·sign(g), then
    clip to [0, 1] when clip_to_valid and project onto the ε-ball around x.
    Surrogate parameters are only read.
    """
    surrogate = Surrogate.of(surrogate)
    x = _check_input(x, y, surrogate.num_classes)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    lower, upper = x - cfg.epsilon, x + cfg.epsilon

    state = AttackState(0, np.zeros_like(x), x.copy())
    result = AdversarialResult(x.copy(), state.x_adv, int(y))
    result.loss_trace.append(_surrogate_loss(surrogate, x, y))

    while state.t < cfg.iterations:
        grad, calls = composite_gradient_with_count(surrogate, state.x_adv, y, cfg, rng)
        result.gradient_call_count += calls
        if cfg.tim_kernel > 1:
            grad = tim_smooth_gradient(grad, cfg.tim_kernel)
        norm = np.abs(grad).sum()
        normalized = grad / norm if norm > 0 else np.zeros_like(grad)
        momentum = cfg.decay * state.momentum + normalized
        x_next = state.x_adv + cfg.alpha * np.sign(momentum)
        if cfg.clip_to_valid:
            x_next = np.clip(x_next, 0.0, 1.0)
        x_next = np.clip(x_next, lower, upper)
        state = AttackState(state.t + 1, momentum, x_next)
        result.loss_trace.append(_surrogate_loss(surrogate, state.x_adv, y))

    result.x_adv = state.x_adv
    logger.debug(
        f"sgp_attack m={cfg.layers} T={cfg.iterations}: loss {result.loss_trace[0]:.4f} -> "
        f"{result.loss_trace[-1]:.4f}, {result.gradient_call_count} gradient calls"
    )
    return result


def mifgsm_attack(model: Classifier, x, y, cfg: AttackConfig) -> AdversarialResult:
    """Plain MI-FGSM on a single model; ignores the pyramid and transform fields of cfg"""
    x = _check_input(x, y, model.num_classes)
    lower, upper = x - cfg.epsilon, x + cfg.epsilon
    g = np.zeros_like(x)
    x_adv = x.copy()
    trace = []
    for _ in range(cfg.iterations):
        loss, grad = model.loss_and_input_grad(x_adv, y)
        trace.append(float(loss))
        norm = np.abs(grad).sum()
        normalized = grad / norm if norm > 0 else np.zeros_like(grad)
        g = cfg.decay * g + normalized
        x_next = x_adv + cfg.alpha * np.sign(g)
        if cfg.clip_to_valid:
            x_next = np.clip(x_next, 0.0, 1.0)
        x_adv = np.clip(x_next, lower, upper)
    final_loss, _ = model.loss_and_input_grad(x_adv, y)
    trace.append(float(final_loss))
    return AdversarialResult(x.copy(), x_adv, int(y), trace, cfg.iterations)


def fgsm_step(surrogate, batch, labels, epsilon, clip_to_valid=True) -> np.ndarray:
    """One sign-gradient step of size epsilon for every example of a batch"""
    _, grads = Surrogate.of(surrogate).batch_input_grads(batch, labels)
    adversarial = batch + epsilon * np.sign(grads)
    if clip_to_valid:
        adversarial = np.clip(adversarial, 0.0, 1.0)
    return adversarial.astype(batch.dtype, copy=False)
