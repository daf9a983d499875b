"""Central finite-difference verification of input and parameter gradients, in float64."""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .classifiers import Classifier, cross_entropy

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-3
DEFAULT_TOLERANCE = 1e-3
# gradients below this magnitude are compared absolutely
RELATIVE_FLOOR = 1e-6


def relative_error(analytic, numeric) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), RELATIVE_FLOOR)


@dataclass
class GradCheckReport:
    max_input_error: float
    max_param_error: float
    worst_coordinate: Optional[Tuple[str, int]]
    checked: int
    excluded_at_kinks: int
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def max_error(self) -> float:
        return max(self.max_input_error, self.max_param_error)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def _patterns_equal(first, second) -> bool:
    return len(first) == len(second) and all(np.array_equal(a, b) for a, b in zip(first, second))


def _loss(model, x, y, theta=None):
    logits, _, _ = model.forward_with_cache(x[None], theta=theta)
    losses, _ = cross_entropy(logits, np.array([y]))
    return float(losses[0])


def grad_check(model: Classifier, n_coords=100, seed=0, x=None, y=0, step=DEFAULT_STEP,
               tolerance=DEFAULT_TOLERANCE) -> GradCheckReport:
    """
    Compare analytic gradients against central differences at n_coords random
    input coordinates and n_coords random parameters.

    A coordinate whose ±step perturbation changes a ReLU mask or a max-pool
    winner straddles a kink; it is excluded and counted instead of compared.
    """
    rng = np.random.default_rng(seed)
    if x is None:
        x = rng.random(model.input_shape)
    x = np.asarray(x, dtype=np.float64)

    _, analytic_input = model.loss_and_input_grad(x, y)
    worst = None
    max_input = 0.0
    excluded = 0
    checked = 0

    flat_x = x.ravel()
    for i in rng.choice(flat_x.size, size=min(n_coords, flat_x.size), replace=False):
        plus, minus = flat_x.copy(), flat_x.copy()
        plus[i] += step
        minus[i] -= step
        plus, minus = plus.reshape(x.shape), minus.reshape(x.shape)
        if not _patterns_equal(model.activation_pattern(plus[None]), model.activation_pattern(minus[None])):
            excluded += 1
            continue
        numeric = (_loss(model, plus, y) - _loss(model, minus, y)) / (2 * step)
        error = relative_error(analytic_input.ravel()[i], numeric)
        checked += 1
        if error > max_input:
            max_input, worst = error, ('input', int(i))

    theta = model.params.astype(np.float64)
    _, analytic_params = model.loss_and_param_grad(x[None], [y], theta=theta)
    max_param = 0.0
    for k in rng.choice(theta.size, size=min(n_coords, theta.size), replace=False):
        plus, minus = theta.copy(), theta.copy()
        plus[k] += step
        minus[k] -= step
        if not _patterns_equal(model.activation_pattern(x[None], plus), model.activation_pattern(x[None], minus)):
            excluded += 1
            continue
        numeric = (_loss(model, x, y, plus) - _loss(model, x, y, minus)) / (2 * step)
        error = relative_error(analytic_params[k], numeric)
        checked += 1
        if error > max_param:
            max_param, worst = error, ('param', int(k))

    if excluded:
        logger.warning(f"grad_check on {model.architecture_id}: {excluded} coordinates excluded at kinks")
    report = GradCheckReport(max_input, max_param, worst, checked, excluded, tolerance)
    logger.info(f"grad_check on {model.architecture_id}: max rel err {report.max_error:.2e} over {checked} coordinates")
    return report
