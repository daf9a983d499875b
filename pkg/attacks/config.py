import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from pyramid.sgp import MIN_PYRAMID_SIZE
from sgplab.exceptions import InvalidArgumentError

logger = logging.getLogger(__name__)

CHAINED = 'chained'
DETACHED = 'detached'
GRAD_MODE_CHOICES = [
    (CHAINED, 'pull gradients back through every transform adjoint'),
    (DETACHED, 'resize the gradient at the transformed input back to the input size'),
]

DIM = 'dim'
TIM = 'tim'
SIM = 'sim'
TRANSFORM_CHOICES = [
    (DIM, 'random resize and pad'),
    (TIM, 'Gaussian smoothing of the averaged gradient'),
    (SIM, 'intensity-scaled copies'),
]

DEFAULT_EPSILON = 16 / 255
DEFAULT_DIM_PROB = 0.5
DEFAULT_DIM_MAX_SCALE = 1.1
DEFAULT_TIM_KERNEL = 7
DEFAULT_SIM_COPIES = 5


@dataclass(frozen=True)
class AttackConfig:
    """
    Hyper-parameters of one MI-FGSM-family attack.

    epsilon is on the [0, 1] pixel scale. alpha defaults to epsilon/iterations.
    A transform is active when dim_prob > 0, tim_kernel > 1 or sim_copies > 1.
    """

    epsilon: float = DEFAULT_EPSILON
    iterations: int = 10
    alpha: Optional[float] = None
    decay: float = 1.0
    layers: int = 3
    grad_mode: str = CHAINED
    dim_prob: float = 0.0
    dim_max_scale: float = DEFAULT_DIM_MAX_SCALE
    tim_kernel: int = 1
    sim_copies: int = 1
    clip_to_valid: bool = True
    seed: int = 0
    resize_mode: str = 'bilinear'
    min_pyramid_size: int = MIN_PYRAMID_SIZE

    def __post_init__(self):
        if not 0 <= self.epsilon <= 1:
            raise InvalidArgumentError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.iterations < 1:
            raise InvalidArgumentError(f"iterations must be >= 1, got {self.iterations}")
        if self.alpha is None:
            object.__setattr__(self, 'alpha', self.epsilon / self.iterations)
        if self.alpha < 0 or (self.alpha == 0 and self.epsilon > 0):
            raise InvalidArgumentError(f"alpha must be > 0, got {self.alpha}")
        if self.decay < 0:
            raise InvalidArgumentError(f"decay must be >= 0, got {self.decay}")
        if self.layers < 1:
            raise InvalidArgumentError(f"layers must be >= 1, got {self.layers}")
        if self.grad_mode not in dict(GRAD_MODE_CHOICES):
            raise InvalidArgumentError(f"grad_mode must be chained or detached, got {self.grad_mode!r}")
        if not 0 <= self.dim_prob <= 1:
            raise InvalidArgumentError(f"dim_prob must lie in [0, 1], got {self.dim_prob}")
        if self.dim_max_scale < 1:
            raise InvalidArgumentError(f"dim_max_scale must be >= 1, got {self.dim_max_scale}")
        if self.tim_kernel < 1 or self.tim_kernel % 2 == 0:
            raise InvalidArgumentError(f"tim_kernel must be a positive odd size, got {self.tim_kernel}")
        if self.sim_copies < 1:
            raise InvalidArgumentError(f"sim_copies must be >= 1, got {self.sim_copies}")
        if self.resize_mode not in ('bilinear', 'nearest'):
            raise InvalidArgumentError(f"resize_mode must be bilinear or nearest, got {self.resize_mode!r}")

    @property
    def transforms(self):
        active = []
        if self.dim_prob > 0:
            active.append(DIM)
        if self.tim_kernel > 1:
            active.append(TIM)
        if self.sim_copies > 1:
            active.append(SIM)
        return active

    @property
    def scale_examples(self) -> int:
        return 3 * self.layers - 2

    @property
    def expected_gradient_calls(self) -> int:
        return self.scale_examples * self.sim_copies * self.iterations

    def with_seed(self, seed) -> 'AttackConfig':
        return replace(self, seed=int(seed))

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


def attack_label(cfg: AttackConfig) -> str:
    """Short id such as 'mifgsm', 'sgp-m3' or 'sgp-m3+dim+tim'"""
    if cfg.epsilon == 0:
        return 'identity'
    label = f'sgp-m{cfg.layers}' if cfg.layers > 1 else 'mifgsm'
    if cfg.layers > 1 and cfg.grad_mode == DETACHED:
        label += '-detached'
    return '+'.join([label] + cfg.transforms)


def example_rng(seed, index) -> np.random.Generator:
    """Independent stream for example `index`, so results do not depend on scheduling"""
    return np.random.default_rng([int(seed), int(index)])


_STDM = dict(dim_prob=DEFAULT_DIM_PROB, tim_kernel=DEFAULT_TIM_KERNEL, sim_copies=DEFAULT_SIM_COPIES)

ATTACK_PRESETS = {
    'identity': dict(epsilon=0.0, layers=1),
    'mifgsm': dict(layers=1),
    'dim': dict(layers=1, dim_prob=DEFAULT_DIM_PROB),
    'tim': dict(layers=1, tim_kernel=DEFAULT_TIM_KERNEL),
    'sim': dict(layers=1, sim_copies=DEFAULT_SIM_COPIES),
    'stdm': dict(layers=1, **_STDM),
    'sgp': dict(layers=3),
    'sgp-dim': dict(layers=3, dim_prob=DEFAULT_DIM_PROB),
    'sgp-tim': dict(layers=3, tim_kernel=DEFAULT_TIM_KERNEL),
    'sgp-sim': dict(layers=3, sim_copies=DEFAULT_SIM_COPIES),
    'sgp-stdm': dict(layers=3, **_STDM),
}
PRESET_CHOICES = list(ATTACK_PRESETS)


def preset_config(name, **overrides) -> AttackConfig:
    if name not in ATTACK_PRESETS:
        raise InvalidArgumentError(f"unknown attack preset {name!r}; valid presets: {', '.join(PRESET_CHOICES)}")
    return AttackConfig(**{**ATTACK_PRESETS[name], **overrides})
