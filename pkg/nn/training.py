import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from sgplab.exceptions import InvalidArgumentError
from .classifiers import Classifier

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidArgumentError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise InvalidArgumentError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise InvalidArgumentError(f"momentum must lie in [0, 1), got {self.momentum}")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    loss: float
    train_accuracy: float
    test_accuracy: Optional[float]


@dataclass
class TrainResult:
    model: Classifier
    history: List[EpochMetrics] = field(default_factory=list)

    @property
    def final_test_accuracy(self):
        return self.history[-1].test_accuracy if self.history else None


BatchHook = Callable[[Classifier, np.ndarray, np.ndarray], np.ndarray]


def train(model: Classifier, dataset, cfg: TrainConfig, test_set=None, batch_hook: BatchHook = None) -> TrainResult:
    """
    Mini-batch SGD with classical momentum on mean cross-entropy.

    The input model is left untouched; a trained copy is returned. batch_hook,
    when given, may replace the images of each batch (adversarial training)
    and runs on the current parameters before the update.
    """
    images, labels = dataset.images, dataset.labels
    if len(labels) == 0:
        raise InvalidArgumentError("cannot train on an empty dataset")
    if labels.min() < 0 or labels.max() >= model.num_classes:
        raise InvalidArgumentError(f"dataset labels must lie in [0, {model.num_classes})")

    trained = model.copy()
    velocity = np.zeros_like(trained.params)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(trained)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(labels))
        total_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            index = order[start:start + cfg.batch_size]
            xb, yb = images[index], labels[index]
            if batch_hook is not None:
                xb = batch_hook(trained, xb, yb)
            loss, grad = trained.loss_and_param_grad(xb, yb)
            velocity = cfg.momentum * velocity - cfg.learning_rate * grad
            trained.params = (trained.params + velocity).astype(np.float32)
            total_loss += float(loss) * len(index)

        train_accuracy = trained.accuracy(images, labels)
        test_accuracy = trained.accuracy(test_set.images, test_set.labels) if test_set is not None else None
        metrics = EpochMetrics(epoch, total_loss / len(labels), train_accuracy, test_accuracy)
        result.history.append(metrics)
        logger.info(
            f"{trained.architecture_id} epoch {epoch}/{cfg.epochs}: loss={metrics.loss:.4f} "
            f"train_acc={train_accuracy:.4f} test_acc={test_accuracy if test_accuracy is None else f'{test_accuracy:.4f}'}"
        )
    return result
