"""
Experiment drivers: transfer matrix, pyramid-depth ablation and adversarial training.
"""
import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Mapping, NamedTuple, Sequence

import numpy as np
from django.utils import timezone

import sgplab
from attacks.config import AttackConfig
from attacks.engine import fgsm_step
from attacks.gradients import Surrogate
from nn.classifiers import CNN_B, Classifier
from nn.training import TrainConfig, TrainResult, train
from pyramid.sgp import build_sgp
from sgplab.exceptions import InvalidArgumentError
from .defenses import ADV_TRAINED, DefenseWrapper
from .metrics import count_successes, generate_adversarial_set
from .reports import EvalReport, ReportRow

logger = logging.getLogger(__name__)


def target_id(target) -> str:
    if isinstance(target, DefenseWrapper):
        return target.id
    return target.architecture_id


def _check_compatible(surrogates: Mapping, targets: Sequence):
    shapes = {tuple(Surrogate.of(s).input_shape) for s in surrogates.values()}
    shapes |= {tuple(t.input_shape) for t in targets}
    classes = {Surrogate.of(s).num_classes for s in surrogates.values()} | {t.num_classes for t in targets}
    if len(shapes) > 1 or len(classes) > 1:
        raise InvalidArgumentError(
            f"surrogates and targets must share input_shape and num_classes, got shapes {sorted(shapes)} "
            f"and class counts {sorted(classes)}"
        )


def transfer_matrix(surrogates: Mapping, attacks: Mapping[str, AttackConfig], targets: Sequence, dataset,
                    n=None, threads=1) -> EvalReport:
    """
    One report row per (surrogate, attack, target), in the order given.

    surrogates maps an id to a Classifier, a list of classifiers (equal-weight
    ensemble) or a Surrogate; targets are classifiers or DefenseWrappers.
    Each adversarial set is generated once and scored against every target.
    """
    if not surrogates or not attacks or not targets:
        raise InvalidArgumentError("transfer matrix needs at least one surrogate, attack and target")
    _check_compatible(surrogates, targets)
    n = len(dataset) if n is None else min(int(n), len(dataset))

    report = EvalReport(metadata={
        'toolkit_version': sgplab.__version__,
        'created_at': timezone.now().isoformat(),
        'n_requested': n,
        'filter_clean': True,
        'surrogates': {name: Surrogate.of(s).checksums() for name, s in surrogates.items()},
        'attacks': {name: cfg.as_dict() for name, cfg in attacks.items()},
        'targets': [target_id(t) for t in targets],
        'dataset': {'split': dataset.split, 'generator_seed': dataset.generator_seed, 'size': len(dataset)},
    })
    for surrogate_name, surrogate in surrogates.items():
        for attack_name, cfg in attacks.items():
            adversarial = generate_adversarial_set(surrogate, cfg, dataset, n, threads)
            for target in targets:
                counts = count_successes(target, adversarial)
                row = ReportRow(surrogate_name, attack_name, target_id(target), counts.n, counts.fooled)
                report.rows.append(row)
                logger.info(
                    f"{surrogate_name} / {attack_name} -> {row.target}: {row.fooled}/{row.n} fooled ({row.rate:.4f})"
                )
    return report


class AblationPoint(NamedTuple):
    m: int
    rate: float


def ablate_m(surrogate, targets: Sequence, dataset, m_range: Sequence[int], n=None, base_cfg=None,
             threads=1) -> List[AblationPoint]:
    """Average success rate over the targets for each pyramid depth m"""
    if not m_range:
        raise InvalidArgumentError("m_range must not be empty")
    if not targets:
        raise InvalidArgumentError("ablation needs at least one target")
    base_cfg = base_cfg or AttackConfig()
    if len(dataset):
        # fail before any attack runs
        build_sgp(dataset.images[0], max(m_range), base_cfg.min_pyramid_size)

    curve = []
    for m in m_range:
        cfg = replace(base_cfg, layers=int(m))
        adversarial = generate_adversarial_set(surrogate, cfg, dataset, n, threads)
        rates = [count_successes(target, adversarial).rate for target in targets]
        point = AblationPoint(int(m), float(np.mean(rates)))
        curve.append(point)
        logger.info(f"Ablation m={point.m}: average success rate {point.rate:.4f} over {len(targets)} target(s)")
    return curve


@dataclass
class AdversarialTrainingResult:
    defense: DefenseWrapper
    training: TrainResult


def adversarial_training(train_cfg: TrainConfig, epsilon, dataset, test_set=None, architecture_id=CNN_B,
                         name=None) -> AdversarialTrainingResult:
    """
    Train with half of every batch replaced by single-step sign-gradient examples.

    The adversarial half is crafted against the current parameters; with
    epsilon = 0 training is identical to plain training.
    """
    if not 0 <= epsilon <= 1:
        raise InvalidArgumentError(f"epsilon must lie in [0, 1], got {epsilon}")

    def mix_adversarial(model, xb, yb):
        half = (len(xb) + 1) // 2
        mixed = xb.copy()
        mixed[:half] = fgsm_step(model, xb[:half], yb[:half], epsilon)
        return mixed

    model = Classifier.initialize(architecture_id, dataset.image_shape, dataset.num_classes, train_cfg.seed)
    result = train(model, dataset, train_cfg, test_set, batch_hook=mix_adversarial)
    defense = DefenseWrapper(result.model, ADV_TRAINED, name=name or architecture_id)
    logger.info(f"Adversarially trained {defense.id} with epsilon={epsilon:.4f}")
    return AdversarialTrainingResult(defense, result)


def robust_accuracy(target, surrogate, cfg: AttackConfig, dataset, n=None, threads=1) -> float:
    """Accuracy of the target on adversarial examples crafted against surrogate (unfiltered)"""
    adversarial = generate_adversarial_set(surrogate, cfg, dataset, n, threads)
    counts = count_successes(target, adversarial, filter_clean=False)
    return 1.0 - counts.rate


def summarize(report: EvalReport) -> Dict[str, float]:
    """Average rate per '<surrogate>/<attack>' across all targets"""
    pairs = dict.fromkeys((row.surrogate, row.attack) for row in report.rows)
    return {f'{s}/{a}': report.average(s, a) for s, a in pairs}
