import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, List, NamedTuple

import numpy as np

from attacks.config import AttackConfig, example_rng
from attacks.engine import AdversarialResult, sgp_attack
from attacks.gradients import Surrogate
from sgplab.exceptions import InvalidArgumentError

logger = logging.getLogger(__name__)


class SuccessCount(NamedTuple):
    n: int
    fooled: int

    @property
    def rate(self) -> float:
        return self.fooled / self.n if self.n else 0.0


def _as_triples(records) -> List:
    """(x, x_adv, y) per record; x is None for (x_adv, y) pairs"""
    triples = []
    for record in records:
        if isinstance(record, AdversarialResult):
            triples.append((record.x, record.x_adv, record.label))
            continue
        record = tuple(record)
        if len(record) == 2:
            triples.append((None, *record))
        elif len(record) == 3:
            triples.append(record)
        else:
            raise InvalidArgumentError(
                f"adversarial records are (x_adv, y) or (x, x_adv, y), got {len(record)} fields"
            )
    return triples


def count_successes(target, records: Iterable, filter_clean=True) -> SuccessCount:
    """
    Count adversarial examples that the target misclassifies.

    records are AdversarialResult objects, (x, x_adv, y) triples or
    (x_adv, y) pairs. With filter_clean, only examples whose clean image the
    target gets right count. Pairs carry no clean image, so a set of pairs
    is always scored over every example.
    """
    triples = _as_triples(records)
    if not triples:
        raise InvalidArgumentError("attack success rate needs a nonempty adversarial set")
    missing_clean = [x is None for x, _, _ in triples]
    if any(missing_clean) and not all(missing_clean):
        raise InvalidArgumentError("adversarial set mixes (x_adv, y) pairs with records that carry clean images")
    adversarial = np.stack([x_adv for _, x_adv, _ in triples])
    labels = np.asarray([int(y) for _, _, y in triples])

    keep = np.ones(len(labels), dtype=bool)
    if filter_clean and not all(missing_clean):
        keep = target.predict(np.stack([x for x, _, _ in triples])) == labels
    if not keep.any():
        logger.warning(f"All {len(labels)} examples were misclassified before the attack; success rate is 0")
        return SuccessCount(0, 0)
    fooled = target.predict(adversarial[keep]) != labels[keep]
    return SuccessCount(int(keep.sum()), int(fooled.sum()))


def attack_success_rate(target, records: Iterable, filter_clean=True) -> float:
    return count_successes(target, records, filter_clean).rate


def resolve_threads(threads) -> int:
    """0 or None means every available core"""
    if not threads:
        return os.cpu_count() or 1
    if threads < 0:
        raise InvalidArgumentError(f"threads must be >= 0, got {threads}")
    return int(threads)


def generate_adversarial_set(surrogate, cfg: AttackConfig, dataset, n=None, threads=1) -> List[AdversarialResult]:
    """
    Attack the first n examples of the dataset.

    Example i draws its randomness from example_rng(cfg.seed, i), so the
    results are identical for every thread count and come back in order.
    """
    surrogate = Surrogate.of(surrogate)
    n = len(dataset) if n is None else min(int(n), len(dataset))
    images, labels = dataset.images[:n], dataset.labels[:n]

    def attack_one(i):
        return sgp_attack(surrogate, images[i], int(labels[i]), cfg, example_rng(cfg.seed, i))

    workers = resolve_threads(threads)
    if workers == 1:
        results = [attack_one(i) for i in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(attack_one, range(n)))
    logger.info(f"Generated {n} adversarial examples with {workers} thread(s)")
    return results
