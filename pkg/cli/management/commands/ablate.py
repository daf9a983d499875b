import re
from pathlib import Path

from django.conf import settings
from django.utils import timezone

import sgplab
from attacks.gradients import Surrogate
from attacks.serializers import AttackConfigSerializer
from cli.base import ExperimentCommand
from data.datasets import TEST
from evalharness.defenses import DefenseWrapper
from evalharness.experiments import ablate_m
from evalharness.reports import emit_curve, write_sidecar
from sgplab.exceptions import InvalidArgumentError

RANGE_PATTERN = re.compile(r'^(\d+)\.\.(\d+)$')


def parse_m_range(value):
    """'1..4' or '1,2,3'"""
    match = RANGE_PATTERN.match(value.strip())
    if match:
        low, high = int(match.group(1)), int(match.group(2))
        values = list(range(low, high + 1))
    else:
        try:
            values = [int(item) for item in value.split(',') if item.strip()]
        except ValueError as e:
            raise InvalidArgumentError(f"--m-range must look like 1..4 or 1,2,3, got {value!r}") from e
    if not values or min(values) < 1:
        raise InvalidArgumentError(f"--m-range must name depths >= 1, got {value!r}")
    return values


class Command(ExperimentCommand):
    help = 'Average transfer success rate as a function of the pyramid depth m'

    def add_arguments(self, parser):
        parser.add_argument('--m-range', default='1..3', help="Depths as '1..4' or '1,2,3'")
        parser.add_argument('--model', type=Path, action='append', required=True, help='Surrogate; repeat for an ensemble')
        parser.add_argument('--targets', type=Path, action='append', required=True, help='Target model; repeatable')
        parser.add_argument('--data', type=Path, required=True)
        parser.add_argument('--split', default=TEST)
        parser.add_argument('--n', type=int)
        parser.add_argument('--eps', type=float, default=16.0)
        parser.add_argument('--iters', type=int, default=10)
        parser.add_argument('--mu', type=float, default=1.0)
        parser.add_argument('--seed', type=int, default=settings.SGP_MASTER_SEED)
        parser.add_argument('--threads', type=int, default=settings.SGP_THREADS)
        parser.add_argument('--out', type=Path, required=True, help='(m, rate) CSV path')

    def run(self, **options):
        m_range = parse_m_range(options['m_range'])
        base_cfg = self.validated(AttackConfigSerializer, {
            'eps': options['eps'],
            'iters': options['iters'],
            'mu': options['mu'],
            'seed': options['seed'],
            'resize_mode': settings.SGP_RESIZE_MODE,
        }, min_pyramid_size=settings.SGP_MIN_PYRAMID_SIZE)
        surrogate = Surrogate.of([self.load_model(path) for path in options['model']])
        targets = [DefenseWrapper(self.load_model(path), name=path.stem) for path in options['targets']]
        dataset = self.load_dataset(options['data'], options['split'])

        curve = ablate_m(surrogate, targets, dataset, m_range, options['n'], base_cfg, options['threads'])

        out = options['out']
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(emit_curve(curve))
        self.record_output(out)
        self.record_output(write_sidecar(out, {
            'toolkit_version': sgplab.__version__,
            'created_at': timezone.now().isoformat(),
            'filter_clean': True,
            'base_config': base_cfg.as_dict(),
            'targets': [target.id for target in targets],
        }))
        for point in curve:
            self.stdout.write(f"m={point.m}: {point.rate:.4f}")
        return out
