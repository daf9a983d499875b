from pathlib import Path

from django.conf import settings

from attacks.config import attack_label
from attacks.gradients import Surrogate
from attacks.serializers import AttackConfigSerializer
from cli.archives import save_archive
from cli.base import ExperimentCommand
from data.datasets import TEST
from evalharness.metrics import generate_adversarial_set


def comma_list(value):
    return [item.strip() for item in value.split(',') if item.strip()]


class Command(ExperimentCommand):
    help = 'Craft adversarial examples against one surrogate model or an ensemble and archive them'

    def add_arguments(self, parser):
        parser.add_argument('--model', type=Path, action='append', required=True,
                            help='Surrogate model container; repeat for an ensemble')
        parser.add_argument('--weights', type=float, action='append',
                            help='Ensemble weight per --model (default: equal)')
        parser.add_argument('--data', type=Path, required=True)
        parser.add_argument('--split', default=TEST)
        parser.add_argument('--n', type=int, help='Attack only the first N examples')
        parser.add_argument('--eps', type=float, default=16.0, help='L-inf budget on the 0-255 scale')
        parser.add_argument('--iters', type=int, default=10)
        parser.add_argument('--alpha', type=float, help='Step size on the 0-255 scale (default: eps/iters)')
        parser.add_argument('--mu', type=float, default=1.0, help='Momentum decay')
        parser.add_argument('--m', type=int, default=3, help='Pyramid layers; 1 is plain MI-FGSM')
        parser.add_argument('--transforms', type=comma_list, default=[], help='Comma list of dim,tim,sim')
        parser.add_argument('--grad-mode', default='chained')
        parser.add_argument('--resize-mode', default=settings.SGP_RESIZE_MODE)
        parser.add_argument('--seed', type=int, default=settings.SGP_MASTER_SEED)
        parser.add_argument('--threads', type=int, default=settings.SGP_THREADS)
        parser.add_argument('--out', type=Path, required=True, help='Archive directory')

    def run(self, **options):
        cfg = self.validated(AttackConfigSerializer, {
            'eps': options['eps'],
            'iters': options['iters'],
            'alpha': options['alpha'],
            'mu': options['mu'],
            'm': options['m'],
            'grad_mode': options['grad_mode'],
            'transforms': options['transforms'],
            'seed': options['seed'],
            'resize_mode': options['resize_mode'],
        }, min_pyramid_size=settings.SGP_MIN_PYRAMID_SIZE)
        models = [self.load_model(path) for path in options['model']]
        surrogate = Surrogate.of(models, options['weights'])
        dataset = self.load_dataset(options['data'], options['split'])

        results = generate_adversarial_set(surrogate, cfg, dataset, options['n'], options['threads'])
        metadata = {
            'surrogate': '+'.join(path.stem for path in options['model']),
            'models': [{'path': str(path), 'sha256': model.checksum()} for path, model in zip(options['model'], models)],
            'weights': list(surrogate.weights),
            'attack': attack_label(cfg),
            'config': cfg.as_dict(),
            'data': str(options['data']),
            'split': dataset.split,
        }
        out = options['out']
        self.record_output(save_archive(results, out, metadata))
        worst = max((r.linf for r in results), default=0.0)
        self.stdout.write(f"{len(results)} examples attacked with {metadata['attack']}; max L-inf {worst * 255:.4f}/255")
        return out
