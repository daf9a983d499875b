import csv
from pathlib import Path

from django.conf import settings

from attacks.serializers import PIXEL_SCALE
from cli.base import ExperimentCommand
from data.datasets import TEST, TRAIN
from data.storage import METADATA_FILE
from evalharness.experiments import adversarial_training
from nn.classifiers import ARCHITECTURE_IDS, Classifier
from nn.persistence import save_model
from nn.serializers import TrainConfigSerializer
from nn.training import train
from sgplab.exceptions import InvalidArgumentError

METRIC_COLUMNS = ['epoch', 'loss', 'train_accuracy', 'test_accuracy']


def write_metrics(history, path) -> Path:
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(METRIC_COLUMNS)
        for m in history:
            test = '' if m.test_accuracy is None else f'{m.test_accuracy:.4f}'
            writer.writerow([m.epoch, f'{m.loss:.6f}', f'{m.train_accuracy:.4f}', test])
    return Path(path)


class Command(ExperimentCommand):
    help = 'Train a classifier on a dataset directory and save its weight container'

    def add_arguments(self, parser):
        parser.add_argument('--arch', choices=ARCHITECTURE_IDS, required=True)
        parser.add_argument('--data', type=Path, required=True, help='Dataset directory (uses train/ and test/ when present)')
        parser.add_argument('--epochs', type=int, default=15)
        parser.add_argument('--lr', type=float, default=0.05)
        parser.add_argument('--batch-size', type=int, default=32)
        parser.add_argument('--momentum', type=float, default=0.9)
        parser.add_argument('--seed', type=int, default=settings.SGP_MASTER_SEED)
        parser.add_argument('--adv-eps', type=float, default=0.0,
                            help='Adversarial training budget on the 0-255 scale; 0 trains plainly')
        parser.add_argument('--out', type=Path, required=True, help='Model container path')

    def run(self, **options):
        cfg = self.validated(TrainConfigSerializer, {
            'architecture_id': options['arch'],
            'epochs': options['epochs'],
            'batch_size': options['batch_size'],
            'learning_rate': options['lr'],
            'momentum': options['momentum'],
            'seed': options['seed'],
        })
        data = options['data']
        train_set = self.load_dataset(data, TRAIN)
        test_set = self.load_dataset(data, TEST) if (data / TEST / METADATA_FILE).exists() else None

        if options['adv_eps'] < 0:
            raise InvalidArgumentError(f"--adv-eps must be >= 0, got {options['adv_eps']}")
        if options['adv_eps'] > 0:
            outcome = adversarial_training(cfg, options['adv_eps'] / PIXEL_SCALE, train_set, test_set, options['arch'])
            model, history = outcome.defense.inner, outcome.training.history
        else:
            initial = Classifier.initialize(options['arch'], train_set.image_shape, train_set.num_classes, cfg.seed)
            result = train(initial, train_set, cfg, test_set)
            model, history = result.model, result.history

        out = options['out']
        self.record_output(save_model(model, out))
        self.record_output(write_metrics(history, out.with_name(f'{out.stem}.metrics.csv')))
        if history and history[-1].test_accuracy is not None:
            self.stdout.write(f"{options['arch']}: final test accuracy {history[-1].test_accuracy:.4f}")
        return out
