from pathlib import Path

from django.conf import settings

from cli.base import ExperimentCommand
from data.datasets import TEST, TRAIN, split
from data.storage import save_dataset_dir
from data.synthetic import gen_synthetic
from sgplab.exceptions import InvalidArgumentError


class Command(ExperimentCommand):
    help = 'Generate the seeded synthetic shapes dataset as <out>/train and <out>/test'

    def add_arguments(self, parser):
        parser.add_argument('--n', type=int, default=1000, help='Number of examples')
        parser.add_argument('--seed', type=int, default=settings.SGP_MASTER_SEED)
        parser.add_argument('--size', type=int, default=settings.SGP_IMAGE_SIZE, help='Image side length')
        parser.add_argument('--test-frac', type=float, default=0.2)
        parser.add_argument('--out', type=Path, required=True)

    def run(self, **options):
        if options['n'] < 1:
            raise InvalidArgumentError(f"--n must be at least 1, got {options['n']}")
        dataset = gen_synthetic(options['n'], seed=options['seed'], image_size=options['size'])
        train_set, test_set = split(dataset, options['test_frac'], seed=options['seed'])

        out = options['out']
        self.record_output(save_dataset_dir(train_set, out / TRAIN))
        self.record_output(save_dataset_dir(test_set, out / TEST))
        self.stdout.write(f"{len(train_set)} train / {len(test_set)} test examples written to {out}")
        return out
