from pathlib import Path

from django.conf import settings

from cli.base import ExperimentCommand
from data.datasets import TEST
from data.imageio import write_ppm
from pyramid.sgp import build_sgp
from sgplab.exceptions import InvalidArgumentError


class Command(ExperimentCommand):
    help = 'Dump the 3m-2 scale examples of one image as numbered PPM files'

    def add_arguments(self, parser):
        parser.add_argument('--data', type=Path, required=True)
        parser.add_argument('--split', default=TEST)
        parser.add_argument('--image-index', type=int, default=0)
        parser.add_argument('--m', type=int, default=3)
        parser.add_argument('--resized', action='store_true', help='Bring every example back to the input size')
        parser.add_argument('--out', type=Path, required=True, help='Output directory')

    def run(self, **options):
        dataset = self.load_dataset(options['data'], options['split'])
        index = options['image_index']
        if not 0 <= index < len(dataset):
            raise InvalidArgumentError(f"--image-index {index} outside [0, {len(dataset)})")
        x = dataset[index].image
        scales = build_sgp(x, options['m'], settings.SGP_MIN_PYRAMID_SIZE)

        out = options['out']
        for k, example in enumerate(scales):
            image = example.resized(x.shape, settings.SGP_RESIZE_MODE) if options['resized'] else example.image
            self.record_output(write_ppm(out / f'{index:05d}-{k:02d}-{example.tag}.ppm', image))
        self.stdout.write(f"{len(scales)} scale examples written to {out}")
        return out
