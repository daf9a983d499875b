from pathlib import Path

from django.conf import settings

from cli.base import ExperimentCommand
from data.datasets import TEST
from data.imageio import write_pgm
from evalharness.gradcam import gradcam, scale_heatmaps
from sgplab.exceptions import InvalidArgumentError


class Command(ExperimentCommand):
    help = 'Export Grad-CAM heatmaps (8-bit PGM) of one image, optionally for every pyramid scale example'

    def add_arguments(self, parser):
        parser.add_argument('--model', type=Path, required=True)
        parser.add_argument('--data', type=Path, required=True)
        parser.add_argument('--split', default=TEST)
        parser.add_argument('--image-index', type=int, default=0)
        parser.add_argument('--class', dest='class_idx', type=int, help='Class to explain (default: true label)')
        parser.add_argument('--scales', type=int, metavar='M',
                            help='Dump one heatmap per scale example of an M-layer pyramid')
        parser.add_argument('--out', type=Path, required=True, help='Output directory')

    def run(self, **options):
        model = self.load_model(options['model'])
        dataset = self.load_dataset(options['data'], options['split'])
        index = options['image_index']
        if not 0 <= index < len(dataset):
            raise InvalidArgumentError(f"--image-index {index} outside [0, {len(dataset)})")
        example = dataset[index]
        class_idx = example.label if options['class_idx'] is None else options['class_idx']

        out = options['out']
        if options['scales'] is None:
            self.record_output(write_pgm(out / f'{index:05d}-heatmap.pgm', gradcam(model, example.image, class_idx)))
        else:
            maps = scale_heatmaps(
                model, example.image, class_idx, options['scales'],
                settings.SGP_MIN_PYRAMID_SIZE, settings.SGP_RESIZE_MODE,
            )
            for k, (tag, _, heatmap) in enumerate(maps):
                self.record_output(write_pgm(out / f'{index:05d}-{k:02d}-{tag}.pgm', heatmap))
        self.stdout.write(f"{len(self.outputs)} heatmap(s) written to {out}")
        return out
