import shutil
import struct
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command, load_command_class
from django.core.management.base import CommandError
from django.test import SimpleTestCase
from PIL import Image

from attacks.config import AttackConfig
from attacks.engine import mifgsm_attack
from data.idx import write_idx
from data.storage import load_dataset_dir
from evalharness.reports import parse_report
from nn.classifiers import CNN_A, CNN_B, MLP, Classifier
from nn.persistence import MAGIC, load_model, save_model
from sgplab.exceptions import ArchiveFormatError, DepthExceededError, IdxFormatError, InvalidArgumentError
from .archives import load_archive
from .base import EXIT_DATA, EXIT_INFEASIBLE, EXIT_USAGE, exit_code_for
from .management.commands.ablate import parse_m_range
from .manifest import RunManifest, command_line, read_manifest

REPLAY_CASES = {
    'gen_data': ['--n', '40', '--test-frac', '0.25', '--out', 'd'],
    'train': ['--arch', 'cnn_b', '--data', 'd', '--adv-eps', '8', '--out', 'm.sgpm'],
    'attack': ['--model', 'a.sgpm', '--model', 'b.sgpm', '--data', 'd', '--transforms', 'dim,tim', '--m', '2',
               '--out', 'adv'],
    'eval': ['--adv', 'x', '--adv', 'y', '--target', 't.sgpm', '--defense', 'blur:1.0', '--unfiltered',
             '--format', 'md', '--out', 'r.md'],
    'ablate': ['--m-range', '1,2', '--model', 'a.sgpm', '--targets', 't.sgpm', '--data', 'd', '--out', 'c.csv'],
    'heatmap': ['--model', 'a.sgpm', '--data', 'd', '--class', '2', '--scales', '3', '--out', 'h'],
    'scales': ['--data', 'd', '--resized', '--out', 's'],
}


def run(*args):
    out = StringIO()
    call_command(*[str(arg) for arg in args], stdout=out)
    return out.getvalue()


def tree_bytes(directory, skip=('manifest.json',)):
    return {
        str(path.relative_to(directory)): path.read_bytes()
        for path in sorted(Path(directory).rglob('*')) if path.is_file() and path.name not in skip
    }


class CommandTestCase(SimpleTestCase):
    """Shares one 16×16 dataset and untrained models across the tests of a class"""

    image_size = 16

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.root = Path(tempfile.mkdtemp())
        cls.data = cls.root / 'data'
        run('gen_data', '--n', 12, '--seed', 7, '--size', cls.image_size, '--out', cls.data)
        shape = (3, cls.image_size, cls.image_size)
        cls.models = {}
        for arch, seed in [(CNN_A, 0), (CNN_B, 1), (MLP, 2)]:
            cls.models[arch] = save_model(Classifier.initialize(arch, shape, 4, seed), cls.root / f'{arch}.sgpm')

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.root, ignore_errors=True)
        super().tearDownClass()

    def assertExitCode(self, code, *args):
        with self.assertRaises(CommandError) as caught:
            run(*args)
        self.assertEqual(caught.exception.returncode, code)
        return caught.exception


class GenDataTests(CommandTestCase):
    def test_split_and_manifest(self):
        self.assertEqual(len(load_dataset_dir(self.data / 'train')), 10)
        self.assertEqual(len(load_dataset_dir(self.data / 'test')), 2)
        manifest = read_manifest(self.data / 'manifest.json')
        self.assertEqual(manifest.command, 'gen_data')
        self.assertEqual(manifest.master_seed, 7)
        self.assertLessEqual(manifest.started_at, manifest.finished_at)

    def test_rerun_is_byte_identical(self):
        again = self.root / 'again'
        run('gen_data', '--n', 12, '--seed', 7, '--size', 16, '--out', again)
        self.assertEqual(tree_bytes(again), tree_bytes(self.data))

    def test_default_test_fraction(self):
        out = self.root / 'hundred'
        run('gen_data', '--n', 100, '--seed', 1, '--size', 16, '--out', out)
        self.assertEqual(len(load_dataset_dir(out / 'test')), 20)

    def test_empty_dataset_is_a_usage_error(self):
        self.assertExitCode(EXIT_USAGE, 'gen_data', '--n', 0, '--out', self.root / 'empty')

    def test_missing_flag_is_a_usage_error(self):
        self.assertExitCode(EXIT_USAGE, 'gen_data', '--n', 10)


class TrainCommandTests(CommandTestCase):
    def test_zero_epochs_saves_initialization(self):
        out = self.root / 'models' / 'zero.sgpm'
        run('train', '--arch', 'mlp', '--data', self.data, '--epochs', 0, '--seed', 5, '--out', out)
        expected = Classifier.initialize(MLP, (3, 16, 16), 4, seed=5)
        self.assertEqual(load_model(out).checksum(), expected.checksum())
        self.assertEqual(
            (out.parent / 'zero.metrics.csv').read_text(), 'epoch,loss,train_accuracy,test_accuracy\n'
        )
        self.assertTrue((out.parent / 'zero.manifest.json').exists())

    def test_metrics_row_per_epoch(self):
        out = self.root / 'models' / 'one.sgpm'
        run('train', '--arch', 'linear', '--data', self.data, '--epochs', 2, '--batch-size', 4, '--out', out)
        lines = (out.parent / 'one.metrics.csv').read_text().splitlines()
        self.assertEqual(len(lines), 3)
        self.assertEqual(lines[1].split(',')[0], '1')

    def test_adversarial_training_flag(self):
        out = self.root / 'models' / 'adv.sgpm'
        run('train', '--arch', 'cnn_b', '--data', self.data, '--epochs', 1, '--adv-eps', 8, '--out', out)
        self.assertEqual(load_model(out).architecture_id, CNN_B)

    def test_unknown_architecture_lists_valid_ids(self):
        error = self.assertExitCode(EXIT_USAGE, 'train', '--arch', 'vgg', '--data', self.data, '--out', self.root / 'x')
        self.assertIn('cnn_a', str(error))

    def test_bad_learning_rate(self):
        self.assertExitCode(EXIT_USAGE, 'train', '--arch', 'mlp', '--data', self.data, '--lr', 0,
                            '--out', self.root / 'bad.sgpm')

    def test_missing_data(self):
        self.assertExitCode(EXIT_DATA, 'train', '--arch', 'mlp', '--data', self.root / 'nowhere',
                            '--out', self.root / 'bad.sgpm')


class AttackCommandTests(CommandTestCase):
    def attack(self, out, *flags):
        run('attack', '--model', self.models[CNN_A], '--data', self.data, '--threads', 1, '--out', out, *flags)
        return load_archive(out)

    def test_budget_is_respected(self):
        archive = self.attack(self.root / 'adv-sgp', '--eps', 16, '--iters', 3, '--m', 2)
        self.assertEqual(len(archive), 2)
        self.assertLessEqual(np.abs(archive.x_adv - archive.x).max(), 16 / 255 + 1e-6)
        self.assertEqual(archive.attack, 'sgp-m2')
        self.assertEqual(archive.surrogate, CNN_A)
        self.assertTrue((self.root / 'adv-sgp' / 'adv' / '00001.ppm').exists())
        self.assertTrue((self.root / 'adv-sgp' / 'manifest.json').exists())

    def test_single_layer_matches_reference_mifgsm(self):
        archive = self.attack(self.root / 'adv-mi', '--iters', 2, '--m', 1)
        model = load_model(self.models[CNN_A])
        test_set = load_dataset_dir(self.data / 'test')
        cfg = AttackConfig(epsilon=16 / 255, iterations=2, layers=1)
        for i, example in enumerate(test_set.examples):
            reference = mifgsm_attack(model, example.image, example.label, cfg)
            self.assertEqual(archive.x_adv[i].tobytes(), reference.x_adv.tobytes())
        self.assertEqual(archive.attack, 'mifgsm')

    def test_ensemble_and_transforms(self):
        out = self.root / 'adv-ens'
        run('attack', '--model', self.models[CNN_A], '--model', self.models[MLP], '--data', self.data,
            '--iters', 2, '--m', 2, '--transforms', 'dim,tim', '--out', out)
        archive = load_archive(out)
        self.assertEqual(archive.surrogate, 'cnn_a+mlp')
        self.assertEqual(archive.attack, 'sgp-m2+dim+tim')

    def test_rerun_is_byte_identical(self):
        first = self.attack(self.root / 'adv-a', '--iters', 2, '--m', 2, '--transforms', 'dim', '--seed', 3)
        second = self.attack(self.root / 'adv-b', '--iters', 2, '--m', 2, '--transforms', 'dim', '--seed', 3)
        self.assertEqual(first.x_adv.tobytes(), second.x_adv.tobytes())
        self.assertEqual((self.root / 'adv-a' / 'x.npy').read_bytes(), (self.root / 'adv-b' / 'x.npy').read_bytes())

    def test_infeasible_depth_names_the_limit(self):
        error = self.assertExitCode(EXIT_INFEASIBLE, 'attack', '--model', self.models[CNN_A], '--data', self.data,
                                    '--m', 9, '--iters', 1, '--out', self.root / 'adv-deep')
        self.assertIn('feasible_depth = 2', str(error))

    def test_bad_flags(self):
        self.assertExitCode(EXIT_USAGE, 'attack', '--model', self.models[CNN_A], '--data', self.data,
                            '--transforms', 'admix', '--out', self.root / 'adv-bad')
        self.assertExitCode(EXIT_USAGE, 'attack', '--model', self.models[CNN_A], '--data', self.data,
                            '--eps', 300, '--out', self.root / 'adv-bad')

    def test_missing_model(self):
        self.assertExitCode(EXIT_DATA, 'attack', '--model', self.root / 'missing.sgpm', '--data', self.data,
                            '--out', self.root / 'adv-bad')

    def test_corrupt_model(self):
        broken = self.root / 'broken.sgpm'
        broken.write_bytes(b'SGPMODL1' + b'\x00' * 3)
        self.assertExitCode(EXIT_DATA, 'attack', '--model', broken, '--data', self.data, '--out', self.root / 'adv-bad')


class EvalCommandTests(CommandTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.clean = cls.root / 'adv-clean'
        cls.sgp = cls.root / 'adv-sgp'
        run('attack', '--model', cls.models[CNN_A], '--data', cls.data, '--eps', 0, '--iters', 2, '--m', 1,
            '--out', cls.clean)
        run('attack', '--model', cls.models[CNN_A], '--data', cls.data, '--iters', 2, '--m', 2, '--out', cls.sgp)

    def test_clean_archive_scores_zero(self):
        out = self.root / 'reports' / 'clean.csv'
        run('eval', '--adv', self.clean, '--target', self.models[CNN_B], '--target', self.models[MLP], '--out', out)
        lines = out.read_text().splitlines()
        self.assertEqual(lines[0], 'surrogate,attack,target,n,fooled,rate')
        self.assertEqual(len(lines), 3)
        self.assertTrue(all(line.endswith(',0,0.0000') for line in lines[1:]))
        self.assertTrue((out.parent / 'clean.json').exists())
        self.assertTrue((out.parent / 'clean.manifest.json').exists())

    def test_rerun_is_byte_identical(self):
        first, second = self.root / 'reports' / 'a.csv', self.root / 'reports' / 'b.csv'
        for out in (first, second):
            run('eval', '--adv', self.clean, '--adv', self.sgp, '--target', self.models[CNN_B],
                '--defense', 'none', '--defense', 'blur:1.0', '--defense', 'bitdepth:4', '--out', out)
        self.assertEqual(first.read_bytes(), second.read_bytes())
        report = parse_report(first.read_bytes())
        self.assertEqual(len(report.rows), 2 * 3)
        self.assertEqual({row.target for row in report.rows}, {'cnn_b', 'cnn_b+blur1.0', 'cnn_b+bitdepth4'})
        self.assertEqual({row.attack for row in report.rows}, {'identity', 'sgp-m2'})

    def test_markdown_and_adv_trained_targets(self):
        out = self.root / 'reports' / 'grid.md'
        run('eval', '--adv', self.sgp, '--adv-trained', self.models[CNN_B], '--format', 'md', '--out', out)
        text = out.read_text()
        self.assertIn('| Surrogate | Attack | cnn_b+adv | Avg. |', text)

    def test_requires_a_target(self):
        self.assertExitCode(EXIT_USAGE, 'eval', '--adv', self.clean, '--out', self.root / 'reports' / 'none.csv')

    def test_broken_archive(self):
        broken = self.root / 'broken-archive'
        broken.mkdir()
        self.assertExitCode(EXIT_DATA, 'eval', '--adv', broken, '--target', self.models[CNN_B],
                            '--out', self.root / 'reports' / 'broken.csv')

    def test_bad_defense(self):
        self.assertExitCode(EXIT_USAGE, 'eval', '--adv', self.clean, '--target', self.models[CNN_B],
                            '--defense', 'jpeg:75', '--out', self.root / 'reports' / 'jpeg.csv')


class AblateCommandTests(CommandTestCase):
    def test_curve_rows(self):
        out = self.root / 'ablate.csv'
        run('ablate', '--m-range', '1..2', '--model', self.models[CNN_A], '--targets', self.models[CNN_B],
            '--data', self.data, '--iters', 2, '--out', out)
        lines = out.read_text().splitlines()
        self.assertEqual(lines[0], 'm,rate')
        self.assertEqual([line.split(',')[0] for line in lines[1:]], ['1', '2'])
        self.assertTrue((self.root / 'ablate.json').exists())

    def test_infeasible_range(self):
        self.assertExitCode(EXIT_INFEASIBLE, 'ablate', '--m-range', '1..3', '--model', self.models[CNN_A],
                            '--targets', self.models[CNN_B], '--data', self.data, '--out', self.root / 'deep.csv')

    def test_parse_m_range(self):
        self.assertEqual(parse_m_range('1..4'), [1, 2, 3, 4])
        self.assertEqual(parse_m_range('1,3'), [1, 3])
        for value in ['', '0..2', 'a..b', '1;2']:
            with self.assertRaises(InvalidArgumentError, msg=value):
                parse_m_range(value)


class ImageCommandTests(CommandTestCase):
    image_size = 32

    def test_heatmaps_for_every_scale(self):
        out = self.root / 'heatmaps'
        run('heatmap', '--model', self.models[CNN_A], '--data', self.data, '--scales', 3, '--out', out)
        files = sorted(out.glob('*.pgm'))
        self.assertEqual(len(files), 7)
        for path in files:
            self.assertTrue(path.read_bytes().startswith(b'P5'))
            with Image.open(path) as img:
                self.assertEqual((img.format, img.mode, img.size), ('PPM', 'L', (32, 32)))

    def test_single_heatmap(self):
        out = self.root / 'heatmap-one'
        run('heatmap', '--model', self.models[CNN_B], '--data', self.data, '--image-index', 1, '--out', out)
        self.assertEqual([p.name for p in out.glob('*.pgm')], ['00001-heatmap.pgm'])

    def test_manifest_replays_run(self):
        out = self.root / 'heatmap-class'
        run('heatmap', '--model', self.models[CNN_A], '--data', self.data, '--class', 2, '--scales', 2, '--out', out)
        first = tree_bytes(out)
        manifest = read_manifest(out / 'manifest.json')
        self.assertIn('--class', manifest.argv())
        shutil.rmtree(out)
        run(*manifest.argv())
        self.assertEqual(tree_bytes(out), first)

    def test_conv_free_model(self):
        self.assertExitCode(EXIT_INFEASIBLE, 'heatmap', '--model', self.models[MLP], '--data', self.data,
                            '--out', self.root / 'heatmap-mlp')

    def test_model_with_malformed_header(self):
        bad = self.root / 'bad-header.sgpm'
        header = b'{"format_version": 1, "architecture_id": "cnn_a"}'
        bad.write_bytes(MAGIC + struct.pack('<I', len(header)) + header + b'\x00' * 4)
        self.assertExitCode(EXIT_DATA, 'heatmap', '--model', bad, '--data', self.data,
                            '--out', self.root / 'heatmap-bad-model')

    def test_image_index_out_of_range(self):
        self.assertExitCode(EXIT_USAGE, 'heatmap', '--model', self.models[CNN_A], '--data', self.data,
                            '--image-index', 99, '--out', self.root / 'heatmap-bad')

    def test_scale_examples(self):
        out = self.root / 'scales'
        run('scales', '--data', self.data, '--m', 3, '--out', out)
        names = sorted(p.name for p in out.glob('*.ppm'))
        self.assertEqual(len(names), 7)
        self.assertEqual(names[0], '00000-00-L1-original.ppm')
        with Image.open(out / names[-1]) as img:
            self.assertEqual(img.size, (8, 16))

    def test_idx_input(self):
        idx_dir = self.root / 'idx'
        idx_dir.mkdir()
        pixels = np.random.default_rng(0).integers(0, 256, size=(3, 16, 16), dtype=np.uint8)
        write_idx(pixels, [0, 1, 1], idx_dir / 'images.idx', idx_dir / 'labels.idx')
        out = self.root / 'idx-scales'
        run('scales', '--data', idx_dir, '--m', 2, '--resized', '--out', out)
        with Image.open(out / '00000-03-L2-c.ppm') as img:
            self.assertEqual(img.size, (16, 16))

    def test_corrupt_idx(self):
        idx_dir = self.root / 'idx-bad'
        idx_dir.mkdir()
        (idx_dir / 'images.idx').write_bytes(b'\x00\x00\x08\x01' + b'\x00' * 12)
        (idx_dir / 'labels.idx').write_bytes(b'\x00\x00\x08\x01\x00\x00\x00\x00')
        self.assertExitCode(EXIT_DATA, 'scales', '--data', idx_dir, '--out', self.root / 'idx-bad-out')


class PlumbingTests(SimpleTestCase):
    def test_exit_codes(self):
        self.assertEqual(exit_code_for(InvalidArgumentError('x')), EXIT_USAGE)
        self.assertEqual(exit_code_for(DepthExceededError(9, 3, (3, 32, 32), 'height 32')), EXIT_INFEASIBLE)
        self.assertEqual(exit_code_for(IdxFormatError('f', 'bad')), EXIT_DATA)
        self.assertEqual(exit_code_for(FileNotFoundError('f')), EXIT_DATA)

    def test_manifest_arguments_reparse(self):
        for name, args in REPLAY_CASES.items():
            with self.subTest(command=name):
                parser = load_command_class('cli', name).create_parser('manage.py', name)
                options = vars(parser.parse_args(args))
                self.assertEqual(vars(parser.parse_args(command_line(parser, options))), options)

    def test_manifest_argv_keeps_comma_lists(self):
        parser = load_command_class('cli', 'attack').create_parser('manage.py', 'attack')
        options = vars(parser.parse_args(['--model', 'a.sgpm', '--model', 'b.sgpm', '--data', 'd',
                                          '--transforms', 'dim,tim', '--out', 'adv']))
        manifest = RunManifest('attack', options, 0, '0.1.0', arguments=command_line(parser, options))
        argv = manifest.argv()
        self.assertEqual(argv[argv.index('--transforms') + 1], 'dim,tim')
        self.assertEqual(argv.count('--model'), 2)

    def test_archive_missing_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ArchiveFormatError):
                load_archive(tmp)
