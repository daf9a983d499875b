import json
import tempfile
import unittest
from pathlib import Path

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from attacks.config import AttackConfig, preset_config
from attacks.engine import AdversarialResult
from data.datasets import split
from data.synthetic import gen_synthetic
from nn.classifiers import CNN_A, CNN_B, LINEAR, MLP, Classifier
from nn.training import TrainConfig, train
from sgplab.exceptions import DepthExceededError, InvalidArgumentError, UnsupportedArchitectureError
from .defenses import ADV_TRAINED, BITDEPTH, BLUR, DefenseWrapper, blur_kernel, reduce_bit_depth
from .experiments import ablate_m, adversarial_training, robust_accuracy, summarize, transfer_matrix
from .gradcam import active_fraction, gradcam, scale_heatmaps
from .metrics import attack_success_rate, count_successes, generate_adversarial_set
from .reports import EvalReport, ReportRow, emit_curve, emit_report, parse_report, write_report

SMALL = (3, 16, 16)
HEADER = b'surrogate,attack,target,n,fooled,rate\n'


def two_pixel_model(bias=(0.0, 0.0), scale=1.0):
    """Logits equal the two input pixels (times scale) plus bias"""
    model = Classifier(LINEAR, (2, 1, 1), 2)
    params = model.tensors()
    params['fc.weight'][...] = scale * np.eye(2)
    params['fc.bias'][...] = bias
    return model


def two_pixel_images():
    images = np.array([[0.9, 0.1], [0.1, 0.9], [0.8, 0.3]], dtype=np.float32).reshape(3, 2, 1, 1)
    return images, np.array([0, 1, 0])


def small_dataset(n=6, seed=0):
    return gen_synthetic(n, seed=seed, image_size=16)


class SuccessRateTests(SimpleTestCase):
    def test_clean_images_on_accurate_target(self):
        images, labels = two_pixel_images()
        records = [(x, x, y) for x, y in zip(images, labels)]
        self.assertEqual(attack_success_rate(two_pixel_model(), records), 0.0)

    def test_constant_predictor_fools_every_unfiltered_example(self):
        always_zero = two_pixel_model(bias=(10.0, 0.0))
        images, _ = two_pixel_images()
        records = [(x, x, 1) for x in images]
        self.assertEqual(attack_success_rate(always_zero, records, filter_clean=False), 1.0)

    def test_constant_predictor_fools_every_pair(self):
        always_zero = Classifier(LINEAR, (3, 8, 8), 2)
        pairs = [(np.zeros((3, 8, 8), dtype=np.float32), 1) for _ in range(4)]
        self.assertEqual(attack_success_rate(always_zero, pairs), 1.0)

    def test_pairs_of_clean_images_on_accurate_target(self):
        images, labels = two_pixel_images()
        self.assertEqual(attack_success_rate(two_pixel_model(), list(zip(images, labels))), 0.0)

    def test_malformed_records_are_rejected(self):
        images, labels = two_pixel_images()
        with self.assertRaises(InvalidArgumentError):
            count_successes(two_pixel_model(), [(images[0], 0), (images[1], images[1], 1)])
        with self.assertRaises(InvalidArgumentError):
            count_successes(two_pixel_model(), [(images[0], images[0], images[0], 0)])

    def test_everything_filtered_gives_zero(self):
        always_zero = two_pixel_model(bias=(10.0, 0.0))
        images, _ = two_pixel_images()
        with self.assertLogs('evalharness.metrics', 'WARNING'):
            counts = count_successes(always_zero, [(x, x, 1) for x in images])
        self.assertEqual((counts.n, counts.fooled, counts.rate), (0, 0, 0.0))

    def test_flipped_prediction_counts_as_success(self):
        images, labels = two_pixel_images()
        flipped = images[:, ::-1].copy()
        records = [(x, x_adv, y) for x, x_adv, y in zip(images, flipped, labels)]
        self.assertEqual(attack_success_rate(two_pixel_model(), records), 1.0)

    def test_accepts_attack_results(self):
        images, labels = two_pixel_images()
        results = [AdversarialResult(x, x.copy(), int(y)) for x, y in zip(images, labels)]
        self.assertEqual(count_successes(two_pixel_model(), results).n, 3)

    def test_empty_set_is_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            attack_success_rate(two_pixel_model(), [])

    def test_adversarial_set_does_not_depend_on_thread_count(self):
        model = Classifier.initialize(CNN_A, SMALL, 4, seed=2)
        cfg = AttackConfig(iterations=2, layers=2, dim_prob=0.5, seed=5)
        ds = small_dataset(6)
        serial = generate_adversarial_set(model, cfg, ds, threads=1)
        parallel = generate_adversarial_set(model, cfg, ds, threads=3)
        self.assertEqual(len(serial), 6)
        for a, b in zip(serial, parallel):
            self.assertEqual(a.x_adv.tobytes(), b.x_adv.tobytes())
            self.assertEqual(a.loss_trace, b.loss_trace)

    def test_adversarial_set_respects_n(self):
        model = Classifier.initialize(MLP, SMALL, 4, seed=0)
        results = generate_adversarial_set(model, AttackConfig(iterations=1, layers=1), small_dataset(6), n=2)
        self.assertEqual([r.label for r in results], small_dataset(6).labels[:2].tolist())


class DefenseTests(SimpleTestCase):
    def test_blur_kernel_is_normalized(self):
        kernel = blur_kernel(1.0)
        self.assertEqual(kernel.shape, (7, 7))
        self.assertAlmostEqual(kernel.sum(), 1.0)

    def test_blur_keeps_constant_images(self):
        defense = DefenseWrapper(Classifier(MLP, SMALL, 4), BLUR, 1.0)
        batch = np.full((2,) + SMALL, 0.4, dtype=np.float32)
        np.testing.assert_allclose(defense.preprocess(batch), batch, atol=1e-6)

    def test_bit_depth_reduction(self):
        reduced = reduce_bit_depth(np.array([0.0, 0.03, 0.5, 1.0]), 1)
        np.testing.assert_array_equal(reduced, [0.0, 0.0, 0.0, 1.0])
        self.assertEqual(len(np.unique(reduce_bit_depth(np.linspace(0, 1, 1000), 4))), 16)

    def test_ids(self):
        model = Classifier(CNN_B, SMALL, 4)
        self.assertEqual(DefenseWrapper(model, name='cnn_b').id, 'cnn_b')
        self.assertEqual(DefenseWrapper.parse(model, 'cnn_b', 'blur:1.0').id, 'cnn_b+blur1.0')
        self.assertEqual(DefenseWrapper.parse(model, 'cnn_b', 'bitdepth:4').id, 'cnn_b+bitdepth4')
        self.assertEqual(DefenseWrapper(model, ADV_TRAINED, name='cnn_b').id, 'cnn_b+adv')
        self.assertEqual(DefenseWrapper(model, BITDEPTH).param, 4)

    def test_bad_defenses(self):
        model = Classifier(CNN_B, SMALL, 4)
        for spec in ['jpeg:75', 'blur:0', 'bitdepth:9', 'blur:x', 'bitdepth:4.5', 'bitdepth:nan']:
            with self.assertRaises(InvalidArgumentError, msg=spec):
                DefenseWrapper.parse(model, 'cnn_b', spec)

    def test_whole_bit_depth_written_as_float(self):
        defense = DefenseWrapper.parse(Classifier(CNN_B, SMALL, 4), 'cnn_b', 'bitdepth:4.0')
        self.assertEqual(defense.id, 'cnn_b+bitdepth4')

    def test_plain_wrapper_predicts_like_the_model(self):
        model = Classifier.initialize(CNN_A, SMALL, 4, seed=1)
        batch = small_dataset(4).images
        np.testing.assert_array_equal(DefenseWrapper(model).predict(batch), model.predict(batch))


class GradCamTests(SimpleTestCase):
    def test_zero_model_gives_zero_map(self):
        heatmap = gradcam(Classifier(CNN_A, SMALL, 4), small_dataset(1).images[0], 0)
        self.assertEqual(heatmap.shape, (1, 16, 16))
        self.assertFalse(heatmap.any())

    def test_values_are_normalized(self):
        for arch in (CNN_A, CNN_B):
            model = Classifier.initialize(arch, SMALL, 4, seed=3)
            for class_idx in range(4):
                heatmap = gradcam(model, small_dataset(1, seed=class_idx).images[0], class_idx)
                self.assertEqual(heatmap.shape, (1, 16, 16))
                self.assertGreaterEqual(heatmap.min(), 0.0)
                self.assertLessEqual(heatmap.max(), 1.0)
                if heatmap.any():
                    self.assertAlmostEqual(float(heatmap.max()), 1.0, places=6)

    def test_uniform_logit_shift_leaves_map_unchanged(self):
        model = Classifier.initialize(CNN_A, SMALL, 4, seed=4)
        shifted = model.copy()
        shifted.tensors()['fc.bias'][...] += 3.0
        x = small_dataset(1).images[0]
        np.testing.assert_array_equal(gradcam(model, x, 2), gradcam(shifted, x, 2))

    def test_conv_free_model_is_unsupported(self):
        with self.assertRaises(UnsupportedArchitectureError):
            gradcam(Classifier(MLP, SMALL, 4), small_dataset(1).images[0], 0)

    def test_class_index_out_of_range(self):
        with self.assertRaises(InvalidArgumentError):
            gradcam(Classifier(CNN_A, SMALL, 4), small_dataset(1).images[0], 4)

    def test_one_map_per_scale_example(self):
        model = Classifier.initialize(CNN_A, (3, 32, 32), 4, seed=0)
        x = gen_synthetic(1, seed=0).images[0]
        maps = scale_heatmaps(model, x, 0, 3)
        self.assertEqual(len(maps), 7)
        self.assertEqual(maps[0][0], 'L1-original')
        self.assertTrue(all(heatmap.shape == (1, 32, 32) for _, _, heatmap in maps))


class ReportTests(SimpleTestCase):
    def test_empty_report_is_header_only(self):
        self.assertEqual(emit_report(EvalReport()), HEADER)

    def test_row_format(self):
        blob = emit_report(EvalReport([ReportRow('a', 'sgp', 'b', 200, 57)]))
        self.assertEqual(blob.decode().splitlines()[1], 'a,sgp,b,200,57,0.2850')

    def test_parse_inverts_emit(self):
        report = EvalReport([ReportRow('a', 'sgp', 'b', 200, 57), ReportRow('a', 'mifgsm', 'b+blur1.0', 3, 0)])
        self.assertEqual(parse_report(emit_report(report)).rows, report.rows)

    def test_parse_inverts_emit_for_rates_on_a_rounding_tie(self):
        report = EvalReport([ReportRow('a', 'sgp', 'b', 32, 1), ReportRow('a', 'sgp', 'c', 160, 1)])
        blob = emit_report(report)
        self.assertEqual(blob.decode().splitlines()[1], 'a,sgp,b,32,1,0.0312')
        self.assertEqual(parse_report(blob), report)

    def test_parsed_report_has_no_metadata(self):
        report = EvalReport([ReportRow('a', 'sgp', 'b', 4, 1)], metadata={'toolkit_version': '0.1.0'})
        self.assertEqual(parse_report(emit_report(report)).metadata, {})

    def test_parse_rejects_inconsistent_rows(self):
        with self.assertRaises(InvalidArgumentError):
            parse_report(HEADER + b'a,sgp,b,200,57,0.5000\n')
        with self.assertRaises(InvalidArgumentError):
            parse_report(HEADER + b'a,sgp,b,2,3,1.5000\n')
        with self.assertRaises(InvalidArgumentError):
            parse_report(b'surrogate,attack,target,rate\n')

    def test_markdown_grid(self):
        report = EvalReport([ReportRow('a', 'sgp', 'b', 200, 57), ReportRow('a', 'sgp', 'c', 200, 103)])
        lines = emit_report(report, 'md').decode().splitlines()
        self.assertEqual(lines[0], '| Surrogate | Attack | b | c | Avg. |')
        self.assertEqual(lines[2], '| a | sgp | 28.5 | 51.5 | 40.0 |')

    def test_unknown_format(self):
        with self.assertRaises(InvalidArgumentError):
            emit_report(EvalReport(), 'xlsx')

    def test_sidecar_is_written_next_to_report(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_report(EvalReport([], {'master_seed': 7}), Path(tmp) / 'out' / 'report.csv')
            self.assertEqual(path.read_bytes(), HEADER)
            self.assertEqual(json.loads(path.with_suffix('.json').read_text()), {'master_seed': 7})

    def test_curve(self):
        self.assertEqual(emit_curve([(1, 0.25), (2, 0.5)]), b'm,rate\n1,0.2500\n2,0.5000\n')


class ExperimentTests(SimpleTestCase):
    def setUp(self):
        self.surrogate = Classifier.initialize(CNN_A, SMALL, 4, seed=0)
        self.target = Classifier.initialize(CNN_B, SMALL, 4, seed=1)
        self.dataset = small_dataset(8, seed=3)

    def test_identity_attack_scores_zero(self):
        report = transfer_matrix(
            {'cnn_a': self.surrogate}, {'identity': preset_config('identity', iterations=2)},
            [DefenseWrapper(self.target, name='cnn_b')], self.dataset,
        )
        self.assertEqual(len(report.rows), 1)
        self.assertEqual(report.rows[0].fooled, 0)
        self.assertEqual(report.rows[0].rate, 0.0)

    def test_grid_shape_rates_and_determinism(self):
        surrogates = {'cnn_a': self.surrogate, 'cnn_a+mlp': [self.surrogate, Classifier.initialize(MLP, SMALL, 4)]}
        attacks = {'mifgsm': AttackConfig(iterations=2, layers=1), 'sgp': AttackConfig(iterations=2, layers=2)}
        targets = [
            DefenseWrapper(self.target, name='cnn_b'),
            DefenseWrapper.parse(self.target, 'cnn_b', 'bitdepth:4'),
            DefenseWrapper.parse(self.target, 'cnn_b', 'blur:1.0'),
        ]
        first = transfer_matrix(surrogates, attacks, targets, self.dataset, n=4)
        second = transfer_matrix(surrogates, attacks, targets, self.dataset, n=4, threads=2)
        self.assertEqual(len(first.rows), 2 * 2 * 3)
        self.assertTrue(all(0.0 <= row.rate <= 1.0 for row in first.rows))
        self.assertEqual(emit_report(first), emit_report(second))
        self.assertEqual(set(summarize(first)), {'cnn_a/mifgsm', 'cnn_a/sgp', 'cnn_a+mlp/mifgsm', 'cnn_a+mlp/sgp'})

    def test_mismatched_models_are_rejected(self):
        other = Classifier.initialize(CNN_B, (3, 32, 32), 4)
        with self.assertRaises(InvalidArgumentError):
            transfer_matrix({'a': self.surrogate}, {'mifgsm': AttackConfig(layers=1)}, [other], self.dataset)

    def test_depth_one_ablation_matches_mifgsm_row(self):
        cfg = AttackConfig(iterations=2, layers=1)
        curve = ablate_m(self.surrogate, [self.target], self.dataset, [1], base_cfg=cfg)
        report = transfer_matrix({'a': self.surrogate}, {'mifgsm': cfg}, [self.target], self.dataset)
        self.assertEqual(curve[0].m, 1)
        self.assertEqual(curve[0].rate, report.rows[0].rate)

    def test_infeasible_ablation_fails_up_front(self):
        with self.assertRaises(DepthExceededError) as caught:
            ablate_m(self.surrogate, [self.target], self.dataset, [1, 2, 3])
        self.assertEqual(caught.exception.feasible, 2)

    def test_zero_epsilon_adversarial_training_matches_plain_training(self):
        cfg = TrainConfig(epochs=2, batch_size=4, seed=1)
        adversarial = adversarial_training(cfg, 0.0, self.dataset)
        plain = train(Classifier.initialize(CNN_B, SMALL, 4, seed=1), self.dataset, cfg)
        self.assertEqual(adversarial.defense.inner.checksum(), plain.model.checksum())
        self.assertEqual(adversarial.training.history, plain.history)
        self.assertEqual(adversarial.defense.id, 'cnn_b+adv')

    def test_robust_accuracy_in_range(self):
        accuracy = robust_accuracy(self.target, self.target, AttackConfig(iterations=2, layers=1), self.dataset, n=4)
        self.assertTrue(0.0 <= accuracy <= 1.0)


@unittest.skipUnless(settings.SGP_RUN_BENCHMARKS, "set SGP_RUN_BENCHMARKS=1 to run seeded regression benchmarks")
class TransferBenchmarks(SimpleTestCase):
    """Ordering checks on the seeded synthetic benchmark (200 test examples)"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.train_set, cls.test_set = split(gen_synthetic(1000, seed=7), 0.2, seed=7)
        cfg = TrainConfig(epochs=15)
        cls.models = {
            arch: train(Classifier.initialize(arch, seed=seed), cls.train_set, cfg).model
            for arch, seed in [(CNN_A, 0), (CNN_B, 1), (MLP, 2)]
        }
        cls.target = DefenseWrapper(cls.models[CNN_B], name=CNN_B)

    def rate(self, surrogate, attack):
        report = transfer_matrix({'s': surrogate}, {attack: preset_config(attack)}, [self.target], self.test_set)
        return report.rows[0].rate

    def test_sgp_beats_mifgsm(self):
        self.assertGreater(self.rate(self.models[CNN_A], 'sgp'), self.rate(self.models[CNN_A], 'mifgsm'))

    def test_sgp_dim_beats_dim(self):
        self.assertGreaterEqual(self.rate(self.models[CNN_A], 'sgp-dim'), self.rate(self.models[CNN_A], 'dim'))

    def test_white_box_mifgsm(self):
        report = transfer_matrix({'cnn_b': self.models[CNN_B]}, {'mifgsm': preset_config('mifgsm')},
                                 [self.target], self.test_set)
        self.assertGreaterEqual(report.rows[0].rate, 0.9)

    def test_ensemble_surrogate_beats_single(self):
        ensemble = [self.models[CNN_A], self.models[MLP]]
        self.assertGreaterEqual(self.rate(ensemble, 'sgp'), self.rate(self.models[CNN_A], 'sgp'))

    def test_depth_ablation(self):
        curve = dict(ablate_m(self.models[CNN_A], [self.target], self.test_set, [1, 2, 3]))
        self.assertGreaterEqual(curve[3], curve[1])

    def test_adversarial_training_margins(self):
        cfg = TrainConfig(epochs=15, seed=1)
        defended = adversarial_training(cfg, 8 / 255, self.train_set, self.test_set).defense
        plain = self.models[CNN_B]
        attack = preset_config('mifgsm')
        robust_gain = (robust_accuracy(defended, defended.inner, attack, self.test_set)
                       - robust_accuracy(plain, plain, attack, self.test_set))
        self.assertGreaterEqual(robust_gain, 0.10)
        self.assertLessEqual(
            plain.accuracy(self.test_set.images, self.test_set.labels)
            - defended.inner.accuracy(self.test_set.images, self.test_set.labels),
            0.10,
        )

    def test_deep_scale_heatmaps_cover_more(self):
        x, y = self.test_set.images[0], int(self.test_set.labels[0])
        maps = scale_heatmaps(self.models[CNN_A], x, y, 3)
        clean = active_fraction(maps[0][2])
        deepest = [active_fraction(heatmap) for tag, _, heatmap in maps if tag.startswith('L3')]
        self.assertGreaterEqual(max(deepest), clean)
