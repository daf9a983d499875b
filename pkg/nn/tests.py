import json
import math
import struct
import tempfile
import unittest
import zlib
from pathlib import Path

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from data.datasets import Dataset, split
from data.synthetic import gen_synthetic
from sgplab.exceptions import (
    ChecksumError,
    InvalidArgumentError,
    ModelFormatError,
    TruncatedModelError,
    UnsupportedArchitectureError,
    VersionMismatchError,
)
from .classifiers import ARCHITECTURE_IDS, CNN_A, CNN_B, LINEAR, MLP, Classifier
from .gradcheck import grad_check
from .persistence import FORMAT_VERSION, MAGIC, dumps_model, load_model, loads_model, save_model
from .serializers import TrainConfigSerializer
from .training import TrainConfig, train

SMALL_SHAPE = (3, 8, 8)


def container(header, payload=b''):
    """A model container around an arbitrary JSON header"""
    header_bytes = json.dumps(header).encode('utf-8')
    return b''.join([MAGIC, struct.pack('<I', len(header_bytes)), header_bytes, payload,
                     struct.pack('<I', zlib.crc32(payload))])


def identity_model(k=2):
    """flatten-dense with W = I and b = 0 on a k-pixel input"""
    model = Classifier(LINEAR, (k, 1, 1), k)
    params = model.tensors()
    params['fc.weight'][...] = np.eye(k)
    return model


def separable_dataset(n, seed):
    """Two classes split by the sign of the mean-centred brightness of the left half"""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    images = rng.uniform(0.0, 0.3, size=(n, 3, 8, 8))
    images[labels == 1, :, :, :4] += 0.6
    return Dataset(images, labels, num_classes=2)


class ForwardTests(SimpleTestCase):
    def test_zero_mlp_gives_zero_logits(self):
        model = Classifier(MLP, SMALL_SHAPE, 4)
        x = np.random.default_rng(0).random(SMALL_SHAPE).astype(np.float32)
        np.testing.assert_array_equal(model.forward(x), np.zeros(4))

    def test_seeded_cnn_is_deterministic(self):
        model = Classifier.initialize(CNN_A, seed=3)
        x = np.random.default_rng(1).random((3, 32, 32)).astype(np.float32)
        self.assertEqual(model.forward(x).tobytes(), model.forward(x).tobytes())

    def test_identity_model_returns_its_input(self):
        model = identity_model(3)
        x = np.array([0.2, 0.5, 0.9], dtype=np.float32).reshape(3, 1, 1)
        np.testing.assert_allclose(model.forward(x), [0.2, 0.5, 0.9], atol=1e-7)

    def test_every_architecture_returns_num_classes_logits(self):
        for arch in ARCHITECTURE_IDS:
            model = Classifier.initialize(arch, (3, 16, 16), 5, seed=1)
            logits = model.forward(np.full((3, 16, 16), 0.5, dtype=np.float32))
            self.assertEqual(logits.shape, (5,))
            self.assertTrue(np.all(np.isfinite(logits)))

    def test_cnn_a_and_cnn_b_differ(self):
        a = Classifier(CNN_A, (3, 32, 32), 4)
        b = Classifier(CNN_B, (3, 32, 32), 4)
        self.assertNotEqual(len(a.layers), len(b.layers))
        self.assertNotEqual(a.parameter_count, b.parameter_count)

    def test_parameter_count_depends_on_input_shape(self):
        self.assertEqual(Classifier(MLP, (3, 8, 8), 4).parameter_count, 192 * 64 + 64 + 64 * 4 + 4)
        self.assertEqual(Classifier(LINEAR, (1, 2, 2), 3).parameter_count, 4 * 3 + 3)

    def test_shape_mismatch_is_rejected(self):
        model = Classifier(MLP, SMALL_SHAPE, 4)
        with self.assertRaises(InvalidArgumentError):
            model.forward(np.zeros((3, 9, 8)))

    def test_unknown_architecture(self):
        with self.assertRaises(UnsupportedArchitectureError):
            Classifier('resnet', SMALL_SHAPE, 4)


class LossGradientTests(SimpleTestCase):
    def test_zero_model_loss_is_log_k(self):
        model = Classifier(CNN_B, SMALL_SHAPE, 4)
        loss, grad = model.loss_and_input_grad(np.random.default_rng(0).random(SMALL_SHAPE), 2)
        self.assertAlmostEqual(float(loss), math.log(4), places=6)
        np.testing.assert_array_equal(grad, 0)

    def test_identity_model_closed_form(self):
        model = identity_model(2)
        loss, grad = model.loss_and_input_grad(np.zeros((2, 1, 1)), 0)
        self.assertAlmostEqual(float(loss), math.log(2), places=12)
        np.testing.assert_allclose(grad.ravel(), [-0.5, 0.5], atol=1e-12)

    def test_out_of_range_label(self):
        model = Classifier(MLP, SMALL_SHAPE, 4)
        with self.assertRaises(InvalidArgumentError):
            model.loss_and_input_grad(np.zeros(SMALL_SHAPE), 4)

    def test_single_example_batch_matches_input_loss(self):
        model = Classifier.initialize(CNN_A, SMALL_SHAPE, 4, seed=2)
        x = np.random.default_rng(2).random(SMALL_SHAPE).astype(np.float32)
        loss, _ = model.loss_and_input_grad(x, 1)
        batch_loss, _ = model.loss_and_param_grad([(x, 1)])
        self.assertEqual(float(loss), float(batch_loss))

    def test_duplicated_example_keeps_mean_loss(self):
        model = Classifier.initialize(MLP, SMALL_SHAPE, 4, seed=2)
        x = np.random.default_rng(4).random(SMALL_SHAPE)
        once, grad_once = model.loss_and_param_grad([(x, 3)])
        twice, grad_twice = model.loss_and_param_grad([(x, 3), (x, 3)])
        self.assertAlmostEqual(float(once), float(twice), places=12)
        np.testing.assert_allclose(grad_once, grad_twice, atol=1e-12)

    def test_empty_batch_is_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            Classifier(MLP, SMALL_SHAPE, 4).loss_and_param_grad([])

    def test_batch_gradients_match_single_calls(self):
        model = Classifier.initialize(CNN_B, SMALL_SHAPE, 4, seed=6)
        batch = np.random.default_rng(6).random((3,) + SMALL_SHAPE)
        losses, grads = model.batch_input_grads(batch, [0, 1, 2])
        for k in range(3):
            loss, grad = model.loss_and_input_grad(batch[k], k)
            self.assertAlmostEqual(float(losses[k]), float(loss), places=12)
            np.testing.assert_allclose(grads[k], grad, atol=1e-12)

    def test_float64_input_keeps_float64(self):
        model = Classifier.initialize(CNN_A, SMALL_SHAPE, 4, seed=0)
        _, grad = model.loss_and_input_grad(np.zeros(SMALL_SHAPE), 0)
        self.assertEqual(grad.dtype, np.float64)


class GradCheckTests(SimpleTestCase):
    def test_every_architecture_passes(self):
        for arch in ARCHITECTURE_IDS:
            model = Classifier.initialize(arch, SMALL_SHAPE, 4, seed=11)
            report = grad_check(model, n_coords=100, seed=1)
            self.assertTrue(report.passed, msg=f"{arch}: {report}")
            self.assertGreaterEqual(report.checked + report.excluded_at_kinks, 100)

    def test_parameter_gradients_checked(self):
        model = Classifier.initialize(CNN_A, SMALL_SHAPE, 4, seed=12)
        report = grad_check(model, n_coords=60, seed=2)
        self.assertLessEqual(report.max_param_error, 1e-3)

    def test_zero_model_passes_trivially(self):
        report = grad_check(Classifier(CNN_B, SMALL_SHAPE, 4), n_coords=50)
        self.assertEqual(report.max_error, 0.0)
        self.assertTrue(report.passed)

    def test_kinks_are_counted_not_compared(self):
        # an input sitting exactly on ReLU kinks for the first hidden layer
        model = Classifier.initialize(MLP, (1, 2, 2), 2, seed=0)
        params = model.tensors()
        params['fc1.bias'][...] = 0
        report = grad_check(model, n_coords=4, x=np.zeros((1, 2, 2)), y=0)
        self.assertEqual(report.checked + report.excluded_at_kinks, 4 + min(4, model.parameter_count))
        self.assertGreater(report.excluded_at_kinks, 0)


class PersistenceTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'model.sgpm'

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_is_bit_exact(self):
        model = Classifier.initialize(CNN_A, seed=5)
        loaded = load_model(save_model(model, self.path))
        self.assertEqual(loaded.params.tobytes(), model.params.tobytes())
        self.assertEqual((loaded.architecture_id, loaded.input_shape, loaded.num_classes),
                         (CNN_A, (3, 32, 32), 4))
        rng = np.random.default_rng(0)
        for _ in range(10):
            x = rng.random((3, 32, 32)).astype(np.float32)
            self.assertEqual(model.forward(x).tobytes(), loaded.forward(x).tobytes())

    def test_corrupt_payload_byte(self):
        blob = bytearray(dumps_model(Classifier.initialize(MLP, SMALL_SHAPE, 4, seed=1)))
        blob[-10] ^= 0xFF
        with self.assertRaises(ChecksumError):
            loads_model(bytes(blob))

    def test_unknown_architecture(self):
        blob = dumps_model(Classifier.initialize(MLP, SMALL_SHAPE, 4, seed=1))
        with self.assertRaises(UnsupportedArchitectureError):
            loads_model(blob.replace(b'"mlp"', b'"vgg"'))

    def test_truncated_blob(self):
        blob = dumps_model(Classifier.initialize(MLP, SMALL_SHAPE, 4, seed=1))
        with self.assertRaises(TruncatedModelError):
            loads_model(blob[:-20])

    def test_other_version(self):
        blob = dumps_model(Classifier(LINEAR, SMALL_SHAPE, 2))
        with self.assertRaises(VersionMismatchError):
            loads_model(b'SGPMODL2' + blob[len(MAGIC):])

    def test_malformed_headers(self):
        base = {'format_version': FORMAT_VERSION, 'architecture_id': LINEAR}
        headers = [
            [],
            base,
            dict(base, tensors=[]),
            dict(base, tensors={'fc.weight': [0]}),
            dict(base, tensors={}),
            dict(base, tensors={}, input_shape=[3, 8], num_classes=2),
        ]
        for header in headers:
            with self.assertRaises(ModelFormatError, msg=header):
                loads_model(container(header))


class TrainingTests(SimpleTestCase):
    def test_zero_epochs_leave_params_unchanged(self):
        model = Classifier.initialize(MLP, SMALL_SHAPE, 2, seed=0)
        result = train(model, separable_dataset(16, 0), TrainConfig(epochs=0))
        self.assertEqual(result.model.params.tobytes(), model.params.tobytes())
        self.assertEqual(result.history, [])

    def test_training_is_deterministic_and_leaves_input_untouched(self):
        model = Classifier.initialize(CNN_B, SMALL_SHAPE, 2, seed=1)
        before = model.checksum()
        cfg = TrainConfig(epochs=2, batch_size=8, learning_rate=0.05, seed=3)
        first = train(model, separable_dataset(32, 1), cfg)
        second = train(model, separable_dataset(32, 1), cfg)
        self.assertEqual(first.model.checksum(), second.model.checksum())
        self.assertEqual(model.checksum(), before)
        self.assertEqual(len(first.history), 2)

    def test_mlp_learns_separable_set(self):
        ds = separable_dataset(200, 2)
        train_set, test_set = split(ds, 0.25, seed=0)
        model = Classifier.initialize(MLP, SMALL_SHAPE, 2, seed=0)
        result = train(model, train_set, TrainConfig(epochs=20, batch_size=16, learning_rate=0.05), test_set)
        self.assertGreaterEqual(result.final_test_accuracy, 0.99)

    def test_invalid_config(self):
        with self.assertRaises(InvalidArgumentError):
            TrainConfig(learning_rate=0)
        with self.assertRaises(InvalidArgumentError):
            TrainConfig(batch_size=0)

    def test_serializer_builds_config(self):
        serializer = TrainConfigSerializer(data={'epochs': 3, 'learning_rate': 0.1, 'architecture_id': 'cnn_a'})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        cfg = serializer.save()
        self.assertEqual(cfg, TrainConfig(epochs=3, learning_rate=0.1))

    def test_serializer_rejects_bad_values(self):
        serializer = TrainConfigSerializer(data={'learning_rate': -1, 'momentum': 1.0, 'architecture_id': 'vgg'})
        self.assertFalse(serializer.is_valid())
        self.assertEqual(set(serializer.errors), {'learning_rate', 'momentum', 'architecture_id'})


@unittest.skipUnless(settings.SGP_RUN_BENCHMARKS, "set SGP_RUN_BENCHMARKS=1 to run seeded regression benchmarks")
class TrainingBenchmarks(SimpleTestCase):
    def test_cnn_a_reaches_accuracy_floor(self):
        train_set, test_set = split(gen_synthetic(1000, seed=7), 0.2, seed=7)
        model = Classifier.initialize(CNN_A, seed=0)
        result = train(model, train_set, TrainConfig(epochs=15), test_set)
        self.assertGreaterEqual(result.final_test_accuracy, 0.95)
