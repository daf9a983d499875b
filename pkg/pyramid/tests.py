import numpy as np
from django.test import SimpleTestCase

from nn.classifiers import CNN_A, Classifier
from nn.gradcheck import relative_error
from sgplab.exceptions import DepthExceededError, InvalidArgumentError
from tensorcore.ops import BLUR_KERNEL, apply_chain, conv2d_reflect, downsample
from .sgp import (
    COLUMN,
    ORIGINAL,
    ROW,
    ROW_COLUMN,
    build_sgp,
    feasible_depth,
    gaussian_kernel,
    pullback_to_input,
    scale_count,
)


class GaussianKernelTests(SimpleTestCase):
    def setUp(self):
        self.k = gaussian_kernel().coefficients

    def test_center_and_corners(self):
        self.assertEqual(self.k[2, 2], 36 / 256)
        for corner in [(0, 0), (0, 4), (4, 0), (4, 4)]:
            self.assertEqual(self.k[corner], 1 / 256)

    def test_sums_to_one(self):
        self.assertEqual(self.k.sum(), 1.0)
        self.assertLessEqual(abs(float(self.k.astype(np.float32).sum()) - 1.0), 1e-7)

    def test_symmetries(self):
        np.testing.assert_array_equal(self.k, self.k[::-1])
        np.testing.assert_array_equal(self.k, self.k[:, ::-1])
        np.testing.assert_array_equal(self.k, self.k.T)

    def test_is_read_only(self):
        with self.assertRaises(ValueError):
            self.k[0, 0] = 1.0


class FeasibleDepthTests(SimpleTestCase):
    def test_known_shapes(self):
        self.assertEqual(feasible_depth((3, 32, 32)), 3)
        self.assertEqual(feasible_depth((3, 299, 299)), 6)
        self.assertEqual(feasible_depth((3, 8, 8)), 1)
        self.assertEqual(feasible_depth((3, 64, 64)), 4)

    def test_never_below_one(self):
        self.assertEqual(feasible_depth((1, 2, 3)), 1)

    def test_limited_by_the_smaller_dimension(self):
        self.assertEqual(feasible_depth((3, 16, 299)), 2)


class BuildTests(SimpleTestCase):
    def setUp(self):
        self.x = np.random.default_rng(0).random((3, 32, 32)).astype(np.float32)

    def test_single_layer_is_the_input(self):
        scales = build_sgp(self.x, 1)
        self.assertEqual(len(scales), 1)
        example = scales.examples[0]
        self.assertEqual((example.layer, example.scheme, example.forward_map), (1, ORIGINAL, ()))
        np.testing.assert_array_equal(example.image, self.x)

    def test_three_layers_give_seven_examples(self):
        self.assertEqual(len(build_sgp(self.x, 3)), 7)

    def test_two_layer_shapes(self):
        shapes = [example.image.shape for example in build_sgp(self.x, 2)]
        self.assertEqual(shapes, [(3, 32, 32), (3, 16, 16), (3, 16, 32), (3, 32, 16)])

    def test_count_law_over_random_shapes(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            shape = (int(rng.integers(1, 4)), int(rng.integers(8, 70)), int(rng.integers(8, 70)))
            x = rng.random(shape)
            for m in range(1, feasible_depth(shape) + 1):
                scales = build_sgp(x, m)
                self.assertEqual(len(scales), scale_count(m))
                pairs = {(e.layer, e.scheme) for e in scales}
                expected = {(1, ORIGINAL)} | {(i, j) for i in range(2, m + 1) for j in (ROW_COLUMN, ROW, COLUMN)}
                self.assertEqual(pairs, expected)

    def test_shape_law(self):
        x = np.zeros((2, 45, 37))
        scales = build_sgp(x, 3)

        def halve(n, times):
            for _ in range(times):
                n = (n + 1) // 2
            return n

        for i in (2, 3):
            self.assertEqual(scales.get(i, ROW_COLUMN).image.shape, (2, halve(45, i - 1), halve(37, i - 1)))
            self.assertEqual(scales.get(i, ROW).image.shape, (2, halve(45, i - 1), halve(37, i - 2)))
            self.assertEqual(scales.get(i, COLUMN).image.shape, (2, halve(45, i - 2), halve(37, i - 1)))

    def test_forward_maps_reproduce_images(self):
        for example in build_sgp(self.x, 3):
            expected_kinds = ['blur5x5', 'downsample_rc'] * max(example.layer - 2, 0)
            if example.layer >= 2:
                expected_kinds += ['blur5x5', example.forward_map[-1].kind]
            self.assertEqual([op.kind for op in example.forward_map], expected_kinds)
            np.testing.assert_array_equal(apply_chain(example.forward_map, self.x), example.image)

    def test_base_recursion(self):
        scales = build_sgp(self.x, 3)
        base2 = downsample(conv2d_reflect(self.x, BLUR_KERNEL), 'rc')
        np.testing.assert_array_equal(scales.get(2, ROW_COLUMN).image, base2)
        base3 = downsample(conv2d_reflect(base2, BLUR_KERNEL), 'rc')
        np.testing.assert_array_equal(scales.get(3, ROW_COLUMN).image, base3)
        np.testing.assert_array_equal(
            scales.get(3, ROW).image, downsample(conv2d_reflect(base2, BLUR_KERNEL), 'r')
        )

    def test_blurring_does_not_increase_variance(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            base = rng.random((3, 32, 32))
            for _ in range(3):
                blurred = conv2d_reflect(base, BLUR_KERNEL)
                self.assertTrue(np.all(blurred.reshape(3, -1).var(axis=1) <= base.reshape(3, -1).var(axis=1)))
                base = downsample(blurred, 'rc')

    def test_pure_and_deterministic(self):
        before = self.x.copy()
        first = build_sgp(self.x, 3)
        second = build_sgp(self.x, 3)
        for a, b in zip(first, second):
            self.assertEqual(a.image.tobytes(), b.image.tobytes())
        np.testing.assert_array_equal(self.x, before)

    def test_depth_exceeded_names_feasible_depth(self):
        with self.assertRaises(DepthExceededError) as ctx:
            build_sgp(self.x, 9)
        self.assertEqual(ctx.exception.feasible, 3)
        self.assertIn('feasible_depth = 3', str(ctx.exception))

    def test_non_positive_depth(self):
        with self.assertRaises(InvalidArgumentError):
            build_sgp(self.x, 0)

    def test_tags(self):
        self.assertEqual([e.tag for e in build_sgp(self.x, 2)], ['L1-original', 'L2-rc', 'L2-r', 'L2-c'])


class PullbackTests(SimpleTestCase):
    def test_layer_one_is_identity(self):
        x = np.random.default_rng(3).random((3, 16, 16))
        example = build_sgp(x, 1).examples[0]
        cot = np.random.default_rng(4).normal(size=x.shape)
        np.testing.assert_array_equal(pullback_to_input(example, cot, x.shape), cot)

    def test_composed_adjoint_identity(self):
        rng = np.random.default_rng(5)
        for shape in [(3, 32, 32), (1, 27, 40), (2, 64, 17)]:
            scales = build_sgp(rng.random(shape), feasible_depth(shape))
            for example in scales:
                ops = example.forward_map + (example.resize_op(shape),)
                for _ in range(3):
                    x_test = rng.normal(size=shape)
                    y = rng.normal(size=shape)
                    lhs = float(np.sum(apply_chain(ops, x_test) * y))
                    rhs = float(np.sum(x_test * pullback_to_input(example, y, shape)))
                    self.assertLessEqual(abs(lhs - rhs), 1e-4 * (1 + abs(lhs)), msg=example.tag)

    def test_shape_mismatch(self):
        x = np.zeros((3, 16, 16))
        example = build_sgp(x, 2).examples[1]
        with self.assertRaises(InvalidArgumentError):
            pullback_to_input(example, np.zeros((3, 8, 8)), x.shape)

    def test_end_to_end_finite_differences(self):
        shape = (3, 16, 16)
        model = Classifier.initialize(CNN_A, shape, 4, seed=21)
        rng = np.random.default_rng(6)
        x = rng.random(shape)
        y, step = 1, 1e-3

        def transformed(point, layer, scheme):
            return build_sgp(point, 2).get(layer, scheme).resized(shape)

        def loss(point, layer, scheme):
            value, _ = model.loss_and_input_grad(transformed(point, layer, scheme), y)
            return float(value)

        for layer, scheme in [(2, ROW_COLUMN), (2, ROW), (2, COLUMN)]:
            example = build_sgp(x, 2).get(layer, scheme)
            _, grad_at_scale = model.loss_and_input_grad(example.resized(shape), y)
            analytic = pullback_to_input(example, grad_at_scale, shape)
            compared = 0
            for i in rng.choice(x.size, size=100, replace=False):
                plus, minus = x.copy().ravel(), x.copy().ravel()
                plus[i] += step
                minus[i] -= step
                plus, minus = plus.reshape(shape), minus.reshape(shape)
                pattern_plus = model.activation_pattern(transformed(plus, layer, scheme)[None])
                pattern_minus = model.activation_pattern(transformed(minus, layer, scheme)[None])
                if not all(np.array_equal(a, b) for a, b in zip(pattern_plus, pattern_minus)):
                    continue
                numeric = (loss(plus, layer, scheme) - loss(minus, layer, scheme)) / (2 * step)
                self.assertLessEqual(relative_error(analytic.ravel()[i], numeric), 1e-3)
                compared += 1
            self.assertGreaterEqual(compared, 50)
