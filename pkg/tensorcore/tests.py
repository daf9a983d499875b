import numpy as np
from django.test import SimpleTestCase

from sgplab.exceptions import InvalidArgumentError
from .ops import (
    BLUR_KERNEL,
    LinearOpDescriptor,
    apply,
    apply_adjoint,
    apply_chain,
    conv2d_reflect,
    downsample,
    downsample_shape,
    pullback_chain,
    resize_bilinear,
)


def dense_convolution(img, kernel):
    """Reference convolution: explicit reflect indexing, float64, no shared code"""
    c, h, w = img.shape
    side = kernel.shape[0]
    pad = side // 2

    def reflect(i, n):
        if n == 1:
            return 0
        period = 2 * n - 2
        i = abs(i) % period
        return period - i if i >= n else i

    out = np.zeros((c, h, w))
    for ch in range(c):
        for y in range(h):
            for x in range(w):
                acc = 0.0
                for u in range(side):
                    for v in range(side):
                        sy = reflect(y + pad - u, h)
                        sx = reflect(x + pad - v, w)
                        acc += kernel[u, v] * img[ch, sy, sx]
                out[ch, y, x] = acc
    return out


def bilinear_pixel(img, ch, y, x, out_h, out_w):
    """Scalar half-pixel-center bilinear formula"""
    _, h, w = img.shape

    def source(i, n_in, n_out):
        s = (i + 0.5) * n_in / n_out - 0.5
        s = min(max(s, 0.0), n_in - 1.0)
        i0 = int(np.floor(s))
        return i0, min(i0 + 1, n_in - 1), s - i0

    y0, y1, fy = source(y, h, out_h)
    x0, x1, fx = source(x, w, out_w)
    top = (1 - fx) * img[ch, y0, x0] + fx * img[ch, y0, x1]
    bottom = (1 - fx) * img[ch, y1, x0] + fx * img[ch, y1, x1]
    return (1 - fy) * top + fy * bottom


def random_descriptor(rng):
    c = int(rng.integers(1, 4))
    h = int(rng.integers(1, 20))
    w = int(rng.integers(1, 20))
    shape = (c, h, w)
    kind = rng.integers(0, 7)
    if kind == 0:
        return LinearOpDescriptor.blur(shape)
    if kind in (1, 2, 3):
        return LinearOpDescriptor.downsample(shape, ('rc', 'r', 'c')[kind - 1])
    if kind in (4, 5):
        mode = 'bilinear' if kind == 4 else 'nearest'
        return LinearOpDescriptor.resize(shape, int(rng.integers(1, 25)), int(rng.integers(1, 25)), mode)
    out_h = h + int(rng.integers(0, 5))
    out_w = w + int(rng.integers(0, 5))
    return LinearOpDescriptor.zero_pad(
        shape, out_h, out_w, int(rng.integers(0, out_h - h + 1)), int(rng.integers(0, out_w - w + 1))
    )


class ConvolutionTests(SimpleTestCase):
    def test_constant_image_is_preserved(self):
        img = np.full((3, 7, 11), 0.5, dtype=np.float32)
        out = conv2d_reflect(img, BLUR_KERNEL)
        self.assertEqual(out.shape, img.shape)
        np.testing.assert_allclose(out, 0.5, atol=1e-7)

    def test_single_pixel_image(self):
        img = np.full((1, 1, 1), 0.8, dtype=np.float32)
        np.testing.assert_allclose(conv2d_reflect(img, BLUR_KERNEL), [[[0.8]]], atol=1e-7)

    def test_impulse_response_is_the_kernel(self):
        img = np.zeros((1, 9, 9))
        img[0, 4, 4] = 1.0
        out = conv2d_reflect(img, BLUR_KERNEL)
        np.testing.assert_allclose(out[0, 2:7, 2:7], BLUR_KERNEL, atol=1e-12)
        mask = np.ones((9, 9), dtype=bool)
        mask[2:7, 2:7] = False
        self.assertTrue(np.all(out[0][mask] == 0))

    def test_matches_dense_oracle_with_asymmetric_kernel(self):
        rng = np.random.default_rng(3)
        kernel = rng.normal(size=(3, 3))
        for shape in [(1, 5, 6), (2, 3, 3), (1, 2, 7)]:
            img = rng.normal(size=shape)
            np.testing.assert_allclose(conv2d_reflect(img, kernel), dense_convolution(img, kernel), atol=1e-10)

    def test_even_kernel_is_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            conv2d_reflect(np.zeros((1, 4, 4)), np.ones((4, 4)) / 16)

    def test_input_is_not_mutated(self):
        img = np.random.default_rng(0).random((3, 8, 8)).astype(np.float32)
        before = img.copy()
        conv2d_reflect(img, BLUR_KERNEL)
        np.testing.assert_array_equal(img, before)


class DownsampleTests(SimpleTestCase):
    def setUp(self):
        rows, cols = np.mgrid[0:4, 0:4]
        self.grid = (10 * rows + cols).astype(np.float32)[None]

    def test_row_and_column_keeps_even_indices(self):
        out = downsample(self.grid, 'rc')
        np.testing.assert_array_equal(out[0], [[0, 2], [20, 22]])

    def test_row_only(self):
        out = downsample(self.grid, 'r')
        np.testing.assert_array_equal(out[0], [[0, 1, 2, 3], [20, 21, 22, 23]])

    def test_column_only(self):
        out = downsample(self.grid, 'c')
        np.testing.assert_array_equal(out[0], [[0, 2], [10, 12], [20, 22], [30, 32]])

    def test_odd_dimensions_use_ceil(self):
        self.assertEqual(downsample(np.zeros((1, 5, 5)), 'rc').shape, (1, 3, 3))

    def test_shape_law_for_all_small_shapes(self):
        for h in range(1, 65):
            for w in range(1, 65):
                img = np.zeros((1, h, w), dtype=np.float32)
                ceil_h, ceil_w = (h + 1) // 2, (w + 1) // 2
                self.assertEqual(downsample(img, 'rc').shape, (1, ceil_h, ceil_w))
                self.assertEqual(downsample(img, 'r').shape, (1, ceil_h, w))
                self.assertEqual(downsample(img, 'c').shape, (1, h, ceil_w))
                self.assertEqual(downsample_shape((1, h, w), 'rc'), (1, ceil_h, ceil_w))


class ResizeTests(SimpleTestCase):
    def test_constant_image_upsampled(self):
        out = resize_bilinear(np.full((3, 8, 8), 0.25, dtype=np.float32), 16, 16)
        self.assertEqual(out.shape, (3, 16, 16))
        np.testing.assert_allclose(out, 0.25, atol=1e-7)

    def test_identity_target_returns_input_values(self):
        img = np.random.default_rng(1).random((2, 5, 7)).astype(np.float32)
        np.testing.assert_array_equal(resize_bilinear(img, 5, 7), img)

    def test_matches_scalar_interpolation_oracle(self):
        img = np.array([[[0.0, 1.0], [0.0, 1.0]]])
        out = resize_bilinear(img, 2, 4)
        expected = np.array([[[bilinear_pixel(img, 0, y, x, 2, 4) for x in range(4)] for y in range(2)]])
        np.testing.assert_allclose(out, expected, atol=1e-12)
        np.testing.assert_allclose(out[0, 0], [0.0, 0.25, 0.75, 1.0], atol=1e-12)

    def test_random_downscale_against_oracle(self):
        img = np.random.default_rng(2).random((1, 9, 6))
        out = resize_bilinear(img, 4, 11)
        for y in range(4):
            for x in range(11):
                self.assertAlmostEqual(out[0, y, x], bilinear_pixel(img, 0, y, x, 4, 11), places=10)

    def test_zero_target_is_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            resize_bilinear(np.zeros((1, 4, 4)), 0, 4)


class AdjointTests(SimpleTestCase):
    def test_downsample_adjoint_scatters_to_even_positions(self):
        op = LinearOpDescriptor.downsample((1, 4, 4), 'rc')
        out = apply_adjoint(op, np.ones((1, 2, 2), dtype=np.float32))
        expected = np.zeros((1, 4, 4), dtype=np.float32)
        expected[0, ::2, ::2] = 1
        np.testing.assert_array_equal(out, expected)

    def test_blur_adjoint_matches_dense_transpose(self):
        shape = (1, 7, 7)
        op = LinearOpDescriptor.blur(shape)
        n = 49
        matrix = np.zeros((n, n))
        for j in range(n):
            basis = np.zeros(n)
            basis[j] = 1.0
            matrix[:, j] = apply(op, basis.reshape(shape)).ravel()
        cot = np.random.default_rng(4).normal(size=shape)
        np.testing.assert_allclose(apply_adjoint(op, cot).ravel(), matrix.T @ cot.ravel(), atol=1e-12)

    def test_blur_adjoint_keeps_interior_constant(self):
        op = LinearOpDescriptor.blur((1, 7, 7))
        out = apply_adjoint(op, np.full((1, 7, 7), 0.3))
        # pixels farther than the reflected band from every border
        self.assertAlmostEqual(out[0, 3, 3], 0.3, places=12)

    def test_dot_product_identity_for_every_kind(self):
        rng = np.random.default_rng(2024)
        seen = set()
        for _ in range(400):
            op = random_descriptor(rng)
            seen.add(op.kind)
            x = rng.normal(size=op.input_shape)
            y = rng.normal(size=op.output_shape)
            lhs = float(np.sum(apply(op, x) * y))
            rhs = float(np.sum(x * apply_adjoint(op, y)))
            self.assertLessEqual(abs(lhs - rhs), 1e-4 * (1 + abs(lhs)), msg=f"{op}")
        self.assertEqual(len(seen), 7)

    def test_dot_product_identity_in_single_precision(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            op = random_descriptor(rng)
            x = rng.normal(size=op.input_shape).astype(np.float32)
            y = rng.normal(size=op.output_shape).astype(np.float32)
            lhs = float(np.sum(apply(op, x).astype(np.float64) * y))
            rhs = float(np.sum(x.astype(np.float64) * apply_adjoint(op, y)))
            self.assertLessEqual(abs(lhs - rhs), 1e-4 * (1 + abs(lhs)))

    def test_chain_adjoint(self):
        rng = np.random.default_rng(5)
        shape = (3, 16, 12)
        ops = [LinearOpDescriptor.blur(shape)]
        ops.append(LinearOpDescriptor.downsample(ops[-1].output_shape, 'rc'))
        ops.append(LinearOpDescriptor.resize(ops[-1].output_shape, 16, 12))
        x = rng.normal(size=shape)
        y = rng.normal(size=(3, 16, 12))
        lhs = np.sum(apply_chain(ops, x) * y)
        rhs = np.sum(x * pullback_chain(ops, y))
        self.assertAlmostEqual(lhs, rhs, places=8)

    def test_shape_mismatch_is_rejected(self):
        op = LinearOpDescriptor.downsample((1, 4, 4), 'rc')
        with self.assertRaises(InvalidArgumentError):
            apply_adjoint(op, np.zeros((1, 4, 4)))

    def test_operators_are_pure(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            op = random_descriptor(rng)
            x = rng.random(op.input_shape).astype(np.float32)
            first = apply(op, x)
            second = apply(op, x)
            self.assertEqual(first.tobytes(), second.tobytes())
            self.assertTrue(np.all(np.isfinite(first)))
