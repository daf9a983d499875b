import struct
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from sgplab.exceptions import BadMagicError, CountMismatchError, InvalidArgumentError, TruncatedIdxError
from .datasets import Dataset, split
from .idx import IMAGE_MAGIC, LABEL_MAGIC, load_idx, write_idx
from .imageio import read_image, write_pgm, write_ppm
from .storage import load_dataset_dir, save_dataset_dir
from .synthetic import NUM_SHAPES, gen_synthetic


class SyntheticTests(SimpleTestCase):
    def test_same_seed_is_bit_identical(self):
        first = gen_synthetic(12, seed=5)
        second = gen_synthetic(12, seed=5)
        self.assertEqual(first.images.tobytes(), second.images.tobytes())
        np.testing.assert_array_equal(first.labels, second.labels)

    def test_different_seed_differs(self):
        self.assertNotEqual(gen_synthetic(4, seed=1).images.tobytes(), gen_synthetic(4, seed=2).images.tobytes())

    def test_four_examples_cover_every_class(self):
        ds = gen_synthetic(4, seed=0)
        self.assertEqual(sorted(ds.labels.tolist()), [0, 1, 2, 3])

    def test_balanced_within_one(self):
        for n in (1, 7, 10, 33):
            counts = np.bincount(gen_synthetic(n, seed=n).labels, minlength=NUM_SHAPES)
            self.assertLessEqual(counts.max() - counts.min(), 1)

    def test_images_are_valid(self):
        ds = gen_synthetic(8, seed=3, image_size=20)
        self.assertEqual(ds.images.shape, (8, 3, 20, 20))
        self.assertEqual(ds.images.dtype, np.float32)
        self.assertGreaterEqual(ds.images.min(), 0.0)
        self.assertLessEqual(ds.images.max(), 1.0)
        self.assertEqual(ds.num_classes, 4)
        self.assertEqual(ds.generator_seed, 3)

    def test_foreground_is_brighter_than_background(self):
        ds = gen_synthetic(4, seed=9)
        for example in ds.examples:
            self.assertGreater(example.image.max(), 0.5)

    def test_rejects_bad_arguments(self):
        with self.assertRaises(InvalidArgumentError):
            gen_synthetic(0)
        with self.assertRaises(InvalidArgumentError):
            gen_synthetic(4, image_size=8)


class SplitTests(SimpleTestCase):
    def setUp(self):
        self.ds = gen_synthetic(100, seed=1, image_size=16)

    def test_eighty_twenty(self):
        train, test = split(self.ds, 0.2, seed=0)
        self.assertEqual((len(train), len(test)), (80, 20))
        self.assertEqual((train.split, test.split), ('train', 'test'))

    def test_zero_fraction_gives_empty_test_split(self):
        train, test = split(self.ds, 0.0, seed=0)
        self.assertEqual((len(train), len(test)), (100, 0))

    def test_disjoint_and_exhaustive(self):
        train, test = split(self.ds, 0.3, seed=4)
        rows = {row.tobytes() for row in train.images} | {row.tobytes() for row in test.images}
        self.assertEqual(len(rows), 100)

    def test_same_seed_same_partition(self):
        a_train, a_test = split(self.ds, 0.2, seed=11)
        b_train, b_test = split(self.ds, 0.2, seed=11)
        self.assertEqual(a_test.images.tobytes(), b_test.images.tobytes())
        self.assertEqual(a_train.images.tobytes(), b_train.images.tobytes())

    def test_rejects_fraction_out_of_range(self):
        with self.assertRaises(InvalidArgumentError):
            split(self.ds, 1.5)


class DatasetTests(SimpleTestCase):
    def test_rejects_label_out_of_range(self):
        with self.assertRaises(InvalidArgumentError):
            Dataset(np.zeros((1, 3, 4, 4)), [4], num_classes=4)

    def test_rejects_values_outside_unit_interval(self):
        with self.assertRaises(InvalidArgumentError):
            Dataset(np.full((1, 3, 4, 4), 1.5), [0], num_classes=4)

    def test_examples_yield_labeled_pairs(self):
        ds = Dataset(np.zeros((2, 1, 2, 2)), [1, 0], num_classes=2)
        self.assertEqual([example.label for example in ds.examples], [1, 0])


class IdxTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.images_path = self.dir / 'images.idx3-ubyte'
        self.labels_path = self.dir / 'labels.idx1-ubyte'

    def tearDown(self):
        self.tmp.cleanup()

    def test_well_formed_fixture(self):
        pixels = np.array([[[0, 255], [128, 64]], [[255, 255], [0, 0]]], dtype=np.uint8)
        write_idx(pixels, [3, 7], self.images_path, self.labels_path)
        ds = load_idx(self.images_path, self.labels_path)
        self.assertEqual(len(ds), 2)
        self.assertEqual(ds.labels.tolist(), [3, 7])
        self.assertEqual(ds.images.shape, (2, 3, 2, 2))
        np.testing.assert_allclose(ds.images[0, 1], [[0.0, 1.0], [128 / 255, 64 / 255]], atol=1e-7)
        np.testing.assert_array_equal(ds.images[:, 0], ds.images[:, 2])

    def test_count_mismatch(self):
        write_idx(np.zeros((2, 2, 2)), [1, 2, 3], self.images_path, self.labels_path)
        with self.assertRaises(CountMismatchError):
            load_idx(self.images_path, self.labels_path)

    def test_wrong_magic_names_the_file(self):
        self.images_path.write_bytes(struct.pack('>4I', LABEL_MAGIC, 1, 1, 1) + b'\x00')
        self.labels_path.write_bytes(struct.pack('>2I', LABEL_MAGIC, 1) + b'\x00')
        with self.assertRaises(BadMagicError) as ctx:
            load_idx(self.images_path, self.labels_path)
        self.assertIn(str(self.images_path), str(ctx.exception))

    def test_truncated_pixels(self):
        self.images_path.write_bytes(struct.pack('>4I', IMAGE_MAGIC, 2, 2, 2) + b'\x00' * 5)
        self.labels_path.write_bytes(struct.pack('>2I', LABEL_MAGIC, 2) + b'\x00\x01')
        with self.assertRaises(TruncatedIdxError):
            load_idx(self.images_path, self.labels_path)


class ImageFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_pgm_is_binary_p5_with_maxval_255(self):
        path = write_pgm(self.dir / 'map.pgm', np.linspace(0, 1, 12).reshape(1, 3, 4))
        blob = path.read_bytes()
        self.assertTrue(blob.startswith(b'P5'))
        self.assertIn(b'255', blob[:20])
        np.testing.assert_allclose(read_image(path)[0, -1, -1], 1.0)

    def test_ppm_round_trip_to_eight_bits(self):
        image = np.random.default_rng(0).random((3, 5, 6)).astype(np.float32)
        path = write_ppm(self.dir / 'x.ppm', image)
        self.assertTrue(path.read_bytes().startswith(b'P6'))
        np.testing.assert_allclose(read_image(path), image, atol=0.5 / 255 + 1e-6)

    def test_dataset_directory_round_trip(self):
        ds = gen_synthetic(6, seed=2, image_size=16)
        save_dataset_dir(ds, self.dir / 'train')
        loaded = load_dataset_dir(self.dir / 'train')
        self.assertEqual(loaded.labels.tolist(), ds.labels.tolist())
        self.assertEqual(loaded.generator_seed, 2)
        np.testing.assert_allclose(loaded.images, ds.images, atol=0.5 / 255 + 1e-6)
        header = (self.dir / 'train' / 'labels.csv').read_text().splitlines()[0]
        self.assertEqual(header, 'filename,label')
