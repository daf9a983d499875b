import numpy as np
from django.test import SimpleTestCase

from nn.classifiers import CNN_A, CNN_B, LINEAR, MLP, Classifier
from nn.gradcheck import relative_error
from pyramid.sgp import build_sgp, pullback_to_input
from sgplab.exceptions import DepthExceededError, InvalidArgumentError
from tensorcore.ops import conv2d_reflect
from .config import DETACHED, AttackConfig, attack_label, example_rng, preset_config, PRESET_CHOICES
from .engine import fgsm_step, mifgsm_attack, sgp_attack
from .gradients import Surrogate, composite_gradient, composite_gradient_with_count, ensemble_grad
from .serializers import AttackConfigSerializer
from .transforms import dim_plan, dim_transform, sim_scale_copies, tim_kernel, tim_smooth_gradient

SHAPE = (3, 32, 32)
SMALL = (3, 16, 16)


def random_image(seed, shape=SHAPE, dtype=np.float32):
    return np.random.default_rng(seed).random(shape).astype(dtype)


def brute_force_composite(model, x, y, m):
    """Each scale's gradient computed on its own in float64, then averaged"""
    x = x.astype(np.float64)
    grads = []
    for example in build_sgp(x, m):
        _, grad = model.loss_and_input_grad(example.resized(x.shape), y)
        grads.append(pullback_to_input(example, grad, x.shape))
    return np.mean(grads, axis=0)


class ConfigTests(SimpleTestCase):
    def test_alpha_defaults_to_epsilon_over_iterations(self):
        cfg = AttackConfig(epsilon=0.1, iterations=4)
        self.assertAlmostEqual(cfg.alpha, 0.025)

    def test_zero_epsilon_allows_zero_step(self):
        self.assertEqual(AttackConfig(epsilon=0.0).alpha, 0.0)
        with self.assertRaises(InvalidArgumentError):
            AttackConfig(epsilon=0.1, alpha=0.0)

    def test_invalid_values(self):
        for kwargs in [dict(iterations=0), dict(layers=0), dict(epsilon=-0.1), dict(tim_kernel=4),
                       dict(dim_prob=1.5), dict(sim_copies=0), dict(grad_mode='sideways')]:
            with self.assertRaises(InvalidArgumentError, msg=kwargs):
                AttackConfig(**kwargs)

    def test_presets(self):
        self.assertEqual(preset_config('sgp').layers, 3)
        self.assertEqual(preset_config('mifgsm').transforms, [])
        self.assertEqual(preset_config('sgp-stdm').transforms, ['dim', 'tim', 'sim'])
        self.assertEqual(preset_config('identity').epsilon, 0.0)
        self.assertEqual(len(PRESET_CHOICES), 11)
        with self.assertRaises(InvalidArgumentError):
            preset_config('admix')

    def test_labels(self):
        self.assertEqual(attack_label(preset_config('mifgsm')), 'mifgsm')
        self.assertEqual(attack_label(preset_config('sgp')), 'sgp-m3')
        self.assertEqual(attack_label(preset_config('sgp-dim')), 'sgp-m3+dim')
        self.assertEqual(attack_label(preset_config('sgp', grad_mode=DETACHED)), 'sgp-m3-detached')
        self.assertEqual(attack_label(preset_config('identity')), 'identity')

    def test_example_streams_are_independent_of_order(self):
        first = example_rng(3, 7).random(4)
        example_rng(3, 6).random(100)
        np.testing.assert_array_equal(example_rng(3, 7).random(4), first)
        self.assertFalse(np.array_equal(example_rng(3, 8).random(4), first))

    def test_serializer_converts_pixel_scale(self):
        serializer = AttackConfigSerializer(data={'eps': 16, 'iters': 10, 'm': 2, 'transforms': ['tim', 'sim']})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        cfg = serializer.save()
        self.assertAlmostEqual(cfg.epsilon, 16 / 255)
        self.assertAlmostEqual(cfg.alpha, 16 / 2550)
        self.assertEqual((cfg.layers, cfg.tim_kernel, cfg.sim_copies, cfg.dim_prob), (2, 7, 5, 0.0))

    def test_serializer_rejects_bad_flags(self):
        serializer = AttackConfigSerializer(data={'eps': 300, 'm': 0, 'transforms': ['bsr'], 'tim_kernel': 6})
        self.assertFalse(serializer.is_valid())
        self.assertEqual(set(serializer.errors), {'eps', 'm', 'transforms', 'tim_kernel'})


class TransformTests(SimpleTestCase):
    def test_dim_zero_probability_is_identity(self):
        x = random_image(0)
        np.testing.assert_array_equal(dim_transform(x, 0.0, np.random.default_rng(0)), x)

    def test_dim_is_deterministic_per_seed(self):
        x = random_image(1)
        first = dim_transform(x, 1.0, np.random.default_rng(5))
        second = dim_transform(x, 1.0, np.random.default_rng(5))
        self.assertEqual(first.shape, x.shape)
        self.assertEqual(first.tobytes(), second.tobytes())

    def test_dim_plan_shapes(self):
        grow, pad, back = dim_plan(SHAPE, 1.0, np.random.default_rng(2))
        self.assertEqual(pad.output_shape, (3, 35, 35))
        self.assertTrue(32 <= grow.output_shape[1] <= 35)
        self.assertEqual(back.output_shape, SHAPE)

    def test_dim_forced_identity_draws(self):
        x = random_image(2)
        out = dim_transform(x, 1.0, np.random.default_rng(0), max_scale=1.0, scale=1.0, offset=(0, 0))
        self.assertLessEqual(float(np.max(np.abs(out - x))), 1e-5)

    def test_tim_constant_field_unchanged(self):
        g = np.full((3, 10, 10), 0.7)
        np.testing.assert_allclose(tim_smooth_gradient(g, 7), g, atol=1e-12)

    def test_tim_impulse_gives_kernel(self):
        g = np.zeros((1, 15, 15))
        g[0, 7, 7] = 1.0
        np.testing.assert_allclose(tim_smooth_gradient(g, 7)[0, 4:11, 4:11], tim_kernel(7), atol=1e-12)

    def test_tim_size_one_is_identity(self):
        g = random_image(3)
        np.testing.assert_array_equal(tim_smooth_gradient(g, 1), g)

    def test_tim_even_size(self):
        with self.assertRaises(InvalidArgumentError):
            tim_kernel(4)

    def test_sim_copies(self):
        x = np.full((1, 2, 2), 0.8)
        self.assertEqual(len(sim_scale_copies(x, 1)), 1)
        np.testing.assert_array_equal(sim_scale_copies(x, 1)[0], x)
        np.testing.assert_allclose([c[0, 0, 0] for c in sim_scale_copies(x, 3)], [0.8, 0.4, 0.2])
        with self.assertRaises(InvalidArgumentError):
            sim_scale_copies(x, 0)


class EnsembleTests(SimpleTestCase):
    def setUp(self):
        self.a = Classifier.initialize(CNN_A, SMALL, 4, seed=1)
        self.mlp = Classifier.initialize(MLP, SMALL, 4, seed=2)
        self.x = random_image(4, SMALL, np.float64)

    def test_single_model_matches_plain_gradient(self):
        _, expected = self.a.loss_and_input_grad(self.x, 2)
        np.testing.assert_array_equal(ensemble_grad([self.a], [1.0], self.x, 2), expected)

    def test_two_copies_match_single_model(self):
        _, expected = self.a.loss_and_input_grad(self.x, 1)
        np.testing.assert_allclose(ensemble_grad([self.a, self.a.copy()], [0.5, 0.5], self.x, 1), expected, atol=1e-12)

    def test_fused_logit_gradient_against_finite_differences(self):
        surrogate = Surrogate.of([self.a, self.mlp])
        analytic = ensemble_grad([self.a, self.mlp], [0.5, 0.5], self.x, 3)
        rng = np.random.default_rng(0)
        step = 1e-3
        compared = 0
        for i in rng.choice(self.x.size, size=80, replace=False):
            plus, minus = self.x.copy().ravel(), self.x.copy().ravel()
            plus[i] += step
            minus[i] -= step
            plus, minus = plus.reshape(SMALL), minus.reshape(SMALL)
            same = all(
                all(np.array_equal(p, q) for p, q in zip(m.activation_pattern(plus[None]), m.activation_pattern(minus[None])))
                for m in (self.a, self.mlp)
            )
            if not same:
                continue
            numeric = (surrogate.losses(plus[None], [3])[0] - surrogate.losses(minus[None], [3])[0]) / (2 * step)
            self.assertLessEqual(relative_error(analytic.ravel()[i], numeric), 1e-3)
            compared += 1
        self.assertGreaterEqual(compared, 50)

    def test_class_count_mismatch(self):
        other = Classifier.initialize(MLP, SMALL, 3, seed=0)
        with self.assertRaises(InvalidArgumentError):
            ensemble_grad([self.a, other], [0.5, 0.5], self.x, 0)

    def test_weights_must_sum_to_one(self):
        with self.assertRaises(InvalidArgumentError):
            Surrogate.of([self.a, self.mlp], [0.5, 0.6])


class CompositeGradientTests(SimpleTestCase):
    def setUp(self):
        self.model = Classifier.initialize(CNN_B, SHAPE, 4, seed=7)

    def test_single_layer_is_the_plain_gradient(self):
        x = random_image(5)
        _, expected = self.model.loss_and_input_grad(x, 1)
        self.assertEqual(composite_gradient(self.model, x, 1, m=1).tobytes(), expected.tobytes())

    def test_matches_per_scale_oracle(self):
        rng = np.random.default_rng(6)
        for trial in range(20):
            m = 2 + trial % 2
            x = rng.random(SHAPE)
            y = int(rng.integers(0, 4))
            got = composite_gradient(self.model, x, y, m=m)
            expected = brute_force_composite(self.model, x, y, m)
            self.assertLessEqual(np.max(np.abs(got - expected)), 1e-4 * np.max(np.abs(expected)))

    def test_zero_model_gives_zero_gradient(self):
        model = Classifier(CNN_A, SHAPE, 4)
        for m in (1, 2, 3):
            np.testing.assert_array_equal(composite_gradient(model, random_image(m), 0, m=m), 0)

    def test_detached_mode_skips_the_pyramid_adjoint(self):
        x = random_image(7).astype(np.float64)
        expected = np.mean(
            [self.model.loss_and_input_grad(e.resized(SHAPE), 2)[1] for e in build_sgp(x, 2)], axis=0
        )
        np.testing.assert_allclose(composite_gradient(self.model, x, 2, m=2, grad_mode=DETACHED), expected, atol=1e-12)

    def test_infeasible_depth(self):
        with self.assertRaises(DepthExceededError):
            composite_gradient(self.model, random_image(8), 0, m=4)

    def test_counts_include_sim_copies(self):
        cfg = AttackConfig(layers=3, sim_copies=5)
        result = composite_gradient_with_count(self.model, random_image(9), 0, cfg)
        self.assertEqual(result.calls, 35)


class AttackTests(SimpleTestCase):
    def setUp(self):
        self.mlp = Classifier.initialize(MLP, SHAPE, 4, seed=3)

    def test_single_layer_degenerates_to_mifgsm(self):
        rng = np.random.default_rng(10)
        models = [Classifier.initialize(arch, SMALL, 4, seed=s) for s, arch in enumerate([CNN_A, CNN_B, MLP, LINEAR])]
        cfg = AttackConfig(layers=1)
        for trial in range(100):
            model = models[trial % len(models)]
            x = rng.random(SMALL).astype(np.float32)
            y = int(rng.integers(0, 4))
            reference = mifgsm_attack(model, x, y, cfg)
            result = sgp_attack(model, x, y, cfg)
            self.assertEqual(result.x_adv.tobytes(), reference.x_adv.tobytes())
            self.assertEqual(result.loss_trace, reference.loss_trace)

    def test_zero_epsilon_returns_input(self):
        x = random_image(11)
        result = sgp_attack(self.mlp, x, 2, preset_config('identity', layers=3))
        np.testing.assert_array_equal(result.x_adv, x)
        self.assertEqual(len(set(result.loss_trace)), 1)
        self.assertEqual(len(result.loss_trace), 11)

    def test_default_budget_and_call_count(self):
        cfg = AttackConfig(epsilon=16 / 255, iterations=10, layers=3)
        result = sgp_attack(self.mlp, random_image(12), 1, cfg)
        self.assertEqual(result.gradient_call_count, 70)
        self.assertLessEqual(result.linf, 16 / 255 + 1e-6)

    def test_call_count_law(self):
        x = random_image(13)
        for m in (1, 2, 3):
            for iterations in (1, 5, 10):
                cfg = AttackConfig(iterations=iterations, layers=m)
                result = sgp_attack(self.mlp, x, 0, cfg)
                self.assertEqual(result.gradient_call_count, (3 * m - 2) * iterations)
                self.assertEqual(result.gradient_call_count, cfg.expected_gradient_calls)

    def test_budget_over_many_attacks(self):
        rng = np.random.default_rng(14)
        worst = 0.0
        for trial in range(500):
            cfg = AttackConfig(epsilon=16 / 255, iterations=10, layers=1 + trial % 3,
                               clip_to_valid=bool(trial % 2), seed=trial)
            x = rng.random(SHAPE).astype(np.float32)
            result = sgp_attack(self.mlp, x, int(rng.integers(0, 4)), cfg)
            worst = max(worst, result.linf)
            self.assertTrue(np.all(np.isfinite(result.x_adv)))
        self.assertLessEqual(worst, 16 / 255 + 1e-6)

    def test_unclipped_steps_stay_within_t_alpha(self):
        cfg = AttackConfig(epsilon=0.05, iterations=4, alpha=0.01, clip_to_valid=False, layers=2)
        result = sgp_attack(self.mlp, random_image(15), 3, cfg)
        self.assertLessEqual(result.linf, 0.04 + 1e-6)

    def test_clipped_output_is_an_image(self):
        x = np.clip(random_image(16) * 1.2 - 0.1, 0, 1)
        result = sgp_attack(self.mlp, x, 0, AttackConfig(layers=2))
        self.assertGreaterEqual(result.x_adv.min(), 0.0)
        self.assertLessEqual(result.x_adv.max(), 1.0)

    def test_parameters_are_not_modified(self):
        before = self.mlp.checksum()
        sgp_attack(self.mlp, random_image(17), 1, preset_config('sgp-stdm', iterations=2))
        self.assertEqual(self.mlp.checksum(), before)

    def test_transforms_change_only_with_seed(self):
        x = random_image(18)
        cfg = preset_config('sgp-dim', iterations=3)
        first = sgp_attack(self.mlp, x, 1, cfg).x_adv
        again = sgp_attack(self.mlp, x, 1, cfg).x_adv
        self.assertEqual(first.tobytes(), again.tobytes())
        other = sgp_attack(self.mlp, x, 1, cfg.with_seed(99)).x_adv
        self.assertNotEqual(first.tobytes(), other.tobytes())

    def test_tim_smooths_the_averaged_gradient(self):
        x = random_image(19)
        cfg = preset_config('tim', iterations=1)
        result = sgp_attack(self.mlp, x, 2, cfg)
        _, grad = self.mlp.loss_and_input_grad(x, 2)
        smoothed = conv2d_reflect(grad, tim_kernel(7))
        np.testing.assert_array_equal(result.x_adv, np.clip(np.clip(x + cfg.alpha * np.sign(smoothed), 0, 1),
                                                            x - cfg.epsilon, x + cfg.epsilon))

    def test_loss_usually_increases(self):
        rng = np.random.default_rng(20)
        increased = 0
        for seed in range(20):
            model = Classifier.initialize(CNN_B, SMALL, 4, seed=seed)
            x = rng.random(SMALL).astype(np.float32)
            trace = sgp_attack(model, x, int(rng.integers(0, 4)), AttackConfig(layers=2)).loss_trace
            increased += trace[-1] >= trace[0]
        self.assertGreaterEqual(increased, 18)

    def test_invalid_inputs(self):
        with self.assertRaises(InvalidArgumentError):
            sgp_attack(self.mlp, random_image(0) + 1.5, 0, AttackConfig())
        with self.assertRaises(InvalidArgumentError):
            sgp_attack(self.mlp, random_image(0), 4, AttackConfig())

    def test_fgsm_step(self):
        batch = np.stack([random_image(21), random_image(22)])
        out = fgsm_step(self.mlp, batch, [0, 1], 0.03)
        self.assertLessEqual(float(np.max(np.abs(out - batch))), 0.03 + 1e-7)
        self.assertEqual(fgsm_step(self.mlp, batch, [0, 1], 0.0).tobytes(), batch.tobytes())
