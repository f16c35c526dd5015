import os
import tempfile
import unittest
from dataclasses import replace

import numpy as np

from tbn import tbn_error
from tbn.conv_engine import max_relative_error
from tbn.inference import run_model
from tbn.packed_format import (
    container_overhead_bytes,
    load_model_file,
    model_size_bytes,
    save_model_file,
)
from tbn.quantizer import discretize, optimal_alpha
from tbn.tbn_train import algorithm
from tbn.tbn_train.dataset import Batch, make_synth_dataset
from tbn.tbn_train.network import Conv, Gradients, NetSpec, build_toy_net
from tbn.tbn_train.train_config import TrainConfig, schedule_lr

SGD = TrainConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.0)


def scalar_state(w: float, config: TrainConfig = SGD) -> algorithm.TrainState:
    net = NetSpec((Conv(1, 1, 1, 1),), (1, 1, 1), 1)
    state = algorithm.init_state(net, config)
    return replace(
        state,
        weights=[np.full((1, 1, 1, 1), w, dtype=np.float32)],
        weight_velocity=[np.zeros((1, 1, 1, 1), dtype=np.float32)],
    )


def scalar_grads(g: float, gb: float = 0.0) -> Gradients:
    return Gradients([np.full((1, 1, 1, 1), g)], [np.full(1, gb)])


class TestScheduleLr(unittest.TestCase):
    def test_default_schedule(self):
        config = TrainConfig()
        expected = {
            0: 0.1,
            29: 0.1,
            30: 0.01,
            39: 0.01,
            40: 0.001,
            49: 0.001,
            50: 0.0001,
            57: 0.0001,
        }
        for epoch, lr in expected.items():
            self.assertAlmostEqual(schedule_lr(epoch, config), lr, places=12)

    def test_no_drops(self):
        config = TrainConfig(learning_rate=0.3, lr_drop_epochs=())
        self.assertEqual({schedule_lr(e, config) for e in range(100)}, {0.3})

    def test_negative_epoch(self):
        with self.assertRaises(ValueError):
            schedule_lr(-1, TrainConfig())

    def test_config_validation(self):
        with self.assertRaises(tbn_error.ConfigKeyError):
            TrainConfig(momentum=1.0)
        with self.assertRaises(tbn_error.ConfigKeyError):
            TrainConfig(lr_drop_epochs=(40, 30))
        with self.assertRaises(tbn_error.ConfigKeyError):
            TrainConfig.from_params({"batch_size": 0})
        config = TrainConfig.from_params({"learning_rate": 0.5, "width": 4})
        self.assertEqual(config.learning_rate, 0.5)
        self.assertEqual(config.clip_bound, 2.05)


class TestApproximateFilters(unittest.TestCase):
    def test_single_weight_is_exact(self):
        state = scalar_state(1.7)
        (layer,) = algorithm.approximate_all_filters(state)
        self.assertEqual(layer.codes.reshape(-1).tolist(), [2])
        self.assertAlmostEqual(float(layer.alphas[0]), 0.85, places=6)
        np.testing.assert_array_equal(layer.approx, state.weights[0])

    def test_lattice_weights_unchanged(self):
        net = NetSpec((Conv(1, 1, 1, 3),), (1, 1, 3), 1)
        state = replace(
            algorithm.init_state(net, SGD), weights=[np.ones((1, 1, 1, 3), dtype=np.float32)]
        )
        (layer,) = algorithm.approximate_all_filters(state)
        np.testing.assert_array_equal(layer.approx, state.weights[0])

    def test_shadow_weights_untouched(self):
        state = algorithm.init_state(build_toy_net(), TrainConfig())
        before = [w.tobytes() for w in state.weights]
        algorithm.approximate_all_filters(state)
        self.assertEqual([w.tobytes() for w in state.weights], before)

    def test_float_layers_pass_through(self):
        state = algorithm.init_state(build_toy_net(keep_first_last_float=True), TrainConfig())
        layers = algorithm.approximate_all_filters(state)
        self.assertEqual([l.quantized for l in layers], [False, True, True, False])
        np.testing.assert_array_equal(layers[0].approx, state.weights[0])

    def test_init_inside_bound(self):
        state = algorithm.init_state(build_toy_net(), TrainConfig(seed=3))
        for w, b in zip(state.weights, state.biases):
            self.assertLessEqual(np.abs(w).max(), algorithm.INIT_BOUND)
            self.assertFalse(np.any(b))

    def test_idempotent_on_lattice(self):
        rng = np.random.default_rng(0)
        for alpha in np.linspace(0.5, 1.0, 51)[1:]:
            codes = rng.choice(np.array([-2, -1, 1, 2]), 27)
            w = alpha * codes
            np.testing.assert_array_equal(discretize(w), codes)
            self.assertAlmostEqual(optimal_alpha(w), alpha, delta=1e-6)


class TestForwardPaths(unittest.TestCase):
    def test_two_bit_matches_reference(self):
        rng = np.random.default_rng(1)
        state = algorithm.init_state(build_toy_net(), TrainConfig(seed=1))
        state = replace(state, biases=[0.1 * rng.standard_normal(b.shape) for b in state.biases])
        x = rng.standard_normal((4, 1, 16, 16))
        layers = algorithm.approximate_all_filters(state)
        two_bit, _ = algorithm.two_bit_forward(state.net, x, layers)
        reference, _ = algorithm.reference_forward(state.net, x, layers)
        self.assertLessEqual(max_relative_error(two_bit, reference), 1e-4)

    def test_batch_equals_items(self):
        rng = np.random.default_rng(2)
        state = algorithm.init_state(build_toy_net(), TrainConfig(seed=2))
        x = rng.standard_normal((3, 1, 16, 16))
        layers = algorithm.approximate_all_filters(state)
        batched, _ = algorithm.two_bit_forward(state.net, x, layers)
        for i in range(3):
            single, _ = algorithm.two_bit_forward(state.net, x[i : i + 1], layers)
            np.testing.assert_array_equal(single[0], batched[i])

    def test_backward_matches_reference_path(self):
        rng = np.random.default_rng(4)
        state = algorithm.init_state(build_toy_net(width=4), TrainConfig(seed=4))
        x = rng.standard_normal((2, 1, 16, 16))
        layers = algorithm.approximate_all_filters(state)
        approx = [l.approx for l in layers]
        dscores = rng.standard_normal((2, 4))

        _, cache = algorithm.two_bit_forward(state.net, x, layers)
        grads = algorithm.two_bit_backward(dscores, cache, approx)
        _, ref_cache = algorithm.reference_forward(state.net, x, layers)
        ref = algorithm.two_bit_backward(dscores, ref_cache, approx)

        self.assertEqual([g.shape for g in grads.weights], [w.shape for w in state.weights])
        self.assertEqual([g.shape for g in grads.biases], [b.shape for b in state.biases])
        pairs = zip([*grads.weights, *grads.biases], [*ref.weights, *ref.biases])
        for g, r in pairs:
            self.assertLessEqual(max_relative_error(g, r), 1e-4)

    def test_layer_count_mismatch(self):
        state = algorithm.init_state(build_toy_net(), TrainConfig())
        layers = algorithm.approximate_all_filters(state)
        with self.assertRaises(tbn_error.ShapeMismatch):
            algorithm.two_bit_forward(state.net, np.zeros((1, 1, 16, 16)), layers[:-1])


class TestUpdateParameters(unittest.TestCase):
    def test_plain_sgd_step(self):
        state = algorithm.update_parameters(scalar_state(0.5), scalar_grads(1.0), SGD)
        self.assertAlmostEqual(float(state.weights[0].item()), 0.4, places=6)

    def test_zero_gradient_keeps_weights(self):
        state = scalar_state(0.5)
        new = algorithm.update_parameters(state, scalar_grads(0.0), SGD)
        np.testing.assert_array_equal(new.weights[0], state.weights[0])
        np.testing.assert_array_equal(new.biases[0], state.biases[0])

    def test_momentum_recurrence(self):
        config = TrainConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.0)
        state = scalar_state(0.5, config)
        state = algorithm.update_parameters(state, scalar_grads(1.0), config)
        state = algorithm.update_parameters(state, scalar_grads(0.5), config)
        # v1 = 1, w1 = 0.4; v2 = 0.9 + 0.5, w2 = 0.4 - 0.14
        self.assertAlmostEqual(float(state.weight_velocity[0].item()), 1.4, places=6)
        self.assertAlmostEqual(float(state.weights[0].item()), 0.26, places=6)

    def test_weight_decay_spares_biases(self):
        config = TrainConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.1)
        state = replace(scalar_state(1.0, config), biases=[np.ones(1, dtype=np.float32)])
        state = algorithm.update_parameters(state, scalar_grads(0.0), config)
        self.assertAlmostEqual(float(state.weights[0].item()), 0.99, places=6)
        self.assertEqual(float(state.biases[0].item()), 1.0)

    def test_clipping(self):
        state = algorithm.update_parameters(scalar_state(2.0), scalar_grads(-10.0), SGD)
        self.assertAlmostEqual(float(state.weights[0].item()), 2.05, places=6)
        no_clip = replace(SGD, clip=False)
        state = algorithm.update_parameters(scalar_state(2.0), scalar_grads(-10.0), no_clip)
        self.assertAlmostEqual(float(state.weights[0].item()), 3.0, places=6)

    def test_biases_are_not_clipped(self):
        state = algorithm.update_parameters(scalar_state(0.0), scalar_grads(0.0, -100.0), SGD)
        self.assertAlmostEqual(float(state.biases[0].item()), 10.0, places=5)

    def test_shape_mismatch(self):
        grads = Gradients([np.zeros((2, 1, 1, 1))], [np.zeros(1)])
        with self.assertRaises(tbn_error.ShapeMismatch):
            algorithm.update_parameters(scalar_state(0.5), grads, SGD)


class TestTraining(unittest.TestCase):
    def setUp(self):
        data = make_synth_dataset(0, 32, 4)
        self.batch = Batch(data.images, data.labels)
        self.net = build_toy_net(data.input_shape, data.classes, 8)

    def run_steps(self, config: TrainConfig, steps: int):
        state = algorithm.init_state(self.net, config)
        losses = []
        for _ in range(steps):
            state, loss = algorithm.train_minibatch(state, self.batch, config)
            losses.append(loss)
        return state, losses

    def test_zero_learning_rate(self):
        config = TrainConfig(learning_rate=0.0, batch_size=32)
        start = algorithm.init_state(self.net, config)
        state, _ = algorithm.train_minibatch(start, self.batch, config)
        for a, b in zip(start.weights + start.biases, state.weights + state.biases):
            np.testing.assert_array_equal(a, b)
        self.assertEqual(state.iteration, 1)
        self.assertEqual(state.epoch, 0)

    def test_deterministic(self):
        config = TrainConfig(seed=5, batch_size=32)
        a, losses_a = self.run_steps(config, 5)
        b, losses_b = self.run_steps(config, 5)
        self.assertEqual(losses_a, losses_b)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_shadow_weights_leave_the_lattice(self):
        state, _ = self.run_steps(TrainConfig(batch_size=32), 10)
        off = 0
        for layer, w in zip(algorithm.approximate_all_filters(state), state.weights):
            off += int(np.sum(np.abs(w - layer.approx) > 1e-6))
        self.assertGreater(off, 0)

    def test_loss_decreases_on_fixed_batch(self):
        _, losses = self.run_steps(TrainConfig(batch_size=32), 200)
        self.assertTrue(np.all(np.isfinite(losses)))
        smoothed = np.convolve(losses, np.ones(10) / 10, mode="valid")
        self.assertLess(smoothed[-1], smoothed[0])
        # the window-10 average falls from each quarter of the run to the next
        quarters = [np.mean(q) for q in np.array_split(smoothed, 4)]
        for earlier, later in zip(quarters, quarters[1:]):
            self.assertLess(later, earlier)

    def test_advance_epoch(self):
        config = TrainConfig(lr_drop_epochs=(1,))
        state = algorithm.advance_epoch(algorithm.init_state(self.net, config), config)
        self.assertEqual(state.epoch, 1)
        self.assertAlmostEqual(state.eta, 0.01)


class TestExport(unittest.TestCase):
    def test_export_matches_training_forward(self):
        rng = np.random.default_rng(3)
        data = make_synth_dataset(1, 32, 4)
        net = build_toy_net(data.input_shape, data.classes, 8)
        config = TrainConfig(batch_size=32)
        state = algorithm.init_state(net, config)
        for _ in range(3):
            state, _ = algorithm.train_minibatch(state, Batch(data.images, data.labels), config)
        x = rng.standard_normal((5, 1, 16, 16))

        model = algorithm.export_inference_model(state)
        expected, _ = algorithm.two_bit_forward(net, x, algorithm.approximate_all_filters(state))
        in_memory = run_model(model, x, net)
        self.assertLessEqual(max_relative_error(in_memory, expected), 1e-4)

        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "model.tbn")
            save_model_file(model, path)
            loaded = load_model_file(path)
        self.assertEqual(loaded, model)
        np.testing.assert_array_equal(run_model(loaded, x, net), in_memory)

    def test_file_size_prediction(self):
        # every filter holds a multiple of four weights
        net = build_toy_net((4, 16, 16), 4, 4)
        state = algorithm.init_state(net, TrainConfig())
        model = algorithm.export_inference_model(state)
        with tempfile.TemporaryDirectory() as d:
            size = save_model_file(model, os.path.join(d, "model.tbn"))
        predicted = model_size_bytes(model.param_count).two_bit_bytes
        self.assertEqual(size, predicted + container_overhead_bytes(model))

    def test_gain_folded_into_alpha(self):
        state = algorithm.init_state(build_toy_net(), TrainConfig())
        model = algorithm.export_inference_model(state)
        layers = algorithm.approximate_all_filters(state)
        for conv, layer, approx in zip(state.net.conv_layers, model.layers, layers):
            np.testing.assert_allclose(
                layer.alphas(), approx.alphas * conv.gain, rtol=1e-6
            )
            np.testing.assert_array_equal(layer.code_stack(), approx.codes)


class TestEvaluate(unittest.TestCase):
    def test_top_k(self):
        scores = np.array([[0.1, 0.9, 0.0], [0.5, 0.2, 0.3], [0.0, 0.0, 0.0]])
        labels = np.array([1, 2, 1])
        self.assertAlmostEqual(algorithm.top_k_accuracy(scores, labels, 1), 1 / 3)
        self.assertAlmostEqual(algorithm.top_k_accuracy(scores, labels, 2), 3 / 3)
        self.assertEqual(algorithm.top_k_accuracy(scores, labels, 10), 1.0)

    def test_evaluate_keys(self):
        data = make_synth_dataset(0, 20, 4)
        state = algorithm.init_state(build_toy_net(), TrainConfig())
        metrics = algorithm.evaluate(state, data, 3)
        self.assertEqual(set(metrics), {"top1", "top3"})
        self.assertGreaterEqual(metrics["top3"], metrics["top1"])


if __name__ == "__main__":
    unittest.main()
