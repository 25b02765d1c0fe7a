"""Model core: initialization, training, evaluation, distance."""
import math

import numpy as np
import pytest

from fedtopo.data import Dataset, generate_synthetic
from fedtopo.errors import ConfigError, ShapeError
from fedtopo.models import (
    EvalMetrics,
    Hyperparams,
    ModelParams,
    ModelSpec,
    evaluate_model,
    init_model,
    params_distance,
    train_local,
)


def small_dataset(n=16, dim=3, classes=2, seed=0):
    return generate_synthetic("blobs", n, dim, classes, seed=seed)


class TestModelSpec:
    def test_logreg_rejects_hidden_layers(self):
        with pytest.raises(ConfigError):
            ModelSpec("logreg", 4, (8,), 2)

    def test_mlp_needs_hidden_layers(self):
        with pytest.raises(ConfigError):
            ModelSpec("mlp", 4, (), 2)

    def test_fingerprint_separates_architectures(self):
        a = ModelSpec("mlp", 4, (3,), 2).fingerprint()
        b = ModelSpec("mlp", 4, (4,), 2).fingerprint()
        c = ModelSpec("mlp", 4, (3, 3), 2).fingerprint()
        assert len({a, b, c}) == 3


class TestInit:
    def test_logreg_shapes(self):
        params = init_model(ModelSpec("logreg", 2, (), 2), seed=0)
        assert params.shapes() == [(2, 2), (1, 2)]

    def test_mlp_shapes(self):
        params = init_model(ModelSpec("mlp", 4, (3,), 2), seed=0)
        assert params.shapes() == [(4, 3), (1, 3), (3, 2), (1, 2)]

    def test_biases_zero_weights_bounded(self):
        spec = ModelSpec("mlp", 6, (5, 4), 3)
        params = init_model(spec, seed=1)
        dims = spec.layer_dims()
        for i, (fan_in, fan_out) in enumerate(dims):
            weight, bias = params.layers[2 * i], params.layers[2 * i + 1]
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            assert np.abs(weight).max() <= bound
            assert np.all(bias == 0.0)

    def test_deterministic(self):
        spec = ModelSpec("mlp", 4, (3,), 2)
        a = init_model(spec, seed=7)
        b = init_model(spec, seed=7)
        for left, right in zip(a.layers, b.layers):
            assert np.array_equal(left, right)

    def test_seed_matters(self):
        spec = ModelSpec("logreg", 4, (), 2)
        a = init_model(spec, seed=7)
        b = init_model(spec, seed=8)
        assert not np.array_equal(a.layers[0], b.layers[0])

    def test_random_spec_shapes_property(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            depth = int(rng.integers(0, 3))
            hidden = tuple(int(h) for h in rng.integers(1, 8, size=depth))
            kind = "mlp" if hidden else "logreg"
            spec = ModelSpec(kind, int(rng.integers(1, 9)), hidden, int(rng.integers(2, 5)))
            params = init_model(spec, seed=int(rng.integers(0, 1000)))
            widths = [spec.input_dim, *spec.hidden_dims, spec.num_classes]
            expected = []
            for fan_in, fan_out in zip(widths[:-1], widths[1:]):
                expected += [(fan_in, fan_out), (1, fan_out)]
            assert params.shapes() == expected


class TestParamsType:
    def test_rejects_non_finite(self):
        with pytest.raises(ShapeError):
            ModelParams((np.array([[np.nan]]), np.array([[0.0]])), spec_hash=1)

    def test_rejects_odd_layer_count(self):
        with pytest.raises(ShapeError):
            ModelParams((np.zeros((2, 2)),), spec_hash=1)

    def test_rejects_misaligned_bias(self):
        with pytest.raises(ShapeError):
            ModelParams((np.zeros((2, 3)), np.zeros((1, 2))), spec_hash=1)

    def test_arrays_frozen(self):
        params = init_model(ModelSpec("logreg", 2, (), 2), seed=0)
        with pytest.raises(ValueError):
            params.layers[0][0, 0] = 5.0


class TestTraining:
    def test_single_sample_single_step_matches_hand_gradient(self):
        # One sample, one epoch, batch 1: W' = W - lr * x^T (softmax(xW+b) - y),
        # b' = b - lr * (softmax(xW+b) - y), written out independently here.
        weight = np.array([[0.2, -0.1], [0.4, 0.3]])
        bias = np.array([[0.05, -0.05]])
        params = ModelParams((weight, bias), spec_hash=9)
        x = np.array([[1.5, -0.7]])
        y = np.array([0])
        data = Dataset(x, y)
        lr = 0.3
        hyper = Hyperparams(learning_rate=lr, local_epochs=1, batch_size=1, seed=0)
        trained, metrics = train_local(params, data, hyper)

        logits = x @ weight + bias
        exp = np.exp(logits - logits.max())
        probs = exp / exp.sum()
        expected_loss = -math.log(probs[0, 0])
        grad_logits = probs.copy()
        grad_logits[0, 0] -= 1.0
        expected_w = weight - lr * (x.T @ grad_logits)
        expected_b = bias - lr * grad_logits
        assert np.allclose(trained.layers[0], expected_w, rtol=0, atol=1e-15)
        assert np.allclose(trained.layers[1], expected_b, rtol=0, atol=1e-15)
        assert metrics.train_loss == pytest.approx(expected_loss, abs=1e-12)
        assert metrics.num_samples == 1

    def test_gradients_match_finite_differences(self):
        # Relative error of the analytic step against a central-difference
        # gradient of the mean loss, for an MLP with a hidden layer.
        spec = ModelSpec("mlp", 3, (4,), 3)
        params = init_model(spec, seed=5)
        data = small_dataset(n=8, dim=3, classes=3, seed=2)
        lr = 1.0
        hyper = Hyperparams(learning_rate=lr, local_epochs=1, batch_size=8, seed=0)
        trained, _ = train_local(params, data, hyper)
        analytic = [
            (old - new) / lr for old, new in zip(params.layers, trained.layers)
        ]

        def mean_loss(layers):
            probe = ModelParams(tuple(layers), params.spec_hash)
            return evaluate_model(probe, data).eval_loss

        eps = 1e-6
        for li, grad in enumerate(analytic):
            numeric = np.zeros_like(grad)
            for idx in np.ndindex(grad.shape):
                bumped_up = [arr.copy() for arr in params.layers]
                bumped_dn = [arr.copy() for arr in params.layers]
                bumped_up[li][idx] += eps
                bumped_dn[li][idx] -= eps
                numeric[idx] = (mean_loss(bumped_up) - mean_loss(bumped_dn)) / (2 * eps)
            denom = max(np.abs(numeric).max(), np.abs(grad).max(), 1e-8)
            assert np.abs(grad - numeric).max() / denom < 1e-5

    def test_loss_decreases_on_separable_data(self):
        data = generate_synthetic("linear", 200, 6, 2, seed=3)
        spec = ModelSpec("logreg", 6, (), 2)
        params = init_model(spec, seed=1)
        initial_loss = evaluate_model(params, data).eval_loss
        hyper = Hyperparams(learning_rate=0.1, local_epochs=50, batch_size=32, seed=2)
        _, metrics = train_local(params, data, hyper)
        assert metrics.train_loss < initial_loss

    def test_bitwise_deterministic(self):
        data = small_dataset(n=20, seed=4)
        spec = ModelSpec("mlp", 3, (4,), 2)
        params = init_model(spec, seed=6)
        hyper = Hyperparams(learning_rate=0.05, local_epochs=3, batch_size=4, seed=8)
        a, am = train_local(params, data, hyper)
        b, bm = train_local(params, data, hyper)
        for left, right in zip(a.layers, b.layers):
            assert np.array_equal(left, right)
        assert am.train_loss == bm.train_loss

    def test_epoch_offset_chain_matches_single_call(self):
        # k one-epoch calls with offsets 0..k-1 must replay a k-epoch call
        # bitwise; ring-style training depends on this.
        data = small_dataset(n=20, seed=4)
        spec = ModelSpec("mlp", 3, (4,), 2)
        start = init_model(spec, seed=6)
        hyper3 = Hyperparams(learning_rate=0.05, local_epochs=3, batch_size=4, seed=8)
        whole, whole_metrics = train_local(start, data, hyper3)
        hyper1 = Hyperparams(learning_rate=0.05, local_epochs=1, batch_size=4, seed=8)
        step = start
        for offset in range(3):
            step, step_metrics = train_local(step, data, hyper1, epoch_offset=offset)
        for left, right in zip(whole.layers, step.layers):
            assert np.array_equal(left, right)
        assert whole_metrics.train_loss == step_metrics.train_loss

    def test_zero_learning_rate_is_a_no_op(self):
        data = small_dataset(n=12, dim=3, classes=2, seed=4)
        params = init_model(ModelSpec("logreg", 3, (), 2), seed=7)
        hyper = Hyperparams(learning_rate=0.0, local_epochs=2, batch_size=4, seed=1)
        trained, _ = train_local(params, data, hyper)
        for left, right in zip(trained.layers, params.layers):
            assert np.array_equal(left, right)

    def test_input_dim_mismatch(self):
        data = small_dataset(n=10, dim=3)
        params = init_model(ModelSpec("logreg", 4, (), 2), seed=0)
        hyper = Hyperparams(learning_rate=0.1, local_epochs=1, batch_size=4, seed=0)
        with pytest.raises(ShapeError):
            train_local(params, data, hyper)

    def test_empty_dataset(self):
        params = init_model(ModelSpec("logreg", 2, (), 2), seed=0)
        hyper = Hyperparams(learning_rate=0.1, local_epochs=1, batch_size=4, seed=0)
        with pytest.raises(ConfigError):
            train_local(params, Dataset(np.zeros((0, 2)), np.zeros(0, dtype=np.int64)), hyper)


class TestEvaluate:
    def test_uniform_model_on_balanced_binary_gives_ln2(self):
        data = generate_synthetic("blobs", 40, 2, 2, seed=1)
        params = ModelParams((np.zeros((2, 2)), np.zeros((1, 2))), spec_hash=3)
        result = evaluate_model(params, data)
        assert result.eval_loss == pytest.approx(math.log(2.0), abs=1e-12)

    def test_accuracy_is_exact_fraction(self):
        # All-zero logits predict class 0 everywhere (argmax tie goes low),
        # so accuracy equals the share of zero labels exactly.
        feats = np.zeros((10, 2))
        labels = np.array([0] * 7 + [1] * 3, dtype=np.int64)
        params = ModelParams((np.zeros((2, 2)), np.zeros((1, 2))), spec_hash=3)
        result = evaluate_model(params, Dataset(feats, labels))
        assert result.accuracy == 0.7
        assert result.num_samples == 10

    def test_trained_model_is_accurate(self):
        data = generate_synthetic("linear", 300, 8, 2, seed=6)
        params = init_model(ModelSpec("logreg", 8, (), 2), seed=0)
        hyper = Hyperparams(learning_rate=0.1, local_epochs=40, batch_size=32, seed=1)
        trained, _ = train_local(params, data, hyper)
        assert evaluate_model(trained, data).accuracy >= 0.99

    def test_permutation_invariance(self):
        data = small_dataset(n=30, seed=9)
        params = init_model(ModelSpec("logreg", 3, (), 2), seed=2)
        base = evaluate_model(params, data)
        rng = np.random.default_rng(0)
        for _ in range(5):
            perm = rng.permutation(len(data))
            shuffled = Dataset(data.features[perm], data.labels[perm])
            got = evaluate_model(params, shuffled)
            assert got.accuracy == base.accuracy
            assert got.eval_loss == pytest.approx(base.eval_loss, abs=1e-12)


class TestDistance:
    def test_zero_for_identical(self):
        params = init_model(ModelSpec("logreg", 3, (), 2), seed=1)
        assert params_distance(params, params) == 0.0

    def test_three_four_five(self):
        a = ModelParams((np.array([[3.0, 4.0]]), np.zeros((1, 2))), spec_hash=1)
        b = ModelParams((np.array([[0.0, 0.0]]), np.zeros((1, 2))), spec_hash=1)
        assert params_distance(a, b) == 5.0

    def test_symmetry(self):
        spec = ModelSpec("mlp", 3, (4,), 2)
        a = init_model(spec, seed=1)
        b = init_model(spec, seed=2)
        assert params_distance(a, b) == params_distance(b, a)

    def test_spec_mismatch(self):
        a = init_model(ModelSpec("logreg", 3, (), 2), seed=1)
        b = init_model(ModelSpec("logreg", 4, (), 2), seed=1)
        with pytest.raises(ShapeError):
            params_distance(a, b)
