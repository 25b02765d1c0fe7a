"""Client sampling and aggregation rules."""
import numpy as np
import pytest

from fedtopo.data import generate_synthetic, partition_dataset, PartitionSpec
from fedtopo.errors import (
    ConfigError,
    EmptyAggregationError,
    InsufficientClientsError,
    ShapeError,
)
from fedtopo.models import (
    EvalMetrics,
    Hyperparams,
    ModelParams,
    ModelSpec,
    TrainMetrics,
    init_model,
    train_local,
)
from fedtopo.strategy import (
    ClientHandle,
    FitInstruction,
    FitResult,
    StrategyConfig,
    aggregate_evaluate,
    fedavg_aggregate,
    ifca_aggregate,
    ifca_assign,
    sample_clients,
)


def handles(n):
    return [ClientHandle(f"c{i:03d}") for i in range(n)]


def result(client_id, values, n, spec_hash=1):
    params = ModelParams((np.array([values], dtype=np.float64), np.zeros((1, len(values)))), spec_hash)
    metrics = TrainMetrics(train_loss=0.5, num_samples=n, duration_ms=1.0)
    return FitResult(client_id, params, n, metrics)


class TestStrategyConfig:
    def test_quorum_ordering_enforced(self):
        with pytest.raises(ConfigError):
            StrategyConfig(min_available_clients=2, min_fit_clients=3)

    def test_fraction_range(self):
        with pytest.raises(ConfigError):
            StrategyConfig(min_available_clients=2, min_fit_clients=1, fit_fraction=0.0)
        with pytest.raises(ConfigError):
            StrategyConfig(min_available_clients=2, min_fit_clients=1, eval_fraction=1.5)


class TestFitInstruction:
    def test_exactly_one_model_field(self):
        params = init_model(ModelSpec("logreg", 2, (), 2), seed=0)
        hyper = Hyperparams(0.1, 1, 8, seed=0)
        FitInstruction(round=1, hyper=hyper, deadline_ms=10, params=params)
        FitInstruction(round=1, hyper=hyper, deadline_ms=10, cluster_params=(params,))
        with pytest.raises(ConfigError):
            FitInstruction(round=1, hyper=hyper, deadline_ms=10)
        with pytest.raises(ConfigError):
            FitInstruction(
                round=1, hyper=hyper, deadline_ms=10, params=params, cluster_params=(params,)
            )


class TestSampling:
    def test_half_fraction_of_ten(self):
        picked = sample_clients(handles(10), fraction=0.5, min_n=3, rng_seed=1)
        assert len(picked) == 5
        assert picked == sorted(picked, key=lambda h: h.client_id)

    def test_min_n_floor_applies(self):
        picked = sample_clients(handles(10), fraction=0.1, min_n=3, rng_seed=1)
        assert len(picked) == 3

    def test_full_fraction_returns_everyone_sorted(self):
        pool = handles(6)
        picked = sample_clients(pool[::-1], fraction=1.0, min_n=1, rng_seed=5)
        assert [h.client_id for h in picked] == [h.client_id for h in pool]

    def test_insufficient_clients(self):
        with pytest.raises(InsufficientClientsError):
            sample_clients(handles(2), fraction=1.0, min_n=3, rng_seed=0)

    def test_blacklist_counts_against_quorum(self):
        pool = handles(4)
        blacklist = frozenset({"c000", "c001"})
        with pytest.raises(InsufficientClientsError):
            sample_clients(pool, fraction=1.0, min_n=3, blacklist=blacklist, rng_seed=0)

    def test_blacklisted_never_sampled_property(self):
        pool = handles(12)
        blacklist = frozenset({"c002", "c007"})
        for seed in range(30):
            picked = sample_clients(pool, fraction=0.5, min_n=2, blacklist=blacklist, rng_seed=seed)
            assert not {h.client_id for h in picked} & blacklist

    def test_deterministic_per_seed(self):
        a = sample_clients(handles(10), 0.5, 2, rng_seed=9)
        b = sample_clients(handles(10), 0.5, 2, rng_seed=9)
        assert [h.client_id for h in a] == [h.client_id for h in b]


class TestFedAvg:
    def test_two_client_oracle(self):
        # ([1,3], n=10) and ([3,1], n=30) -> (10*[1,3] + 30*[3,1]) / 40 = [2.5, 1.5]
        out = fedavg_aggregate([result("a", [1.0, 3.0], 10), result("b", [3.0, 1.0], 30)])
        assert out.layers[0].tolist() == [[2.5, 1.5]]

    def test_single_result_returned_unchanged(self):
        only = result("a", [0.1, 0.7], 13)
        out = fedavg_aggregate([only])
        assert out is only.params

    def test_idempotent_on_replicas(self):
        params = init_model(ModelSpec("logreg", 3, (), 2), seed=4)
        metrics = TrainMetrics(0.1, 1, 0.0)
        results = [
            FitResult(f"c{i}", params, n, metrics) for i, n in enumerate([1, 1, 1, 7])
        ]
        out = fedavg_aggregate(results)
        for left, right in zip(out.layers, params.layers):
            assert np.array_equal(left, right)

    def test_permutation_invariant_bitwise(self):
        results = [
            result("a", [0.1, 0.2], 3),
            result("b", [1.5, -2.5], 7),
            result("c", [0.9, 0.4], 11),
        ]
        base = fedavg_aggregate(results)
        for perm in ([2, 0, 1], [1, 2, 0], [2, 1, 0]):
            shuffled = [results[i] for i in perm]
            out = fedavg_aggregate(shuffled)
            for left, right in zip(out.layers, base.layers):
                assert np.array_equal(left, right)

    def test_equal_weights_match_plain_mean(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            values = rng.normal(size=(5, 4))
            results = [result(f"c{i}", list(row), 17) for i, row in enumerate(values)]
            out = fedavg_aggregate(results)
            assert np.allclose(out.layers[0][0], values.mean(axis=0), rtol=0, atol=1e-12)

    def test_convexity_property(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            values = rng.normal(size=(4, 3))
            counts = rng.integers(1, 50, size=4)
            results = [
                result(f"c{i}", list(row), int(n)) for i, (row, n) in enumerate(zip(values, counts))
            ]
            out = fedavg_aggregate(results)
            coords = out.layers[0][0]
            lo, hi = values.min(axis=0), values.max(axis=0)
            assert np.all(coords >= lo - 1e-12)
            assert np.all(coords <= hi + 1e-12)

    def test_empty_input(self):
        with pytest.raises(EmptyAggregationError):
            fedavg_aggregate([])

    def test_spec_mismatch(self):
        with pytest.raises(ShapeError):
            fedavg_aggregate([result("a", [1.0], 5, spec_hash=1), result("b", [2.0], 5, spec_hash=2)])

    def test_zero_samples_rejected(self):
        with pytest.raises(ConfigError):
            fedavg_aggregate([result("a", [1.0], 0)])


class TestIfcaAssign:
    def test_picks_lower_loss_model(self):
        data = generate_synthetic("linear", 200, 5, 2, seed=3)
        spec = ModelSpec("logreg", 5, (), 2)
        good, _ = train_local(
            init_model(spec, seed=0), data, Hyperparams(0.1, 20, 32, seed=1)
        )
        bad = init_model(spec, seed=9)
        assert ifca_assign([good, bad], data) == 0
        assert ifca_assign([bad, good], data) == 1

    def test_tie_resolves_to_lowest_index(self):
        data = generate_synthetic("blobs", 30, 3, 2, seed=1)
        params = init_model(ModelSpec("logreg", 3, (), 2), seed=0)
        assert ifca_assign([params, params, params], data) == 0

    def test_group_models_attract_group_clients(self):
        # Pretrain one model per flip group; every client must then pick
        # the model trained on its own group's label convention.
        data = generate_synthetic("linear", 400, 8, 2, seed=5)
        parts = partition_dataset(
            data, PartitionSpec("cluster_flip", 8, seed=2, num_clusters=2)
        )
        spec = ModelSpec("logreg", 8, (), 2)
        hyper = Hyperparams(0.1, 5, 32, seed=3)
        cluster_models = []
        for g in range(2):
            pooled = parts[g]  # one representative client of group g
            trained, _ = train_local(init_model(spec, seed=g), pooled, hyper)
            cluster_models.append(trained)
        for i, part in enumerate(parts):
            assert ifca_assign(cluster_models, part) == i % 2


class TestIfcaAggregate:
    def test_empty_cluster_stays_frozen(self):
        spec = ModelSpec("logreg", 2, (), 2)
        frozen = init_model(spec, seed=1)
        active = init_model(spec, seed=2)
        metrics = TrainMetrics(0.2, 4, 0.0)
        results = [FitResult("a", active, 4, metrics, cluster_id=0)]
        out = ifca_aggregate([active, frozen], results)
        assert out[0] is active
        assert out[1] is frozen

    def test_splits_by_cluster_and_matches_per_cluster_fedavg(self):
        results = [
            result("a", [1.0, 1.0], 10),
            result("b", [3.0, 3.0], 10),
            FitResult("c", result("c", [5.0, 7.0], 10).params, 10, TrainMetrics(0.1, 10, 0.0), cluster_id=1),
        ]
        seeds = [result("x", [0.0, 0.0], 1).params, result("y", [9.0, 9.0], 1).params]
        out = ifca_aggregate(seeds, results)
        assert out[0].layers[0].tolist() == [[2.0, 2.0]]
        assert out[1].layers[0].tolist() == [[5.0, 7.0]]

    def test_single_cluster_reduces_to_fedavg(self):
        results = [result("a", [1.0, 3.0], 10), result("b", [3.0, 1.0], 30)]
        seed_params = result("z", [0.0, 0.0], 1).params
        out = ifca_aggregate([seed_params], results)
        plain = fedavg_aggregate(results)
        assert np.array_equal(out[0].layers[0], plain.layers[0])

    def test_out_of_range_cluster_id(self):
        bad = FitResult("a", result("a", [1.0], 5).params, 5, TrainMetrics(0.1, 5, 0.0), cluster_id=2)
        with pytest.raises(ConfigError):
            ifca_aggregate([result("z", [0.0], 1).params], [bad])


class TestAggregateEvaluate:
    def test_weighted_accuracy_oracle(self):
        evals = [
            ("a", EvalMetrics(eval_loss=0.2, accuracy=1.0, num_samples=10)),
            ("b", EvalMetrics(eval_loss=0.6, accuracy=0.5, num_samples=30)),
        ]
        loss, acc = aggregate_evaluate(evals)
        assert acc == pytest.approx(0.625, abs=1e-15)
        assert loss == pytest.approx(0.5, abs=1e-15)

    def test_single_result_passes_through(self):
        metrics = EvalMetrics(eval_loss=0.123456789, accuracy=0.7, num_samples=3)
        loss, acc = aggregate_evaluate([("a", metrics)])
        assert loss == metrics.eval_loss
        assert acc == metrics.accuracy

    def test_order_insensitive(self):
        evals = [
            ("a", EvalMetrics(0.2, 1.0, 10)),
            ("b", EvalMetrics(0.6, 0.5, 30)),
            ("c", EvalMetrics(0.4, 0.9, 5)),
        ]
        forward = aggregate_evaluate(evals)
        backward = aggregate_evaluate(evals[::-1])
        assert forward == backward

    def test_empty(self):
        with pytest.raises(EmptyAggregationError):
            aggregate_evaluate([])
