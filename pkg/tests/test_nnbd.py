import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdmds.dataprep import Dataset, standardize
from bdmds.errors import DomainError, ParameterError, StateError
from bdmds.nnbd import (DegradationModel, NetworkSpec, TrainConfig, accuracy, evaluate_mse, forward,
                        gradient_check, init_network, mse, near_kink, train)


def toy_datasets(n=600, seed=0):
    """Smooth positive target over five features, split into two datasets."""
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.uniform(15, 35, n), rng.uniform(0.25, 1, n), rng.uniform(0.2, 1, n),
                         rng.uniform(0.1, 1, n), rng.uniform(0.8, 1, n)])
    y = 1e-5 * X[:, 3] ** 1.6 * np.exp(0.035 * (X[:, 0] - 25))
    ids = np.repeat([f"g{i}" for i in range(n // 50)], 50).astype(object)
    tr = Dataset(X[:480], y[:480], ids[:480])
    va = Dataset(X[480:], y[480:], ids[480:])
    (tr_s, va_s), _ = standardize(tr, va)
    return tr_s, va_s


class TestArchitecture:
    def test_parameter_count(self):
        assert NetworkSpec().n_params == 341
        assert init_network().n_params == 341

    def test_bad_shapes(self):
        with pytest.raises(ParameterError):
            NetworkSpec((4, 20, 1))
        with pytest.raises(ParameterError):
            NetworkSpec((5, 0, 1))

    def test_init_is_seeded(self):
        a, b = init_network(seed=1), init_network(seed=1)
        assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
        assert all(np.all(bias == 0) for bias in a.biases)
        assert np.abs(a.weights[0]).max() <= 1 / math.sqrt(5)


class TestMse:
    def test_examples(self):
        assert mse([1, 2], [1, 3]) == 0.5
        assert mse([0.0], [3.0]) == 9.0

    def test_mismatch(self):
        with pytest.raises(ParameterError):
            mse([1, 2], [1])
        with pytest.raises(ParameterError):
            mse([], [])

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
    def test_zero_on_self(self, xs):
        assert mse(xs, xs) == 0.0


class TestPredict:
    def test_untrained_without_stats(self):
        with pytest.raises(StateError):
            init_network().predict(np.zeros((1, 5)))

    def test_single_vector(self, model):
        x = [25.0, 0.5, 0.8, 0.4, 1.0]
        assert forward(model, x) == pytest.approx(model.predict(np.array([x]))[0])
        with pytest.raises(ParameterError):
            forward(model, x[:4])

    def test_non_finite_feature_named(self, model):
        with pytest.raises(DomainError) as exc:
            model.predict(np.array([[25.0, math.inf, 0.8, 0.4, 1.0]]))
        assert exc.value.field == "c_rate"

    def test_non_negative(self, model):
        rng = np.random.default_rng(0)
        X = np.column_stack([rng.uniform(0, 45, 500), rng.uniform(0, 2, 500), rng.uniform(0, 1, 500),
                             rng.uniform(0, 1, 500), rng.uniform(0.7, 1, 500)])
        assert np.all(model.predict(X) >= 0)

    def test_save_load_identical(self, model, tmp_path):
        model.save(tmp_path / "m.json")
        back = DegradationModel.load(tmp_path / "m.json")
        X = np.array([[20.0, 0.3, 0.9, 0.2, 0.95], [30.0, 0.9, 0.5, 0.5, 1.0]])
        assert np.array_equal(back.predict(X), model.predict(X))
        assert back.trained and back.fingerprint == model.fingerprint


class TestGradient:
    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_backprop_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        m = init_network(seed=seed)
        for b in m.biases:
            b[:] = rng.normal(0, 0.1, b.size)
        z = rng.normal(size=5)
        if near_kink(m, z):
            return
        assert gradient_check(m, z, float(rng.normal())) <= 1e-4

    def test_kink_detection(self):
        m = init_network()
        assert near_kink(m, np.zeros(5))

    def test_bad_step(self):
        with pytest.raises(ParameterError):
            gradient_check(init_network(), np.ones(5), 0.0, h=0)


@pytest.fixture(scope="module")
def trained():
    tr, va = toy_datasets()
    return train(tr, va, TrainConfig(max_epochs=30, batch_size=32))


class TestTraining:
    def test_loss_falls(self, trained):
        _, report = trained
        assert report.epochs[-1].train_mse < report.epochs[0].train_mse

    def test_keeps_best_epoch(self, trained):
        model, report = trained
        _, va = toy_datasets()
        assert evaluate_mse(model, va) == pytest.approx(min(e.val_mse for e in report.epochs), rel=1e-12)
        assert report.best.val_mse == min(e.val_mse for e in report.epochs)
        assert model.fingerprint["best_epoch"] == report.best_epoch

    def test_learning_rate_schedule(self):
        cfg = TrainConfig()
        assert [cfg.rate_at(e) for e in (1, 20, 21, 41, 65)] == [1e-2, 1e-2, 5e-3, 2.5e-3, 1.25e-3]

    def test_deterministic(self):
        tr, va = toy_datasets()
        cfg = TrainConfig(max_epochs=3)
        a, _ = train(tr, va, cfg)
        b, _ = train(tr, va, cfg)
        assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))

    def test_parallel_mse_matches(self, trained):
        model, _ = trained
        tr, _ = toy_datasets()
        assert evaluate_mse(model, tr, jobs=3, chunk=100) == pytest.approx(evaluate_mse(model, tr), rel=1e-12)

    def test_requires_standardized(self):
        raw = Dataset(np.ones((2, 5)), np.ones(2), np.array(["a", "a"], dtype=object))
        with pytest.raises(ParameterError):
            train(raw, raw)

    def test_divergence_raises(self):
        from bdmds.errors import TrainingError
        tr, va = toy_datasets()
        with pytest.raises(TrainingError):
            train(tr, va, TrainConfig(max_epochs=200, learning_rate=10.0, decay_every=1000))

    def test_constant_zero_target_learns_zero(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(200, 5))
        ids = np.repeat(["a", "b"], 100).astype(object)
        (tr, va), _ = standardize(Dataset(X[:100], np.zeros(100), ids[:100]),
                                  Dataset(X[100:], np.zeros(100), ids[100:]))
        model, _ = train(tr, va, TrainConfig(max_epochs=5, batch_size=20))
        X_raw, y_raw = tr.raw_arrays()
        assert mse(model.predict(X_raw), y_raw) <= 1e-8


class TestAccuracy:
    def test_perfect_prediction(self):
        class Exact:
            def predict(self, X):
                return X[:, 0]
        ds = Dataset(np.column_stack([np.array([1e-5, 2e-5])] + [np.zeros(2)] * 4), np.array([1e-5, 2e-5]),
                     np.array(["a", "a"], dtype=object))
        assert accuracy(Exact(), ds) == 1.0

    def test_bad_tolerance(self, model):
        _, va = toy_datasets()
        with pytest.raises(ParameterError):
            accuracy(model, va, tol=0)


def test_default_surrogate_accuracy(surrogate):
    assert surrogate.val_accuracy >= 0.90
    assert surrogate.model.trained
