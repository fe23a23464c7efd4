import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusewake.fusion import FeatureMatrix
from fusewake.model import (
    LOGISTIC,
    MLP,
    AlarmTracker,
    ClassifierModel,
    TrainConfig,
    TrainingError,
    cross_validate,
    ema,
    gradient_check,
    init_params,
    logits,
    loss_and_grad,
    predict_score,
    random_search,
    smooth_and_alarm,
    subject_folds,
    train_classifier,
)


def blobs(seed=0, n=200, gap=4.0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.standard_normal((n, 2)) * 0.5 + np.outer(2 * y - 1, [gap / 2, gap / 2])
    return FeatureMatrix(("a", "b"), X, y, np.array([f"s{i % 10}" for i in range(n)]))


def random_model(kind, d, seed, hidden=16, l2=1e-4):
    rng = np.random.default_rng(seed)
    return ClassifierModel(kind, init_params(kind, d, hidden, rng), d, l2=l2, seed=seed), rng


def forward_oracle(model, x):
    """Hand-rolled forward pass written out with Python scalars."""
    p = model.params
    if model.kind == LOGISTIC:
        z = sum(float(wi) * float(xi) for wi, xi in zip(p["w"], x)) + float(p["b"][0])
    else:
        h = [
            np.tanh(sum(float(p["W1"][i, j]) * float(x[i]) for i in range(len(x))) + float(p["b1"][j]))
            for j in range(p["W1"].shape[1])
        ]
        z = sum(float(p["w2"][j]) * h[j] for j in range(len(h))) + float(p["b2"][0])
    return 1.0 / (1.0 + np.exp(-z))


class TestTraining:
    @pytest.mark.parametrize("kind", [LOGISTIC, MLP])
    def test_separable_blobs(self, kind):
        tr, va = blobs(0), blobs(1)
        m = train_classifier(kind, tr, va)
        acc = np.mean((predict_score(m, tr.X) > 0.5) == tr.y)
        assert acc >= 0.99

    def test_single_class(self):
        m = blobs()
        one = FeatureMatrix(m.columns, m.X, np.zeros(len(m)))
        with pytest.raises(TrainingError, match="single class"):
            train_classifier(LOGISTIC, one, m)

    def test_dimension_mismatch(self):
        m = blobs()
        with pytest.raises(TrainingError):
            train_classifier(LOGISTIC, m, m.select(["a"]))

    @pytest.mark.parametrize("kind", [LOGISTIC, MLP])
    def test_bit_deterministic(self, kind):
        a = train_classifier(kind, blobs(0), blobs(1), TrainConfig(seed=5))
        b = train_classifier(kind, blobs(0), blobs(1), TrainConfig(seed=5))
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()

    def test_best_snapshot_sequence_decreasing(self):
        rng = np.random.default_rng(3)
        y = np.arange(300) % 2
        X = rng.standard_normal((300, 3)) + 0.7 * y[:, None]
        m = train_classifier(MLP, (X[:200], y[:200]), (X[200:], y[200:]), TrainConfig(patience=6, max_epochs=60))
        assert np.all(np.diff(m.val_history) < 0)
        assert m.best_val_loss == m.val_history[-1]

    def test_round_trip(self):
        m = train_classifier(MLP, blobs(0), blobs(1))
        back = ClassifierModel.from_dict(m.to_dict())
        np.testing.assert_array_equal(predict_score(back, blobs(2).X), predict_score(m, blobs(2).X))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0)
        with pytest.raises(ValueError):
            TrainConfig(patience=200, max_epochs=200)


class TestPredict:
    def test_zero_weights(self):
        m = ClassifierModel(LOGISTIC, {"w": np.zeros(3), "b": np.zeros(1)}, 3)
        for x in np.random.default_rng(0).standard_normal((10, 3)) * 100:
            assert predict_score(m, x) == 0.5

    def test_monotone_along_weights(self):
        m, _ = random_model(LOGISTIC, 4, 1)
        steps = [predict_score(m, t * m.params["w"]) for t in np.linspace(-3, 3, 25)]
        assert np.all(np.diff(steps) > 0)

    @pytest.mark.parametrize("kind", [LOGISTIC, MLP])
    def test_forward_oracle(self, kind):
        m, rng = random_model(kind, 5, 2)
        for x in rng.standard_normal((20, 5)):
            assert abs(predict_score(m, x) - forward_oracle(m, x)) < 1e-12

    def test_dimension_mismatch(self):
        m, _ = random_model(LOGISTIC, 4, 1)
        with pytest.raises(ValueError, match="dimension mismatch"):
            predict_score(m, np.zeros(3))

    @settings(max_examples=300)
    @given(st.integers(0, 10_000), st.sampled_from([LOGISTIC, MLP]), st.floats(-20, 20))
    def test_open_unit_interval(self, seed, kind, scale):
        m, rng = random_model(kind, 3, seed)
        x = rng.standard_normal(3) * scale
        p = predict_score(m, x)
        z = logits(kind, m.params, x[None, :])[0]
        if abs(z) <= 36:  # beyond this sigmoid rounds to 0 or 1 in float64
            assert 0 < p < 1
        else:
            assert 0 <= p <= 1


class TestGradientCheck:
    @pytest.mark.parametrize("kind,bound", [(LOGISTIC, 1e-6), (MLP, 1e-4)])
    def test_twenty_seeds(self, kind, bound):
        worst = 0.0
        for seed in range(20):
            m, rng = random_model(kind, 8, seed)
            X = rng.standard_normal((32, 8))
            y = rng.integers(0, 2, 32).astype(float)
            worst = max(worst, gradient_check(m, (X, y), eps=1e-5))
        assert worst < bound

    def test_zero_input_gradients(self):
        m, _ = random_model(MLP, 4, 0)
        _, g = loss_and_grad(MLP, m.params, np.zeros((8, 4)), np.arange(8) % 2, l2=0.0)
        assert np.all(g["W1"] == 0.0)
        m, _ = random_model(LOGISTIC, 4, 0)
        _, g = loss_and_grad(LOGISTIC, m.params, np.zeros((8, 4)), np.arange(8) % 2, l2=0.0)
        assert np.all(g["w"] == 0.0)

    def test_eps_range(self):
        m, _ = random_model(LOGISTIC, 2, 0)
        with pytest.raises(ValueError):
            gradient_check(m, (np.ones((2, 2)), np.array([0, 1])), eps=1e-2)


class TestCrossValidation:
    def test_fifty_subjects_five_folds(self):
        groups = np.repeat([f"subj{i:02d}" for i in range(50)], 7)
        folds = subject_folds(groups, 5)
        for f in folds:
            assert len(set(groups[f])) == 10
        allrows = np.sort(np.concatenate(folds))
        np.testing.assert_array_equal(allrows, np.arange(len(groups)))

    @settings(max_examples=200)
    @given(st.lists(st.integers(0, 30), min_size=5, max_size=200), st.integers(2, 5), st.integers(0, 100))
    def test_partition_grouped(self, g, k, seed):
        groups = np.array([f"s{v}" for v in g])
        if len(set(g)) < k:
            with pytest.raises(ValueError):
                subject_folds(groups, k, seed)
            return
        folds = subject_folds(groups, k, seed)
        np.testing.assert_array_equal(np.sort(np.concatenate(folds)), np.arange(len(groups)))
        seen = [set(groups[f]) for f in folds]
        for a in range(k):
            for b in range(a + 1, k):
                assert not seen[a] & seen[b]

    def test_too_many_folds(self):
        with pytest.raises(ValueError, match="fewer subjects"):
            cross_validate(blobs(), 11)

    def test_report_shape(self):
        r = cross_validate(blobs(), 5, kind=LOGISTIC)
        assert len(r["folds"]) == 5
        assert sum(f["n"] for f in r["folds"]) == 200
        assert 0.9 <= r["mean_accuracy"] <= 1.0


class TestRandomSearch:
    SPACE = {"learning_rate": (0.01, 0.2), "l2": (1e-6, 1e-2), "hidden_units": (4, 16)}

    def test_budget_one(self):
        best, ledger = random_search(self.SPACE, 1, blobs(), seed=3, kind=LOGISTIC)
        assert len(ledger) == 1
        assert best == TrainConfig(**ledger[0]["config"])

    def test_deterministic_ledger(self):
        a = random_search(self.SPACE, 3, blobs(), seed=1, kind=LOGISTIC)[1]
        b = random_search(self.SPACE, 3, blobs(), seed=1, kind=LOGISTIC)[1]
        assert a == b

    def test_log_uniform_ranges(self):
        _, ledger = random_search(self.SPACE, 5, blobs(), seed=0, kind=LOGISTIC)
        for row in ledger:
            c = row["config"]
            assert 0.01 <= c["learning_rate"] <= 0.2
            assert 4 <= c["hidden_units"] <= 16

    def test_empty_space(self):
        with pytest.raises(ValueError, match="empty"):
            random_search({}, 1, blobs())

    def test_beats_default_on_benchmark(self, small_benchmark):
        default = cross_validate(small_benchmark, 5, TrainConfig())["mean_f1"]
        space = {"learning_rate": (0.005, 0.2), "l2": (1e-6, 1e-2), "hidden_units": (4, 32)}
        best, ledger = random_search(space, 20, small_benchmark, seed=0)
        best_f1 = max(r["mean_f1"] for r in ledger)
        assert best == TrainConfig(**next(r["config"] for r in ledger if r["mean_f1"] == best_f1))
        assert best_f1 >= default


class TestSmoothing:
    def test_alpha_one_identity(self):
        x = [0.1, 0.9, 0.3, 0.7]
        np.testing.assert_array_equal(ema(x, 1.0), x)

    def test_constant_series_single_alarm(self):
        (ev,) = smooth_and_alarm([0.9] * 10, 0.3, 0.5, 3)
        assert ev.index == 2
        assert ev.score > 0.5

    def test_below_threshold(self):
        assert smooth_and_alarm([0.2] * 10) == []

    def test_rearms(self):
        events = smooth_and_alarm([0.9] * 4 + [0.1] * 4 + [0.9] * 4, 1.0, 0.5, 3)
        assert [e.index for e in events] == [2, 10]

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            smooth_and_alarm([])

    def test_tracker_matches_batch(self):
        x = np.random.default_rng(0).random(50)
        t = AlarmTracker(0.3)
        for s in x:
            t.update(s)
        assert t.ema == pytest.approx(ema(x, 0.3)[-1], abs=1e-15)

    @settings(max_examples=1000)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.floats(0.01, 1))
    def test_ema_bounds(self, x, alpha):
        e = ema(x, alpha)
        assert np.all(e >= min(x) - 1e-12) and np.all(e <= max(x) + 1e-12)
