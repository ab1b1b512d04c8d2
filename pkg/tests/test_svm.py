import numpy as np
import pytest

from partfusion import (
    LinearModel,
    TrainConfig,
    hinge_objective,
    hinge_subgradient,
    load_model,
    predict_classes,
    save_model,
    score,
    softmax,
    train_binary,
    train_multiclass,
)


def _separable_two_class(rng, n=40, d=5, gap=2.0):
    X = np.vstack([rng.normal(-gap, 0.3, (n, d)), rng.normal(gap, 0.3, (n, d))])
    y = np.array([0] * n + [1] * n)
    return X, y


class TestTrainMulticlass:
    def test_separable_reaches_full_train_accuracy(self):
        rng = np.random.default_rng(0)
        X, y = _separable_two_class(rng)
        model = train_multiclass(X, y, TrainConfig(C=10.0, epochs=30, seed=3))
        assert np.mean(predict_classes(model, X) == y) == 1.0

    def test_class_index_is_sorted_distinct_labels(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(30, 4))
        y = np.array([7, 3, 12] * 10)
        model = train_multiclass(X, y, TrainConfig(epochs=2, seed=0))
        assert model.class_index.tolist() == [3, 7, 12]

    def test_row_permutation_gives_identical_model(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(60, 6))
        y = rng.integers(0, 4, 60)
        row_ids = np.arange(100, 160)
        cfg = TrainConfig(C=5.0, epochs=8, seed=9)
        m1 = train_multiclass(X, y, cfg, row_ids=row_ids)
        perm = rng.permutation(60)
        m2 = train_multiclass(X[perm], y[perm], cfg, row_ids=row_ids[perm])
        np.testing.assert_array_equal(m1.W, m2.W)
        np.testing.assert_array_equal(m1.b, m2.b)

    def test_gaussian_blobs_beat_95_percent_heldout(self):
        rng = np.random.default_rng(4)
        k, d, n = 5, 8, 40
        protos = rng.normal(0, 1, (k, d)) * 3.0
        Xtr = np.vstack([protos[c] + rng.normal(0, 0.25, (n, d)) for c in range(k)])
        ytr = np.repeat(np.arange(k), n)
        Xte = np.vstack([protos[c] + rng.normal(0, 0.25, (n, d)) for c in range(k)])
        yte = np.repeat(np.arange(k), n)
        model = train_multiclass(Xtr, ytr, TrainConfig(C=10.0, epochs=30, seed=1))
        acc = np.mean(predict_classes(model, Xte) == yte)
        assert acc >= 0.95
        # sanity against a nearest-centroid oracle on the same data
        cents = np.vstack([Xtr[ytr == c].mean(axis=0) for c in range(k)])
        d2 = ((Xte[:, None, :] - cents[None]) ** 2).sum(axis=2)
        oracle = np.mean(np.argmin(d2, axis=1) == yte)
        assert acc >= oracle - 0.05

    def test_single_class_rejected(self):
        X = np.ones((5, 2))
        with pytest.raises(ValueError, match="degenerate"):
            train_multiclass(X, np.zeros(5, dtype=int), TrainConfig())

    def test_objective_history_non_increasing(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(80, 5))
        y = rng.integers(0, 3, 80)
        model = train_multiclass(X, y, TrainConfig(C=2.0, epochs=20, seed=2))
        H = np.asarray(model.objective_history)
        rel = (H[1:] - H[:-1]) / np.maximum(np.abs(H[:-1]), 1e-12)
        assert rel.max() <= 1e-6

    def test_argmax_tie_break_lowest_class(self):
        W = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        b = np.zeros(3)
        model = LinearModel(W, b, np.array([4, 9, 11]), [])
        # rows 0 and 1 are duplicates: the tie goes to class_index 4
        assert predict_classes(model, np.array([[1.0, 0.0]]))[0] == 4


class TestScoreSoftmax:
    def test_zero_model_scores(self):
        model = LinearModel(np.zeros((3, 2)), np.zeros(3), np.arange(3), [])
        np.testing.assert_array_equal(score(model, np.array([5.0, -1.0])), np.zeros(3))

    def test_identity_weights(self):
        model = LinearModel(np.eye(2), np.zeros(2), np.arange(2), [])
        np.testing.assert_array_equal(score(model, np.array([1.0, 0.0])), [1.0, 0.0])

    def test_score_matches_direct_dot(self):
        rng = np.random.default_rng(8)
        W = rng.normal(size=(4, 6))
        b = rng.normal(size=4)
        x = rng.normal(size=6)
        model = LinearModel(W, b, np.arange(4), [])
        np.testing.assert_allclose(score(model, x), W @ x + b, rtol=1e-12)

    def test_dimension_mismatch(self):
        model = LinearModel(np.eye(2), np.zeros(2), np.arange(2), [])
        with pytest.raises(ValueError):
            score(model, np.zeros(3))

    def test_softmax_symmetry(self):
        np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5], atol=1e-12)

    def test_softmax_shift_invariance(self):
        s = np.array([0.3, -1.2, 4.0])
        np.testing.assert_allclose(softmax(s), softmax(s + 123.0), atol=1e-12)

    def test_softmax_hand_value(self):
        out = softmax(np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(out, [0.0900, 0.2447, 0.6652], atol=1e-4)

    def test_softmax_is_distribution_preserving_argmax(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            s = rng.normal(0, 5, rng.integers(1, 9))
            p = softmax(s)
            assert abs(p.sum() - 1.0) < 1e-9
            assert (p >= 0).all()
            assert np.argmax(p) == np.argmax(s)

    def test_softmax_empty_rejected(self):
        with pytest.raises(ValueError):
            softmax(np.array([]))


class TestHingePieces:
    def test_subgradient_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        d, k, n = 6, 4, 50
        X = rng.normal(size=(n, d))
        y = rng.integers(0, k, n)
        W = rng.normal(0, 0.5, (k, d))
        b = rng.normal(0, 0.1, k)
        lam = 0.07
        gW, gb = hinge_subgradient(W, b, X, y, lam)
        eps = 1e-6
        checked = 0
        for _ in range(300):
            c = int(rng.integers(0, k))
            j = int(rng.integers(0, d))
            s = np.where(y == c, 1.0, -1.0)
            margins = s * (X @ W[c] + b[c])
            if np.any(np.abs(1.0 - margins) < 1e-4):
                continue
            for plus, minus, grad in [
                (_bump(W, c, j, eps), _bump(W, c, j, -eps), gW[c, j]),
            ]:
                fp = hinge_objective(plus, b, X, y, lam)[c]
                fm = hinge_objective(minus, b, X, y, lam)[c]
                num = (fp - fm) / (2 * eps)
                assert abs(num - grad) / max(abs(num), 1e-9) < 1e-3
            checked += 1
            if checked == 10:
                break
        assert checked == 10

    def test_objective_zero_at_origin_is_one(self):
        # all margins violated at W=0: hinge contributes exactly 1 per row
        X = np.ones((10, 3))
        y = np.zeros(10, dtype=int)
        obj = hinge_objective(np.zeros((2, 3)), np.zeros(2), X, y, 0.5)
        np.testing.assert_allclose(obj, [1.0, 1.0])


class TestTrainBinary:
    def test_separation_direction(self):
        rng = np.random.default_rng(13)
        X = np.concatenate([rng.uniform(1, 2, 30), rng.uniform(-2, -1, 30)])[:, None]
        y = np.array([1] * 30 + [-1] * 30)
        model = train_binary(X, y, TrainConfig(C=10.0, epochs=20, seed=0))
        assert model.W[0, 0] > 0

    def test_duplicated_dataset_same_direction(self):
        rng = np.random.default_rng(14)
        X = rng.normal(size=(40, 3))
        y = np.where(X @ np.array([1.0, -2.0, 0.5]) > 0, 1, -1)
        w1 = train_binary(X, y, TrainConfig(C=5.0, epochs=20, seed=1)).W[0]
        w2 = train_binary(
            np.vstack([X, X]), np.concatenate([y, y]), TrainConfig(C=5.0, epochs=20, seed=1)
        ).W[0]
        cos = w1 @ w2 / (np.linalg.norm(w1) * np.linalg.norm(w2))
        assert cos > 0.97

    def test_planted_rule_with_label_noise(self):
        rng = np.random.default_rng(15)
        d, n = 6, 400
        true_w = rng.normal(size=d)
        Xtr = rng.normal(size=(n, d))
        ytr = np.where(Xtr @ true_w > 0, 1, -1)
        flip = rng.random(n) < 0.05
        ytr[flip] *= -1
        Xte = rng.normal(size=(n, d))
        yte = np.where(Xte @ true_w > 0, 1, -1)
        model = train_binary(Xtr, ytr, TrainConfig(C=1.0, epochs=30, seed=2))
        acc = np.mean(np.where(Xte @ model.W[0] + model.b[0] > 0, 1, -1) == yte)
        assert acc >= 0.90

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            train_binary(np.ones((4, 2)), np.ones(4, dtype=int), TrainConfig())

    def test_labels_must_be_plus_minus_one(self):
        with pytest.raises(ValueError):
            train_binary(np.ones((4, 2)), np.array([0, 1, 0, 1]), TrainConfig())


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(C=0.0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(class_weighting="fancy")

    def test_weighting_modes_differ_on_imbalanced_data(self):
        rng = np.random.default_rng(16)
        X = np.vstack([rng.normal(-1, 0.8, (90, 3)), rng.normal(1, 0.8, (10, 3))])
        y = np.array([0] * 90 + [1] * 10)
        mu = train_multiclass(X, y, TrainConfig(C=1.0, epochs=10, seed=0))
        mi = train_multiclass(
            X, y, TrainConfig(C=1.0, epochs=10, seed=0, class_weighting="inverse-frequency")
        )
        assert not np.array_equal(mu.W, mi.W)


class TestModelFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(17)
        model = LinearModel(
            rng.normal(size=(3, 5)), rng.normal(size=3), np.array([2, 5, 9]), []
        )
        path = tmp_path / "m.plm"
        save_model(path, model)
        back = load_model(path)
        np.testing.assert_array_equal(back.W, model.W)
        np.testing.assert_array_equal(back.b, model.b)
        np.testing.assert_array_equal(back.class_index, model.class_index)

    def test_write_is_deterministic(self, tmp_path):
        model = LinearModel(np.ones((2, 2)), np.zeros(2), np.arange(2), [])
        p1, p2 = tmp_path / "a.plm", tmp_path / "b.plm"
        save_model(p1, model)
        save_model(p2, model)
        assert p1.read_bytes() == p2.read_bytes()


def _bump(W, c, j, eps):
    out = W.copy()
    out[c, j] += eps
    return out
