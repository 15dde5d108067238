"""Softmax head tests.

The analytic gradient is checked against central finite differences, and
small heads with hand-set parameters have closed-form outputs (ln 2 loss
at zero parameters, logit ln 3 giving probabilities 0.75 / 0.25).
"""

import math

import numpy as np
import pytest

from cxrtriage.errors import DivergenceError, TrainingError
from cxrtriage.extractor import FeatureMatrix
from cxrtriage.head import (
    CLASS_ORDER,
    SoftmaxHead,
    TrainConfig,
    forward,
    init_head,
    loss_and_grad,
    train,
)
from cxrtriage.manifest import Label

POS = Label.POSITIVE
NEG = Label.NEGATIVE


def fm(values, ids=None):
    arr = np.asarray(values, dtype=np.float64)
    ids = ids if ids is not None else [f"s{i}" for i in range(arr.shape[0])]
    return FeatureMatrix(values=arr, sample_ids=ids)


def zero_head(dim):
    return SoftmaxHead(weights=np.zeros((2, dim)), bias=np.zeros(2), init_seed=0)


class TestClosedForms:
    def test_zero_head_gives_half_half(self):
        preds = forward(zero_head(3), fm([[1.0, -2.0, 0.5]]))
        assert preds[0].probs == (0.5, 0.5)
        assert preds[0].score == 0.5

    def test_tie_resolves_positive(self):
        preds = forward(zero_head(2), fm([[3.0, -1.0]]))
        assert preds[0].label == POS

    def test_zero_head_loss_is_ln2(self):
        x = fm(np.random.default_rng(0).normal(size=(6, 4)))
        labels = [POS, NEG, POS, NEG, NEG, POS]
        loss, _, _ = loss_and_grad(zero_head(4), x, labels)
        assert abs(loss - math.log(2.0)) < 1e-12

    def test_bias_ln3_gives_three_quarters(self):
        head = SoftmaxHead(
            weights=np.zeros((2, 2)), bias=np.array([math.log(3.0), 0.0]), init_seed=0
        )
        preds = forward(head, fm([[0.0, 0.0]]))
        assert abs(preds[0].probs[0] - 0.75) < 1e-12
        assert abs(preds[0].probs[1] - 0.25) < 1e-12
        assert preds[0].label == POS
        assert abs(preds[0].score - 0.75) < 1e-12

    def test_zero_head_gradient_closed_form(self):
        # at zero parameters probs are (0.5, 0.5), so delta = p - onehot is
        # -+0.5 on the true row and +-0.5 on the other
        x = np.array([[2.0, -1.0, 0.5]])
        _, d_w, d_b = loss_and_grad(zero_head(3), fm(x), [POS])
        np.testing.assert_allclose(d_b, [-0.5, 0.5], atol=1e-15)
        np.testing.assert_allclose(d_w, np.vstack([-0.5 * x[0], 0.5 * x[0]]), atol=1e-15)

    def test_probs_sum_to_one_and_score_is_positive_prob(self):
        rng = np.random.default_rng(1)
        head = init_head(5, seed=3)
        preds = forward(head, fm(rng.normal(size=(20, 5))))
        for p in preds:
            assert abs(p.probs[0] + p.probs[1] - 1.0) < 1e-12
            assert p.score == p.probs[0]
            expected = POS if p.probs[0] >= p.probs[1] else NEG
            assert p.label == expected


class TestGradientCheck:
    def numeric(self, w, b, x, labels, kind, i, j=None, eps=1e-6):
        def loss_at(wp, bp):
            head = SoftmaxHead(weights=wp, bias=bp, init_seed=0)
            return loss_and_grad(head, x, labels)[0]

        wp, wm = w.copy(), w.copy()
        bp, bm = b.copy(), b.copy()
        if kind == "w":
            wp[i, j] += eps
            wm[i, j] -= eps
        else:
            bp[i] += eps
            bm[i] -= eps
        return (loss_at(wp, bp) - loss_at(wm, bm)) / (2.0 * eps)

    def test_analytic_matches_central_difference(self):
        # 10 random instances x 10 coordinates = 100 (parameter, example) pairs
        rng = np.random.default_rng(42)
        dim, n = 5, 7
        worst = 0.0
        for trial in range(10):
            w = rng.normal(size=(2, dim))
            b = rng.normal(size=2)
            x = fm(rng.normal(size=(n, dim)))
            labels = [POS if rng.uniform() < 0.5 else NEG for _ in range(n)]
            head = SoftmaxHead(weights=w, bias=b, init_seed=0)
            _, d_w, d_b = loss_and_grad(head, x, labels)
            coords = [("w", i, j) for i in range(2) for j in range(4)] + [
                ("b", 0, None),
                ("b", 1, None),
            ]
            for kind, i, j in coords:
                analytic = d_w[i, j] if kind == "w" else d_b[i]
                numeric = self.numeric(w, b, x, labels, kind, i, j)
                rel = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
                worst = max(worst, rel)
                assert rel <= 1e-4
                assert abs(analytic - numeric) <= 1e-6
        assert worst <= 1e-6  # central differences should be far tighter

    def test_gradient_is_batch_mean(self):
        # the gradient over a batch equals the mean of per-sample gradients
        rng = np.random.default_rng(3)
        head = SoftmaxHead(weights=rng.normal(size=(2, 4)), bias=rng.normal(size=2),
                           init_seed=0)
        xs = rng.normal(size=(6, 4))
        labels = [POS, NEG, NEG, POS, NEG, POS]
        _, d_w, d_b = loss_and_grad(head, fm(xs), labels)
        per_w = np.zeros_like(d_w)
        per_b = np.zeros_like(d_b)
        for i in range(6):
            _, gw, gb = loss_and_grad(head, fm(xs[i : i + 1]), [labels[i]])
            per_w += gw / 6.0
            per_b += gb / 6.0
        np.testing.assert_allclose(d_w, per_w, atol=1e-14)
        np.testing.assert_allclose(d_b, per_b, atol=1e-14)

    def test_loss_is_order_invariant(self):
        rng = np.random.default_rng(4)
        head = init_head(4, seed=1)
        xs = rng.normal(size=(8, 4))
        labels = [POS, NEG] * 4
        loss_a, _, _ = loss_and_grad(head, fm(xs), labels)
        perm = rng.permutation(8)
        loss_b, _, _ = loss_and_grad(head, fm(xs[perm]), [labels[i] for i in perm])
        assert abs(loss_a - loss_b) < 1e-12

    def test_stable_for_large_logits(self):
        head = SoftmaxHead(weights=np.array([[500.0], [-500.0]]), bias=np.zeros(2),
                           init_seed=0)
        loss, d_w, d_b = loss_and_grad(head, fm([[2.0]]), [NEG])
        assert np.isfinite(loss)
        assert np.isfinite(d_w).all() and np.isfinite(d_b).all()
        preds = forward(head, fm([[2.0]]))
        assert 0.0 <= preds[0].score <= 1.0


class TestInit:
    def test_glorot_bound_and_zero_bias(self):
        head = init_head(100, seed=5)
        bound = math.sqrt(6.0 / 102)
        assert np.abs(head.weights).max() <= bound
        assert head.weights.shape == (2, 100)
        np.testing.assert_array_equal(head.bias, np.zeros(2))
        assert head.init_seed == 5

    def test_seed_reproducible_and_distinct(self):
        a = init_head(16, seed=9)
        b = init_head(16, seed=9)
        c = init_head(16, seed=10)
        np.testing.assert_array_equal(a.weights, b.weights)
        assert not np.array_equal(a.weights, c.weights)

    def test_bad_dim_rejected(self):
        with pytest.raises(TrainingError):
            init_head(0, seed=0)


def separable_data(n_per_class=12, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    pos = rng.normal(loc=1.0, scale=0.2, size=(n_per_class, dim))
    neg = rng.normal(loc=-1.0, scale=0.2, size=(n_per_class, dim))
    xs = np.vstack([pos, neg])
    labels = [POS] * n_per_class + [NEG] * n_per_class
    return fm(xs), labels


class TestTraining:
    def test_separable_data_reaches_full_accuracy(self):
        x, labels = separable_data()
        cfg = TrainConfig(epochs=30, batch_size=4, learning_rate=0.5, seed=1)
        head, trace = train(x, labels, cfg, init_seed=2)
        assert len(trace) == 30
        assert trace[-1] < trace[0]
        preds = forward(head, x)
        assert all(p.label == t for p, t in zip(preds, labels))

    def test_training_is_deterministic(self):
        x, labels = separable_data()
        cfg = TrainConfig(epochs=5, batch_size=4, learning_rate=0.1, seed=3)
        h1, t1 = train(x, labels, cfg, init_seed=4)
        h2, t2 = train(x, labels, cfg, init_seed=4)
        np.testing.assert_array_equal(h1.weights, h2.weights)
        np.testing.assert_array_equal(h1.bias, h2.bias)
        assert t1 == t2

    def test_init_seed_changes_result(self):
        x, labels = separable_data()
        cfg = TrainConfig(epochs=2, batch_size=4, learning_rate=0.1, seed=3)
        h1, _ = train(x, labels, cfg, init_seed=4)
        h2, _ = train(x, labels, cfg, init_seed=5)
        assert not np.array_equal(h1.weights, h2.weights)

    def test_no_shuffle_visits_in_order(self):
        # with shuffle off and batch_size >= n, one full-batch step per epoch:
        # the parameter update equals lr times the full-batch gradient
        x, labels = separable_data(n_per_class=3)
        init = init_head(4, seed=7)
        _, d_w, d_b = loss_and_grad(init, x, labels)
        cfg = TrainConfig(epochs=1, batch_size=6, learning_rate=0.25, seed=0,
                          shuffle=False)
        head, _ = train(x, labels, cfg, init_seed=7)
        np.testing.assert_allclose(head.weights, init.weights - 0.25 * d_w, atol=1e-12)
        np.testing.assert_allclose(head.bias, init.bias - 0.25 * d_b, atol=1e-12)

    def test_divergence_raises(self):
        x = fm(np.full((4, 3), 1e200))
        labels = [POS, NEG, POS, NEG]
        cfg = TrainConfig(epochs=3, batch_size=2, learning_rate=1e200, seed=0)
        with np.errstate(over="ignore", invalid="ignore"), pytest.raises(DivergenceError):
            train(x, labels, cfg, init_seed=0)

    def test_single_class_warns(self):
        x, _ = separable_data(n_per_class=3)
        cfg = TrainConfig(epochs=1, batch_size=2, learning_rate=0.1, seed=0)
        with pytest.warns(UserWarning):
            train(x, [POS] * 6, cfg, init_seed=0)

    def test_label_count_mismatch_rejected(self):
        x, labels = separable_data(n_per_class=3)
        cfg = TrainConfig(epochs=1, batch_size=2, learning_rate=0.1, seed=0)
        with pytest.raises(TrainingError):
            train(x, labels[:-1], cfg, init_seed=0)

    def test_config_validation(self):
        with pytest.raises(TrainingError):
            TrainConfig(epochs=0)
        with pytest.raises(TrainingError):
            TrainConfig(batch_size=0)
        with pytest.raises(TrainingError):
            TrainConfig(learning_rate=0.0)

    def test_config_round_trip(self):
        cfg = TrainConfig(epochs=7, batch_size=3, learning_rate=0.01, seed=5,
                          shuffle=False)
        assert TrainConfig.from_dict(cfg.as_dict()) == cfg


class TestPersistence:
    def test_save_load_round_trip_bitwise(self, tmp_path):
        x, labels = separable_data()
        cfg = TrainConfig(epochs=3, batch_size=4, learning_rate=0.1, seed=1)
        head, trace = train(x, labels, cfg, init_seed=6)
        path = tmp_path / "head.json"
        head.save(path, train_config=cfg, final_loss=trace[-1])
        back = SoftmaxHead.load(path)
        np.testing.assert_array_equal(back.weights, head.weights)
        np.testing.assert_array_equal(back.bias, head.bias)
        assert back.init_seed == head.init_seed
        preds_a = forward(head, x)
        preds_b = forward(back, x)
        assert [p.score for p in preds_a] == [p.score for p in preds_b]

    def test_class_order_guard(self, tmp_path):
        head = zero_head(2)
        path = tmp_path / "head.json"
        head.save(path)
        text = path.read_text()
        order = [c.value for c in CLASS_ORDER]
        flipped = text.replace(
            f'"{order[0]}",\n    "{order[1]}"', f'"{order[1]}",\n    "{order[0]}"'
        )
        assert flipped != text
        path.write_text(flipped)
        with pytest.raises(TrainingError):
            SoftmaxHead.load(path)

    def test_parameter_validation(self):
        with pytest.raises(TrainingError):
            SoftmaxHead(weights=np.zeros((3, 2)), bias=np.zeros(2), init_seed=0)
        with pytest.raises(TrainingError):
            SoftmaxHead(weights=np.zeros((2, 2)), bias=np.zeros(3), init_seed=0)
        bad = np.zeros((2, 2))
        bad[0, 0] = np.nan
        with pytest.raises(TrainingError):
            SoftmaxHead(weights=bad, bias=np.zeros(2), init_seed=0)
