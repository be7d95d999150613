"""SMO solver correctness, calibration, one-vs-one training, grid search."""

import numpy as np
import pytest

from covdesc.errors import DataError, MismatchError
from covdesc.kernel import LogDescriptor, gram_matrix
from covdesc.svm import (
    COST_GRID,
    GAMMA_GRID,
    _smo_core,
    _smo_core_compiled,
    fit_platt,
    grid_search,
    load_model,
    platt_probability,
    predict_scores,
    predict_scores_batch,
    save_model,
    train_binary,
    train_multiclass,
)


def class_log_descriptors(rng, counts, dim=4, offset=3.0, noise=0.1, region="global"):
    """Log descriptors clustered per class: class c sits near c*offset*I."""
    descriptors, labels = [], []
    i = 0
    for c, n in counts.items():
        for _ in range(n):
            raw = rng.standard_normal((dim, dim)) * noise
            logc = c * offset * np.eye(dim) + (raw + raw.T) / 2
            descriptors.append(LogDescriptor(f"s{i}", region, logc))
            labels.append(c)
            i += 1
    return descriptors, np.array(labels)


class TestSmoSolver:
    def test_two_point_analytic_dual(self):
        model = train_binary(np.eye(2), [1, -1], 1.0)
        assert np.array_equal(model.alpha, np.array([1.0, -1.0]))
        assert model.bias == 0.0

    def test_pure_and_compiled_cores_agree(self):
        rng = np.random.default_rng(0)
        for trial in range(5):
            n = 30
            pts = rng.standard_normal((n, 3))
            y = np.where(rng.random(n) > 0.5, 1.0, -1.0)
            y[0], y[1] = 1.0, -1.0
            d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
            K = np.exp(-0.5 * d2)
            np.fill_diagonal(K, 1.0)
            a1, g1, i1 = _smo_core(K, y, 100.0, 1e-3, 100000)
            a2, g2, i2 = _smo_core_compiled(K, y, 100.0, 1e-3, 100000)
            assert i1 == i2
            assert np.array_equal(a1, a2)
            assert np.array_equal(g1, g2)

    def test_separable_clusters_memorized(self):
        rng = np.random.default_rng(1)
        descriptors, labels = class_log_descriptors(rng, {0: 10, 1: 10})
        gram = gram_matrix(descriptors, gamma=0.05)
        y = np.where(labels == 0, 1.0, -1.0)
        model = train_binary(gram, y, 10.0)
        decisions = model.decision_values(gram.values)
        assert (np.sign(decisions) == y).all()

    def test_contradictory_duplicates_hit_box(self):
        # identical points with opposite labels: dual rises until the box
        K = np.ones((2, 2))
        model = train_binary(K, [1, -1], 5.0)
        assert np.array_equal(np.abs(model.alpha), np.array([5.0, 5.0]))

    def test_dual_feasibility_random_problems(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            n_pos = int(rng.integers(3, 12))
            n_neg = int(rng.integers(3, 12))
            descriptors, labels = class_log_descriptors(
                rng, {0: n_pos, 1: n_neg}, dim=3, noise=0.3
            )
            cost = float(rng.choice([1.0, 10.0, 1e3]))
            gram = gram_matrix(descriptors, gamma=0.1)
            y = np.where(labels == 0, 1.0, -1.0)
            model = train_binary(gram, y, cost)
            assert (np.abs(model.alpha) <= cost * (1 + 1e-12)).all()
            assert abs(model.alpha.sum()) <= 1e-6 * cost

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            train_binary(np.eye(3), [1, 1, 1], 1.0)


class TestPlatt:
    def test_probabilities_order_with_decisions(self):
        rng = np.random.default_rng(3)
        decisions = np.r_[rng.normal(2.0, 0.5, 30), rng.normal(-2.0, 0.5, 30)]
        labels = np.r_[np.ones(30), -np.ones(30)]
        a, b = fit_platt(decisions, labels)
        assert a < 0  # higher decision -> higher probability
        probs = platt_probability(decisions, a, b)
        assert probs[:30].mean() > 0.8
        assert probs[30:].mean() < 0.2

    def test_probabilities_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(4)
        decisions = rng.normal(0, 5, 100)
        labels = np.where(rng.random(100) > 0.4, 1.0, -1.0)
        a, b = fit_platt(decisions, labels)
        probs = platt_probability(np.r_[decisions, -1e3, 1e3], a, b)
        assert (probs > 0).all() and (probs < 1).all()


class TestMulticlass:
    def test_three_classes_three_binaries(self):
        rng = np.random.default_rng(5)
        descriptors, labels = class_log_descriptors(rng, {0: 4, 1: 4, 2: 4})
        model = train_multiclass(gram_matrix(descriptors, gamma=0.05), labels, 10.0)
        assert len(model.binaries) == 3
        assert model.classes == (0, 1, 2)

    def test_six_classes_fifteen_binaries(self):
        rng = np.random.default_rng(6)
        descriptors, labels = class_log_descriptors(rng, {c: 3 for c in range(6)})
        model = train_multiclass(gram_matrix(descriptors, gamma=0.05), labels, 10.0)
        assert len(model.binaries) == 15

    def test_single_class_rejected(self):
        rng = np.random.default_rng(7)
        descriptors, labels = class_log_descriptors(rng, {1: 5})
        with pytest.raises(ValueError):
            train_multiclass(gram_matrix(descriptors, gamma=0.1), labels, 1.0)

    def test_embedded_alphas_zero_outside_pair(self):
        rng = np.random.default_rng(8)
        descriptors, labels = class_log_descriptors(rng, {0: 3, 1: 3, 2: 3})
        model = train_multiclass(gram_matrix(descriptors, gamma=0.05), labels, 10.0)
        for bm in model.binaries:
            outside = ~np.isin(labels, bm.class_pair)
            assert np.array_equal(bm.alpha[outside], np.zeros(outside.sum()))


class TestPredictScores:
    def test_memorized_point(self):
        rng = np.random.default_rng(9)
        descriptors, labels = class_log_descriptors(rng, {0: 5, 1: 5, 2: 5})
        gram = gram_matrix(descriptors, gamma=0.05)
        model = train_multiclass(gram, labels, 100.0)
        for i in (0, 7, 12):
            scores = predict_scores(model, gram.values[i])
            assert model.classes[int(scores.argmax())] == labels[i]

    def test_scores_are_a_distribution(self):
        rng = np.random.default_rng(10)
        descriptors, labels = class_log_descriptors(rng, {0: 4, 1: 4, 2: 4})
        gram = gram_matrix(descriptors, gamma=0.05)
        model = train_multiclass(gram, labels, 10.0)
        scores = predict_scores_batch(model, rng.uniform(0.01, 1.0, (20, 12)))
        assert np.allclose(scores.sum(axis=1), 1.0, atol=1e-9)
        assert (scores > 0).all()

    def test_two_class_scores_are_p_and_one_minus_p(self):
        rng = np.random.default_rng(11)
        descriptors, labels = class_log_descriptors(rng, {0: 6, 1: 6})
        gram = gram_matrix(descriptors, gamma=0.05)
        model = train_multiclass(gram, labels, 10.0)
        row = gram.values[2]
        binary = model.binaries[0]
        p = float(binary.probabilities(row[None])[0])
        scores = predict_scores(model, row)
        assert abs(scores[0] - p) <= 1e-12
        assert abs(scores[1] - (1 - p)) <= 1e-12

    def test_symmetric_three_class_equidistant(self):
        # equidistant training points and a uniform kernel row: nothing
        # distinguishes the classes, so the scores must tie
        labels = np.array([0, 0, 1, 1, 2, 2])
        ids = tuple(f"s{i}" for i in range(6))
        from covdesc.kernel import GramMatrix

        values = np.full((6, 6), 0.1)
        np.fill_diagonal(values, 1.0)
        gram = GramMatrix(ids, ids, values, 0.1, "global")
        model = train_multiclass(gram, labels, 10.0)
        scores = predict_scores(model, np.full(6, 0.2))
        assert np.max(np.abs(scores - 1.0 / 3.0)) <= 1e-6

    def test_misaligned_row_rejected(self):
        rng = np.random.default_rng(12)
        descriptors, labels = class_log_descriptors(rng, {0: 3, 1: 3})
        model = train_multiclass(gram_matrix(descriptors, gamma=0.05), labels, 1.0)
        with pytest.raises(MismatchError):
            predict_scores(model, np.ones(5))

    def test_order_independence_of_training(self):
        rng = np.random.default_rng(13)
        descriptors, labels = class_log_descriptors(rng, {0: 6, 1: 6, 2: 6})
        gram = gram_matrix(descriptors, gamma=0.05)
        model = train_multiclass(gram, labels, 50.0)
        order = rng.permutation(len(descriptors))
        permuted_gram = gram_matrix([descriptors[i] for i in order], gamma=0.05)
        permuted_model = train_multiclass(permuted_gram, labels[order], 50.0)
        test_block = rng.uniform(0.01, 1.0, (10, len(descriptors)))
        base = predict_scores_batch(model, test_block)
        permuted = predict_scores_batch(permuted_model, test_block[:, order])
        assert np.max(np.abs(base - permuted)) <= 1e-6

    def test_argmax_invariant_under_relabeling(self):
        rng = np.random.default_rng(14)
        descriptors, labels = class_log_descriptors(rng, {0: 5, 1: 5, 2: 5})
        gram = gram_matrix(descriptors, gamma=0.05)
        mapping = {0: 2, 1: 0, 2: 1}
        relabeled = np.array([mapping[c] for c in labels])
        base = train_multiclass(gram, labels, 10.0)
        renamed = train_multiclass(gram, relabeled, 10.0)
        block = rng.uniform(0.01, 1.0, (25, len(descriptors)))
        base_classes = np.asarray(base.classes)[
            predict_scores_batch(base, block).argmax(axis=1)
        ]
        renamed_classes = np.asarray(renamed.classes)[
            predict_scores_batch(renamed, block).argmax(axis=1)
        ]
        assert np.array_equal([mapping[c] for c in base_classes], renamed_classes)


class TestGridSearch:
    def test_default_grids_are_the_stated_intervals(self):
        assert len(GAMMA_GRID) == 8
        assert GAMMA_GRID[0] == 1e-3 and GAMMA_GRID[-1] == 1e-10
        assert len(COST_GRID) == 6
        assert COST_GRID[0] == 1e3 and COST_GRID[-1] == 1e8

    def test_full_grid_has_48_cells(self):
        rng = np.random.default_rng(15)
        descriptors, labels = class_log_descriptors(rng, {0: 8, 1: 8}, offset=30.0)
        subjects = [f"subj{i % 4}" for i in range(16)]
        result = grid_search(descriptors, labels, subjects, folds=2, seed=0)
        assert len(result.table) == 48

    def test_single_cell_grid(self):
        rng = np.random.default_rng(16)
        descriptors, labels = class_log_descriptors(rng, {0: 6, 1: 6}, offset=30.0)
        subjects = [f"subj{i % 3}" for i in range(12)]
        result = grid_search(descriptors, labels, subjects,
                             gamma_grid=(1e-3,), cost_grid=(1e3,), folds=3, seed=1)
        assert result.best_gamma == 1e-3 and result.best_cost == 1e3
        assert len(result.table) == 1

    def test_separable_data_reaches_perfect_cv(self):
        rng = np.random.default_rng(17)
        descriptors, labels = class_log_descriptors(
            rng, {0: 8, 1: 8, 2: 8}, offset=30.0, noise=0.05
        )
        subjects = [f"subj{i % 8}" for i in range(24)]
        result = grid_search(descriptors, labels, subjects,
                             gamma_grid=(1e-3, 1e-4), cost_grid=(1e3, 1e5),
                             folds=4, seed=2)
        assert result.best_accuracy() == 1.0

    def test_too_few_subjects(self):
        rng = np.random.default_rng(18)
        descriptors, labels = class_log_descriptors(rng, {0: 4, 1: 4})
        with pytest.raises(DataError):
            grid_search(descriptors, labels, ["one"] * 8, folds=2, seed=0)

    def test_tie_break_prefers_larger_gamma_then_smaller_cost(self):
        rng = np.random.default_rng(19)
        # trivially separable: every cell ties at accuracy 1.0
        descriptors, labels = class_log_descriptors(rng, {0: 6, 1: 6}, offset=50.0)
        subjects = [f"subj{i % 3}" for i in range(12)]
        result = grid_search(descriptors, labels, subjects,
                             gamma_grid=(1e-4, 1e-3), cost_grid=(1e5, 1e3),
                             folds=3, seed=3)
        assert result.best_gamma == 1e-3
        assert result.best_cost == 1e3


class TestModelSerialization:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(20)
        descriptors, labels = class_log_descriptors(rng, {0: 5, 1: 5, 2: 5})
        gram = gram_matrix(descriptors, gamma=0.05)
        model = train_multiclass(gram, labels, 10.0)
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.classes == model.classes
        assert loaded.gamma == model.gamma and loaded.cost == model.cost
        assert loaded.training_ids == model.training_ids
        for a, b in zip(loaded.binaries, model.binaries):
            assert np.array_equal(a.alpha, b.alpha)
            assert a.bias == b.bias
            assert a.platt == b.platt
            assert a.class_pair == b.class_pair

    def test_loaded_model_predicts_identically(self, tmp_path):
        rng = np.random.default_rng(21)
        descriptors, labels = class_log_descriptors(rng, {0: 4, 1: 4})
        gram = gram_matrix(descriptors, gamma=0.1)
        model = train_multiclass(gram, labels, 5.0)
        save_model(model, tmp_path / "model.json")
        loaded = load_model(tmp_path / "model.json")
        block = rng.uniform(0.01, 1.0, (6, 8))
        assert np.array_equal(
            predict_scores_batch(model, block), predict_scores_batch(loaded, block)
        )
