import math

import numpy as np
import pytest

from demandcast.features import FeatureMatrix
from demandcast.gbt import (
    BoostedModel,
    ForestParams,
    TrainParams,
    Tree,
    TreeNode,
    best_split,
    fit_tree,
    grad_hess,
    leaf_weight,
    loss_value,
    model_from_json,
    model_to_json,
    predict,
    train,
    train_forest,
)

from .oracles import (
    finite_diff_grad_hess,
    oracle_fit_tree,
    poisson_pointwise,
    squared_pointwise,
)


def matrix_of(x, y=None, columns=None):
    x = np.asarray(x, dtype=float)
    columns = columns or [f"f{j}" for j in range(x.shape[1])]
    keys = [(f"r{i}", i) for i in range(x.shape[0])]
    return FeatureMatrix(
        keys=keys,
        columns=columns,
        X=x,
        targets=None if y is None else np.asarray(y, dtype=float),
        life_at_forecast=np.zeros(x.shape[0], dtype=np.int64),
    )


class TestGradHess:
    def test_poisson_stationary_point(self):
        g, h = grad_hess("poisson", np.array([1.0]), np.array([0.0]))
        assert (g[0], h[0]) == (0.0, 1.0)

    def test_poisson_log2(self):
        g, h = grad_hess("poisson", np.array([1.0]), np.array([math.log(2.0)]))
        assert g[0] == pytest.approx(1.0)
        assert h[0] == pytest.approx(2.0)

    def test_squared(self):
        g, h = grad_hess("squared", np.array([5.0]), np.array([3.0]))
        assert (g[0], h[0]) == (-2.0, 1.0)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            grad_hess("squared", np.array([np.nan]), np.array([0.0]))

    def test_poisson_negative_target_rejected(self):
        with pytest.raises(ValueError):
            grad_hess("poisson", np.array([-1.0]), np.array([0.0]))

    @pytest.mark.parametrize("loss,pointwise", [
        ("poisson", poisson_pointwise),
        ("squared", squared_pointwise),
    ])
    def test_matches_finite_differences(self, loss, pointwise):
        ys = np.arange(10, dtype=float)
        raws = np.linspace(-2.0, 2.0, 10)
        for y in ys:
            for raw in raws:
                g, h = grad_hess(loss, np.array([y]), np.array([raw]))
                g_ref, h_ref = finite_diff_grad_hess(pointwise, y, raw)
                assert g[0] == pytest.approx(g_ref, rel=1e-6, abs=1e-9)
                assert h[0] == pytest.approx(h_ref, rel=1e-6, abs=1e-9)


class TestLeafWeight:
    def test_zero_gradient(self):
        assert leaf_weight(0.0, 3.0, 1.0) == 0.0

    def test_exact_fit_value(self):
        assert leaf_weight(-20.0, 2.0, 0.0) == 10.0

    def test_shrinks_with_lambda(self):
        weights = [abs(leaf_weight(-20.0, 2.0, lam)) for lam in (0.0, 1.0, 10.0, 1e6)]
        assert weights == sorted(weights, reverse=True)
        assert weights[-1] == pytest.approx(0.0, abs=1e-4)

    def test_nonpositive_denominator(self):
        with pytest.raises(ValueError):
            leaf_weight(1.0, -2.0, 1.0)


class TestBestSplit:
    def test_textbook_split(self):
        x = np.array([0.0, 0.0, 1.0, 1.0])
        y = np.array([0.0, 0.0, 10.0, 10.0])
        g, h = grad_hess("squared", y, np.zeros(4))
        cand = best_split(x, g, h, reg_lambda=0.0, min_split_loss=0.0)
        assert cand.threshold == 0.5
        assert cand.gain == 50.0
        left = leaf_weight(g[:2].sum(), h[:2].sum(), 0.0)
        right = leaf_weight(g[2:].sum(), h[2:].sum(), 0.0)
        assert (left, right) == (0.0, 10.0)

    def test_equal_targets_no_split(self):
        y = np.full(4, 7.0)
        g, h = grad_hess("squared", y, np.full(4, 7.0))
        assert best_split(np.array([0.0, 1.0, 2.0, 3.0]), g, h, 0.0, 0.0) is None

    def test_min_split_loss_blocks(self):
        x = np.array([0.0, 0.0, 1.0, 1.0])
        y = np.array([0.0, 0.0, 10.0, 10.0])
        g, h = grad_hess("squared", y, np.zeros(4))
        assert best_split(x, g, h, 0.0, min_split_loss=60.0) is None
        assert best_split(x, g, h, 0.0, min_split_loss=49.0).gain == pytest.approx(1.0)

    def test_missing_routed_where_it_helps(self):
        # the NaN row carries a strong positive gradient: grouping it with the
        # high-target side (right) must win
        x = np.array([0.0, 0.0, 1.0, 1.0, np.nan])
        y = np.array([0.0, 0.0, 10.0, 10.0, 10.0])
        g, h = grad_hess("squared", y, np.zeros(5))
        cand = best_split(x, g, h, 0.0, 0.0)
        assert cand is not None
        assert not cand.default_left

    def test_missing_defaults_left_on_tie(self):
        # no missing values at all: both routings identical, prefer left
        x = np.array([0.0, 1.0])
        g = np.array([1.0, -1.0])
        h = np.array([1.0, 1.0])
        cand = best_split(x, g, h, 0.0, 0.0)
        assert cand.default_left

    def test_all_equal_values_no_split(self):
        g = np.array([1.0, -1.0])
        h = np.array([1.0, 1.0])
        assert best_split(np.array([3.0, 3.0]), g, h, 0.0, 0.0) is None


class TestTieBreaking:
    def test_duplicate_features_pick_lowest_index(self):
        # integer-exact data: both columns produce bit-identical gains
        col = np.array([0.0, 0.0, 1.0, 1.0])
        x = np.stack([col, col], axis=1)
        y = np.array([0.0, 0.0, 8.0, 8.0])
        g, h = grad_hess("squared", y, np.zeros(4))
        tree = fit_tree(x, g, h, max_depth=1, reg_lambda=0.0, min_split_loss=0.0)
        assert tree.nodes[0].feature == 0

    def test_equal_gain_thresholds_pick_lowest(self):
        # symmetric integer targets: splitting at 0.5 and 2.5 give equal gain
        x = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([8.0, 0.0, 0.0, 8.0])
        g, h = grad_hess("squared", y, np.zeros(4))
        tree = fit_tree(x, g, h, max_depth=1, reg_lambda=0.0, min_split_loss=0.0)
        assert tree.nodes[0].threshold == 0.5


class TestTrain:
    def test_depth_zero_single_leaf_predicts_mean(self):
        matrix = matrix_of(np.arange(8).reshape(4, 2), y=[1.0, 2.0, 3.0, 6.0])
        params = TrainParams(loss="squared", learning_rate=1.0, max_depth=0, rounds=1)
        model = train(matrix, params)
        assert np.allclose(model.predict_array(matrix.X), 3.0)

    def test_poisson_constant_target_first_tree_noop(self):
        matrix = matrix_of(np.arange(12).reshape(6, 2), y=[4.0] * 6)
        params = TrainParams(loss="poisson", learning_rate=1.0, max_depth=3, rounds=1)
        model = train(matrix, params)
        assert model.base_score == pytest.approx(math.log(4.0), abs=1e-8)
        g, _ = grad_hess("poisson", matrix.targets, np.full(6, model.base_score))
        assert np.abs(g).sum() <= 1e-6 * 6
        assert np.abs(model.trees[0].apply(matrix.X)).max() <= 1e-6

    def test_training_loss_monotone(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(80, 4))
        lam = np.exp(0.5 + 0.8 * x[:, 0] - 0.5 * x[:, 2])
        y = rng.poisson(lam).astype(float)
        matrix = matrix_of(x, y=y)
        params = TrainParams(loss="poisson", learning_rate=0.3, max_depth=3, rounds=30, reg_lambda=1.0)
        model = train(matrix, params)
        diffs = np.diff(model.train_loss)
        assert (diffs <= 1e-9).all()

    def test_empty_matrix_rejected(self):
        matrix = matrix_of(np.empty((0, 2)), y=[])
        with pytest.raises(ValueError, match="empty"):
            train(matrix, TrainParams())

    def test_poisson_negative_targets_rejected(self):
        matrix = matrix_of([[0.0], [1.0]], y=[-1.0, 2.0])
        with pytest.raises(ValueError, match="non-negative"):
            train(matrix, TrainParams(loss="poisson"))


class TestEarlyStopping:
    def build(self, seed=1):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(120, 3))
        y = 2.0 + x[:, 0] + rng.normal(scale=2.0, size=120)
        return matrix_of(x[:80], y=y[:80]), matrix_of(x[80:], y=y[80:])

    def test_best_round_is_argmin_of_valid_loss(self):
        train_m, valid_m = self.build()
        params = TrainParams(
            loss="squared", learning_rate=0.3, max_depth=3, rounds=200,
            reg_lambda=0.0, early_stop_patience=10,
        )
        model = train(train_m, params, valid_m)
        losses = np.array(model.valid_loss)
        assert model.best_round == int(np.argmin(losses))
        assert losses[model.best_round] == losses.min()
        # stopping happened before the full budget once the patience ran out
        assert len(model.trees) < 200
        assert len(model.trees) - model.best_round == 10

    def test_prediction_uses_best_prefix(self):
        train_m, valid_m = self.build(seed=2)
        params = TrainParams(
            loss="squared", learning_rate=0.3, max_depth=3, rounds=60,
            reg_lambda=0.0, early_stop_patience=8,
        )
        model = train(train_m, params, valid_m)
        manual = np.full(valid_m.n_rows, model.base_score)
        for tree in model.trees[: model.best_round]:
            manual += model.learning_rate * tree.apply(valid_m.X)
        assert np.array_equal(model.predict_array(valid_m.X), manual)


class TestPredict:
    def test_zero_tree_model_returns_exp_base(self):
        model = BoostedModel(
            loss="poisson", base_score=math.log(3.0), learning_rate=0.1,
            feature_names=["f0"], trees=[], best_round=0,
        )
        matrix = matrix_of([[1.0], [2.0]])
        assert np.allclose(predict(model, matrix), 3.0)

    def test_exact_fit_toy_model(self):
        matrix = matrix_of([[0.0], [0.0], [1.0], [1.0]], y=[0.0, 0.0, 10.0, 10.0])
        params = TrainParams(
            loss="squared", learning_rate=1.0, max_depth=1, rounds=1, reg_lambda=0.0,
            min_split_loss=0.0,
        )
        model = train(matrix, params)
        assert model.trees[0].nodes[0].threshold == 0.5
        assert predict(model, matrix).tolist() == [0.0, 0.0, 10.0, 10.0]

    def test_missing_routed_by_stored_default(self):
        node = TreeNode(feature=0, threshold=0.5, default_left=False, left=1, right=2)
        tree = Tree(nodes=[node, TreeNode(weight=-1.0), TreeNode(weight=4.0)])
        out = tree.apply(np.array([[np.nan], [0.0], [1.0]]))
        assert out.tolist() == [4.0, -1.0, 4.0]

    def test_schema_mismatch_rejected(self):
        model = BoostedModel(
            loss="squared", base_score=0.0, learning_rate=0.1,
            feature_names=["a", "b"], trees=[], best_round=0,
        )
        with pytest.raises(ValueError, match="schema"):
            predict(model, matrix_of([[1.0]], columns=["a"]))

    def test_poisson_predictions_strictly_positive(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(60, 3))
        y = rng.poisson(np.exp(0.3 * x[:, 0])).astype(float)
        matrix = matrix_of(x, y=y)
        model = train(matrix, TrainParams(loss="poisson", rounds=20, learning_rate=0.3, max_depth=3))
        assert (predict(model, matrix) > 0).all()


class TestSerialization:
    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(50, 3))
        x[rng.random(x.shape) < 0.15] = np.nan
        y = rng.poisson(3.0, size=50).astype(float)
        matrix = matrix_of(x, y=y)
        model = train(matrix, TrainParams(loss="poisson", rounds=10, learning_rate=0.2, max_depth=4))
        text = model_to_json(model)
        loaded = model_from_json(text)
        assert model_to_json(loaded) == text
        assert loaded.base_score == model.base_score
        assert np.array_equal(loaded.predict_array(x), model.predict_array(x))

    def test_version_checked(self):
        with pytest.raises(ValueError, match="version"):
            model_from_json('{"version": 99}')


class TestForest:
    def test_single_plain_tree_equals_regression_fit(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(40, 3))
        y = rng.normal(size=40) + 3.0
        matrix = matrix_of(x, y=y)
        params = ForestParams(n_trees=1, bootstrap=False, feature_subsample=False, max_depth=4)
        forest = train_forest(matrix, params, seed=0)
        reference = fit_tree(x, -y, np.ones(40), max_depth=4, reg_lambda=0.0, min_split_loss=0.0)
        assert np.array_equal(forest.predict_array(x), reference.apply(x))

    def test_constant_target(self):
        matrix = matrix_of(np.arange(20).reshape(10, 2), y=[3.0] * 10)
        forest = train_forest(matrix, ForestParams(n_trees=5), seed=1)
        assert np.allclose(forest.predict_array(matrix.X), 3.0)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(60, 4))
        y = rng.normal(size=60)
        matrix = matrix_of(x, y=y)
        p1 = train_forest(matrix, ForestParams(n_trees=8, max_depth=6), seed=42).predict_array(x)
        p2 = train_forest(matrix, ForestParams(n_trees=8, max_depth=6), seed=42).predict_array(x)
        assert np.array_equal(p1, p2)

    def test_leaf_means_keep_count_targets_nonnegative(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(50, 3))
        y = rng.poisson(4.0, size=50).astype(float)
        matrix = matrix_of(x, y=y)
        forest = train_forest(matrix, ForestParams(n_trees=10, max_depth=8), seed=2)
        assert (forest.predict_array(x) >= 0).all()


def random_matrix(rng, max_rows=32, max_features=3):
    n = int(rng.integers(4, max_rows + 1))
    p = int(rng.integers(1, max_features + 1))
    x = rng.normal(size=(n, p))
    # quantize some columns to force duplicate values, and add missing cells
    for j in range(p):
        if rng.random() < 0.5:
            x[:, j] = np.round(x[:, j] * 2) / 2
    x[rng.random(x.shape) < 0.15] = np.nan
    y = rng.normal(size=n) * 3
    return x, y


class TestOracleEquivalence:
    def assert_same_tree(self, tree, oracle_nodes):
        assert len(tree.nodes) == len(oracle_nodes)
        for node, ref in zip(tree.nodes, oracle_nodes):
            assert node.feature == ref.feature
            assert node.left == ref.left
            assert node.right == ref.right
            if node.is_leaf:
                assert node.weight == ref.weight
            else:
                assert node.threshold == ref.threshold
                assert node.default_left == ref.default_left
                assert node.gain == pytest.approx(ref.gain, rel=1e-12, abs=1e-12)

    def test_trees_match_brute_force(self):
        rng = np.random.default_rng(8)
        for trial in range(12):
            x, y = random_matrix(rng)
            g, h = grad_hess("squared", y, np.zeros(len(y)))
            lam = float(rng.choice([0.0, 1.0]))
            msl = float(rng.choice([0.0, 0.05]))
            depth = int(rng.integers(1, 4))
            tree = fit_tree(x, g, h, max_depth=depth, reg_lambda=lam, min_split_loss=msl)
            oracle = oracle_fit_tree(x, g, h, max_depth=depth, reg_lambda=lam, min_split_loss=msl)
            self.assert_same_tree(tree, oracle)

    def test_recorded_gains_exceed_min_split_loss(self):
        rng = np.random.default_rng(9)
        x, y = random_matrix(rng, max_rows=30)
        g, h = grad_hess("squared", y, np.zeros(len(y)))
        tree = fit_tree(x, g, h, max_depth=4, reg_lambda=0.5, min_split_loss=0.05)
        for node in tree.nodes:
            if not node.is_leaf:
                assert node.gain >= 0.05

    def test_tree_structural_invariants(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            x, y = random_matrix(rng, max_rows=40)
            g, h = grad_hess("squared", y, np.zeros(len(y)))
            depth_cap = int(rng.integers(1, 5))
            tree = fit_tree(x, g, h, max_depth=depth_cap, reg_lambda=0.5, min_split_loss=0.0)
            assert tree.depth <= depth_cap
            n = len(tree.nodes)
            for node in tree.nodes:
                if node.is_leaf:
                    assert np.isfinite(node.weight)
                else:
                    assert 0 < node.left < n and 0 < node.right < n


class TestLossValue:
    def test_poisson_matches_pointwise(self):
        y = np.array([0.0, 2.0, 5.0])
        raw = np.array([0.1, 0.4, 1.2])
        expected = np.mean([poisson_pointwise(a, b) for a, b in zip(y, raw)])
        assert loss_value("poisson", y, raw) == pytest.approx(expected)

    def test_squared_matches_pointwise(self):
        y = np.array([1.0, 4.0])
        raw = np.array([2.0, 2.0])
        assert loss_value("squared", y, raw) == pytest.approx((0.5 + 2.0) / 2)
