import numpy as np
import pytest

from demandcast.core import Catalog
from demandcast.features import (
    LAG_DEPTH,
    build_matrix,
    fnv1a64,
    hash_encode,
    impute_future_covariates,
    ordinal_encode,
)
from demandcast.ingest import CovariateTable, RunConfig
from demandcast.preprocess import preprocess_panel
from demandcast.seasonal import fit_seasonality

from .oracles import fnv1a64_reference
from .test_core import make_panel

# frozen reference: independent FNV-1a implementation, computed once
TOYS_FNV1A64 = 4977285706153611356


class TestOrdinalEncode:
    def test_sorted_ids(self):
        mapping = ordinal_encode(["B", "A", "A"])
        assert mapping.mapping == {"A": 0, "B": 1}

    def test_singleton(self):
        assert ordinal_encode(["X"]).mapping == {"X": 0}

    def test_unseen_gets_reserved_id(self):
        mapping = ordinal_encode(["A", "B"])
        assert mapping.encode("Z") == 2

    def test_stable_across_input_order(self):
        assert ordinal_encode(["c", "a", "b"]).mapping == ordinal_encode(["b", "c", "a"]).mapping


class TestHashEncode:
    def test_deterministic(self):
        assert hash_encode("same", 64) == hash_encode("same", 64)

    def test_range(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            token = "".join(chr(c) for c in rng.integers(33, 127, size=rng.integers(1, 12)))
            assert 0 <= hash_encode(token, 7) < 7

    def test_frozen_reference_value(self):
        assert fnv1a64(b"TOYS") == TOYS_FNV1A64
        assert fnv1a64(b"TOYS") == fnv1a64_reference(b"TOYS")
        assert hash_encode("TOYS", 64) == TOYS_FNV1A64 % 64

    def test_buckets_floor(self):
        with pytest.raises(ValueError):
            hash_encode("x", 1)


class TestImputation:
    def table(self):
        return CovariateTable(
            temporal={
                "event": {0: 0.0, 1: 1.0, 2: 0.0, 10: 1.0},
                "weather": {0: 12.0, 2: 20.0, 4: 14.0},
            },
            mixed={"price": {("p1", 0): 10.0, ("p1", 1): 10.0, ("p1", 2): 12.0}},
            predictable={"event": True, "weather": False, "price": False},
        )

    def test_known_future_passthrough(self):
        values = impute_future_covariates(self.table(), "p1", 10, tau=4)
        assert values["event"] == 1.0

    def test_price_mean_of_past(self):
        values = impute_future_covariates(self.table(), "p1", 8, tau=4)
        assert values["price"] == pytest.approx(32 / 3)

    def test_weather_single_seasonal_observation(self):
        values = impute_future_covariates(self.table(), "p1", 6, tau=4)  # position 2
        assert values["weather"] == 20.0

    def test_seasonal_mean_of_two(self):
        # target week 8 sits at position 0; weeks 0 and 4 are the past observations there
        values = impute_future_covariates(self.table(), "p1", 8, tau=4)
        assert values["weather"] == pytest.approx((12.0 + 14.0) / 2)

    def test_cutoff_respected(self):
        values = impute_future_covariates(self.table(), "p1", 8, tau=4, known_until=1)
        assert values["price"] == pytest.approx(10.0)

    def test_absent_everything_is_nan(self):
        values = impute_future_covariates(self.table(), "p9", 8, tau=4)
        assert np.isnan(values["price"])


def pipeline_inputs(n_weeks=30, n_products=3, seed=0, launches=None):
    rng = np.random.default_rng(seed)
    y = rng.poisson(6.0, size=(n_products, n_weeks)).astype(np.int64)
    on_sale = np.ones((n_products, n_weeks), dtype=bool)
    if launches:
        for row, launch in launches.items():
            on_sale[row, :launch] = False
    y[~on_sale] = 0
    panel = make_panel(y, on_sale=on_sale)
    catalog = Catalog(
        {f"p{i}": ("toys" if i % 2 == 0 else "garden") for i in range(n_products)},
        {f"p{i}": 10.0 + i for i in range(n_products)},
        {f"p{i}": {"brand": f"b{i % 2}"} for i in range(n_products)},
    )
    repaired, smoothed = preprocess_panel(panel, window=8, gamma=3.0)
    model = fit_seasonality(smoothed, repaired, catalog, tau=52, k=2, seed=0)
    return panel, repaired, smoothed, catalog, model


class TestBuildMatrix:
    def config(self, **kw):
        return RunConfig(train_len=20, valid_len=4, test_len=6, **kw)

    def test_row_count_continuous_product(self):
        _, repaired, smoothed, catalog, model = pipeline_inputs(n_weeks=20, n_products=1)
        matrix = build_matrix(
            repaired, smoothed, catalog, model, None, self.config(), t_end=13, mode="train"
        )
        assert matrix.n_rows == 14
        assert [week for _, week in matrix.keys] == list(range(6, 20))

    def test_cold_start_rows_have_missing_lags(self):
        _, repaired, smoothed, catalog, model = pipeline_inputs(
            n_weeks=20, n_products=2, launches={1: 12}
        )
        matrix = build_matrix(
            repaired, smoothed, catalog, model, None, self.config(), t_end=13, mode="train"
        )
        rows_p1 = [idx for idx, (pid, _) in enumerate(matrix.keys) if pid == "p1"]
        assert [matrix.keys[idx][1] for idx in rows_p1] == [18, 19]  # t = 12, 13
        first = matrix.X[rows_p1[0]]
        lag_cols = matrix.columns[:LAG_DEPTH]
        assert np.isnan(first[lag_cols.index("lag_1") :  LAG_DEPTH]).all()
        assert not np.isnan(first[lag_cols.index("lag_0")])
        assert matrix.life_at_forecast[rows_p1[0]] == 1

    def test_predict_mode(self):
        _, repaired, smoothed, catalog, model = pipeline_inputs(n_weeks=20, n_products=3)
        matrix = build_matrix(
            repaired, smoothed, catalog, model, None, self.config(), t_end=19, mode="predict"
        )
        assert matrix.n_rows == 3
        assert matrix.targets is None
        assert all(week == 25 for _, week in matrix.keys)

    def test_t_end_out_of_range(self):
        _, repaired, smoothed, catalog, model = pipeline_inputs(n_weeks=20, n_products=1)
        with pytest.raises(ValueError):
            build_matrix(
                repaired, smoothed, catalog, model, None, self.config(), t_end=14, mode="train"
            )

    def test_no_duplicate_keys_and_target_alignment(self):
        panel, repaired, smoothed, catalog, model = pipeline_inputs(n_weeks=30, n_products=3)
        matrix = build_matrix(
            repaired, smoothed, catalog, model, None, self.config(), t_end=22, mode="train"
        )
        assert len(set(matrix.keys)) == matrix.n_rows
        for idx, (pid, week) in enumerate(matrix.keys):
            assert matrix.targets[idx] == repaired.y[repaired.index[pid], week]

    def test_targets_are_repaired_not_smoothed(self):
        y = np.array([[5, 5, 0, 5, 5, 5, 5, 5, 5, 80, 5, 5]])
        stock = np.ones_like(y, dtype=bool)
        stock[0, 2] = False
        panel = make_panel(y, stock=stock)
        catalog = Catalog({"p0": "c"}, {"p0": 1.0}, {})
        repaired, smoothed = preprocess_panel(panel, window=4, gamma=1.0)
        config = RunConfig(horizon=2, with_seasonality=False)
        matrix = build_matrix(repaired, smoothed, catalog, None, None, config, t_end=9, mode="train")
        by_key = dict(zip(matrix.keys, matrix.targets))
        assert by_key[("p0", 2)] == 5.0   # repaired fake zero
        assert by_key[("p0", 9)] == 80.0  # spike target kept, not capped
        assert smoothed.x[0, 9] < 80.0

    def test_hashing_mode_changes_encoding_only(self):
        _, repaired, smoothed, catalog, model = pipeline_inputs(n_weeks=20, n_products=2)
        ordinal = build_matrix(
            repaired, smoothed, catalog, model, None, self.config(encoding="ordinal"),
            t_end=13, mode="train",
        )
        hashed = build_matrix(
            repaired, smoothed, catalog, model, None, self.config(encoding="hashing"),
            t_end=13, mode="train",
        )
        assert ordinal.columns == hashed.columns
        numeric = [c for c in ordinal.columns if not (c == "category" or c.startswith("attr_"))]
        for col in numeric:
            idx = ordinal.columns.index(col)
            assert np.array_equal(ordinal.X[:, idx], hashed.X[:, idx], equal_nan=True)

    def test_row_count_formula(self):
        rng = np.random.default_rng(9)
        n_weeks, t_end, h = 30, 20, 6
        y = rng.poisson(4.0, size=(5, n_weeks)).astype(np.int64)
        on_sale = rng.random((5, n_weeks)) > 0.3
        y[~on_sale] = 0
        panel = make_panel(y, on_sale=on_sale)
        catalog = Catalog(
            {f"p{i}": "c" for i in range(5)}, {f"p{i}": 1.0 for i in range(5)}, {}
        )
        repaired, smoothed = preprocess_panel(panel, 8, 3.0)
        config = RunConfig(horizon=h, with_seasonality=False)
        matrix = build_matrix(repaired, smoothed, catalog, None, None, config, t_end, "train")
        expected = 0
        for i in range(5):
            launches = np.flatnonzero(on_sale[i])
            if launches.size == 0 or launches[0] > t_end:
                continue
            expected += int(on_sale[i, launches[0] : t_end + 1].sum())
        assert matrix.n_rows == expected

    def test_audit_dump_round_trips_values(self, tmp_path):
        from demandcast.features import write_features

        _, repaired, smoothed, catalog, model = pipeline_inputs(n_weeks=20, n_products=2)
        matrix = build_matrix(
            repaired, smoothed, catalog, model, None, self.config(), t_end=13, mode="train"
        )
        path = tmp_path / "features.csv"
        write_features(matrix, path)
        lines = path.read_text().splitlines()
        assert lines[0].split(",") == ["product_id", "target_week"] + matrix.columns + ["target"]
        assert len(lines) == matrix.n_rows + 1
        first = lines[1].split(",")
        assert first[0] == matrix.keys[0][0]
        assert float(first[-1]) == matrix.targets[0]

    def test_no_leakage_under_truncation(self):
        """Features for week t rebuilt from data up to t match the full build."""
        rng = np.random.default_rng(42)
        n_weeks, n_products = 40, 4
        y = rng.poisson(8.0, size=(n_products, n_weeks)).astype(np.int64)
        panel = make_panel(y)  # always in stock: repair is identity, smoothing causal
        catalog = Catalog(
            {f"p{i}": "c" for i in range(n_products)},
            {f"p{i}": 5.0 for i in range(n_products)},
            {},
        )
        covariates = CovariateTable(
            temporal={"event": {t: float(t % 7 == 0) for t in range(n_weeks + 6)}},
            mixed={"price_week": {(f"p{i}", t): 5.0 + (t % 3) for i in range(n_products) for t in range(n_weeks)}},
            predictable={"event": True, "price_week": False},
        )
        config = RunConfig(train_len=30, valid_len=4, test_len=6)
        repaired, smoothed = preprocess_panel(panel, 8, 3.0)
        model = fit_seasonality(smoothed, repaired, catalog, 52, 1, seed=0, end_week=28)
        t = 28
        full = build_matrix(
            repaired, smoothed, catalog, model, covariates, config, t_end=t, mode="train"
        )
        rows_at_t = [idx for idx, (_, week) in enumerate(full.keys) if week == t + config.horizon]

        truncated = make_panel(y[:, : t + 1])
        cov_trunc = CovariateTable(
            temporal=covariates.temporal,  # known future stays available
            mixed={
                "price_week": {
                    key: value
                    for key, value in covariates.mixed["price_week"].items()
                    if key[1] <= t
                }
            },
            predictable=covariates.predictable,
        )
        repaired_t, smoothed_t = preprocess_panel(truncated, 8, 3.0)
        assert np.array_equal(smoothed_t.x, smoothed.x[:, : t + 1])
        again = build_matrix(
            repaired_t, smoothed_t, catalog, model, cov_trunc, config, t_end=t, mode="predict"
        )
        assert [k for k in again.keys] == [full.keys[idx] for idx in rows_at_t]
        rebuilt = again.X
        original = full.X[rows_at_t]
        assert np.array_equal(original, rebuilt, equal_nan=True)
