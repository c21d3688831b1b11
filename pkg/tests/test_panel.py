import numpy as np
import pytest

from panelhd.errors import (
    AlreadyTransformed,
    DuplicateKey,
    NonNumericCell,
    UnbalancedPanel,
    ZeroVariance,
)
from panelhd.panel import (
    ColumnSchema,
    PanelDataset,
    ScaleRecord,
    demean_time,
    load_csv,
    standardize,
    unstandardize,
    write_csv,
)


def write_rows(path, rows, header="unit,time,y,x1"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n", encoding="utf-8")


def small_panel(n=4, t=6, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return PanelDataset(y=rng.standard_normal((n, t)), x=rng.standard_normal((n, t, d)))


class TestLoadCsv:
    def test_reads_balanced_panel(self, tmp_path):
        path = tmp_path / "p.csv"
        write_rows(
            path,
            ["a,1,1.0,0.5", "a,2,2.0,0.6", "b,1,3.0,0.7", "b,2,4.0,0.8"],
        )
        ds = load_csv(path)
        assert (ds.n_units, ds.n_periods, ds.n_regressors) == (2, 2, 1)
        assert ds.y[0, 0] == 1.0 and ds.y[1, 1] == 4.0
        assert ds.transform_log == ("none",)

    def test_missing_cell_is_unbalanced(self, tmp_path):
        path = tmp_path / "p.csv"
        write_rows(path, ["a,1,1.0,0.5", "a,2,2.0,0.6", "b,1,3.0,0.7"])
        with pytest.raises(UnbalancedPanel):
            load_csv(path)

    def test_duplicate_cell(self, tmp_path):
        path = tmp_path / "p.csv"
        write_rows(path, ["a,1,1.0,0.5", "a,1,2.0,0.6"])
        with pytest.raises(DuplicateKey):
            load_csv(path)

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / "p.csv"
        write_rows(path, ["a,1,oops,0.5", "a,2,2.0,0.6", "b,1,3.0,0.7", "b,2,4.0,0.8"])
        with pytest.raises(NonNumericCell):
            load_csv(path)

    def test_row_order_does_not_matter(self, tmp_path):
        rows = ["a,1,1.0,0.5", "a,2,2.0,0.6", "b,1,3.0,0.7", "b,2,4.0,0.8"]
        sorted_path = tmp_path / "sorted.csv"
        shuffled_path = tmp_path / "shuffled.csv"
        write_rows(sorted_path, rows)
        write_rows(shuffled_path, [rows[3], rows[1], rows[0], rows[2]])
        a = load_csv(sorted_path)
        b = load_csv(shuffled_path)
        assert np.array_equal(a.y, b.y) and np.array_equal(a.x, b.x)
        assert a.unit_ids == b.unit_ids and a.time_ids == b.time_ids

    def test_named_schema(self, tmp_path):
        path = tmp_path / "p.csv"
        write_rows(
            path,
            ["a,1,1.0,9.0", "a,2,2.0,9.5", "b,1,3.0,8.0", "b,2,4.0,8.5"],
            header="firm,month,ret,size",
        )
        ds = load_csv(path, ColumnSchema(unit="firm", time="month", y="ret"))
        assert ds.x_names == ("size",)

    def test_round_trip_via_write_csv(self, tmp_path):
        ds = small_panel()
        path = tmp_path / "out.csv"
        write_csv(ds, path)
        back = load_csv(path)
        np.testing.assert_array_equal(back.y, ds.y)
        np.testing.assert_array_equal(back.x, ds.x)


class TestDemean:
    def test_constant_unit_becomes_zero(self):
        y = np.vstack([np.full(5, 3.7), np.arange(5.0)])
        x = np.ones((2, 5, 1))
        ds = demean_time(PanelDataset(y=y, x=x))
        assert np.allclose(ds.y[0], 0.0)

    def test_arithmetic(self):
        y = np.array([[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]])
        ds = demean_time(PanelDataset(y=y, x=np.zeros((2, 3, 1)) + 1.0))
        np.testing.assert_allclose(ds.y[0], [-1.0, 0.0, 1.0])

    def test_means_are_zero_after(self):
        ds = demean_time(small_panel())
        assert np.abs(ds.y.mean(axis=1)).max() < 1e-10
        assert np.abs(ds.x.mean(axis=1)).max() < 1e-10

    def test_guard_against_double_demean(self):
        ds = demean_time(small_panel())
        with pytest.raises(AlreadyTransformed):
            demean_time(ds)

    def test_value_level_idempotence(self):
        # forcing a second demean through a fresh dataset changes nothing
        ds = demean_time(small_panel())
        forced = demean_time(PanelDataset(y=ds.y.copy(), x=ds.x.copy()))
        np.testing.assert_allclose(forced.y, ds.y, atol=1e-12)
        np.testing.assert_allclose(forced.x, ds.x, atol=1e-12)

    def test_removes_unit_effect_bias(self):
        # outcome with a unit effect correlated with x: pooled OLS on raw
        # data is biased, demeaned OLS recovers the slope
        rng = np.random.default_rng(3)
        n, t = 60, 40
        alpha = rng.standard_normal(n) * 2.0
        x = alpha[:, None, None] * 0.8 + rng.standard_normal((n, t, 1))
        y = alpha[:, None] + 0.5 * x[:, :, 0] + 0.1 * rng.standard_normal((n, t))
        ds = PanelDataset(y=y, x=x)

        def ols_slope(d):
            xv = d.design_matrix()[:, 0]
            yv = d.response_vector()
            return float(xv @ yv / (xv @ xv))

        assert abs(ols_slope(ds) - 0.5) > 0.1
        assert abs(ols_slope(demean_time(ds)) - 0.5) < 0.05


class TestStandardize:
    def test_already_standardized_is_unchanged(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((6, 50, 2))
        x -= x.reshape(-1, 2).mean(axis=0)
        x /= x.reshape(-1, 2).std(axis=0)
        y = rng.standard_normal((6, 50))
        y = (y - y.mean()) / y.std()
        ds, record = standardize(PanelDataset(y=y, x=x))
        np.testing.assert_allclose(ds.x, x, atol=1e-12)
        np.testing.assert_allclose(record.x_means, [0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(record.x_sds, [1.0, 1.0], atol=1e-12)

    def test_two_point_column(self):
        y = np.array([[0.0, 2.0], [0.0, 2.0]])
        x = y[:, :, None]
        ds, _ = standardize(PanelDataset(y=y, x=x))
        np.testing.assert_allclose(sorted(ds.x[0, :, 0]), [-1.0, 1.0])

    def test_pooled_moments(self):
        ds, _ = standardize(small_panel(seed=5))
        flat = ds.x.reshape(-1, ds.n_regressors)
        assert np.abs(flat.mean(axis=0)).max() < 1e-8
        assert np.abs(flat.var(axis=0) - 1.0).max() < 1e-8

    def test_round_trip(self):
        ds = small_panel(seed=9)
        std, record = standardize(ds)
        back = unstandardize(std, record)
        np.testing.assert_allclose(back.y, ds.y, atol=1e-10)
        np.testing.assert_allclose(back.x, ds.x, atol=1e-10)

    def test_zero_variance_column(self):
        y = np.random.default_rng(0).standard_normal((3, 4))
        x = np.ones((3, 4, 1))
        with pytest.raises(ZeroVariance):
            standardize(PanelDataset(y=y, x=x))

    def test_coefficients_map_back(self):
        # fitted values computed in standardized units reproduce the raw fit
        ds = small_panel(seed=11)
        std, record = standardize(ds)
        beta_std = np.array([0.4, -1.2, 0.3])
        fitted_std = std.design_matrix() @ beta_std
        fitted_raw = record.y_mean + record.y_sd * fitted_std
        beta_raw = record.coef_to_raw(beta_std)
        intercept = record.intercept_to_raw(beta_std)
        direct = ds.design_matrix() @ beta_raw + intercept
        np.testing.assert_allclose(direct, fitted_raw, atol=1e-8)

    def test_scale_record_json_round_trip(self):
        _, record = standardize(small_panel(seed=2))
        back = ScaleRecord.from_json(record.to_json())
        np.testing.assert_allclose(back.x_means, record.x_means)
        np.testing.assert_allclose(back.x_sds, record.x_sds)
        assert back.y_mean == pytest.approx(record.y_mean)


def test_pipeline_preserves_shapes():
    ds = small_panel(n=5, t=7, d=2)
    out, _ = standardize(demean_time(ds))
    assert (out.n_units, out.n_periods, out.n_regressors) == (5, 7, 2)
    assert out.transform_log == ("none", "time_demeaned", "standardized")


def test_dataset_is_immutable():
    ds = small_panel()
    with pytest.raises(ValueError):
        ds.y[0, 0] = 99.0
