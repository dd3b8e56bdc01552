import numpy as np
import pytest

from suffcast import (
    PanelData,
    RollingConfig,
    fit_additive,
    fit_pc_baseline,
    predict,
    rolling_evaluate,
)
from suffcast import forecaster as fc


class TestFitAdditive:
    def test_constant_targets(self):
        rng = np.random.default_rng(0)
        model = fit_additive(rng.standard_normal((10, 2)), np.full(10, 3.5))
        for _ in range(5):
            assert predict(model, rng.standard_normal(2)) == pytest.approx(3.5, abs=1e-12)

    def test_interpolation_limit(self):
        # bandwidth -> 0: prediction at a training point returns its target
        x = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([5.0, -1.0, 2.0, 7.0])
        model = fit_additive(x, y, np.array([1e-4]))
        for i in range(4):
            assert predict(model, x[i]) == pytest.approx(y[i], abs=1e-10)

    def test_hand_computed_gaussian_weights(self):
        model = fit_additive(
            np.array([[0.0], [1.0], [2.0]]), np.array([0.0, 1.0, 0.0]), np.array([1.0])
        )
        expected = 1.0 / (1.0 + 2.0 * np.exp(-0.5))
        assert predict(model, np.array([1.0])) == pytest.approx(expected, rel=1e-12)

    def test_degenerate_index_warns_and_contributes_zero(self):
        rng = np.random.default_rng(1)
        idx = np.column_stack([rng.standard_normal(12), np.ones(12)])
        y = idx[:, 0] + 2.0
        with pytest.warns(UserWarning, match="degenerate"):
            model = fit_additive(idx, y)
        assert not model.smoothers[1].active
        assert np.isfinite(predict(model, np.array([0.3, 1.0])))

    def test_finite_far_outside_training_range(self):
        rng = np.random.default_rng(2)
        model = fit_additive(rng.standard_normal((20, 2)), rng.standard_normal(20))
        assert np.isfinite(predict(model, np.array([1e6, -1e6])))

    def test_input_checks(self):
        with pytest.raises(ValueError, match="at least 3"):
            fit_additive(np.zeros((2, 1)), np.zeros(2))
        with pytest.raises(ValueError, match="non-finite"):
            fit_additive(np.array([[np.inf], [0.0], [1.0]]), np.zeros(3))
        with pytest.raises(ValueError, match="strictly positive"):
            fit_additive(np.zeros((4, 1)) + np.arange(4)[:, None], np.zeros(4), [0.0])


class TestPredict:
    def test_intercept_only_when_smoothers_flat(self):
        model = fit_additive(np.arange(6.0)[:, None], np.full(6, 2.0))
        assert predict(model, np.array([9.9])) == pytest.approx(2.0, abs=1e-12)

    def test_projection_through_directions(self):
        # direction (1, 0): second factor coordinate is ignored
        rng = np.random.default_rng(3)
        f = rng.standard_normal((30, 2))
        y = np.sin(f[:, 0])
        model = fit_additive(f[:, :1], y, directions=np.array([[1.0], [0.0]]))
        a = predict(model, np.array([0.5, -3.0]))
        b = predict(model, np.array([0.5, 4.0]))
        assert a == b


class TestPcBaseline:
    def test_exact_linear_recovery(self):
        rng = np.random.default_rng(4)
        f = rng.standard_normal((40, 3))
        y = 1.5 + f @ np.array([2.0, -1.0, 0.5])
        model = fit_pc_baseline(f, y, "linear")
        assert model.intercept == pytest.approx(1.5, abs=1e-10)
        assert np.allclose(model.coefficients, [2.0, -1.0, 0.5], atol=1e-10)

    def test_two_point_line(self):
        f = np.array([[0.0], [1.0]])
        y = np.array([1.0, 3.0])
        model = fit_pc_baseline(f, y, "linear")
        assert predict(model, np.array([2.0])) == pytest.approx(5.0, abs=1e-10)

    def test_matches_normal_equations_oracle(self):
        rng = np.random.default_rng(5)
        f = rng.standard_normal((25, 4))
        y = rng.standard_normal(25)
        model = fit_pc_baseline(f, y, "linear")
        design = np.column_stack([np.ones(25), f])
        beta = np.linalg.solve(design.T @ design, design.T @ y)
        assert model.intercept == pytest.approx(beta[0], rel=1e-10)
        assert np.allclose(model.coefficients, beta[1:], rtol=1e-10)

    def test_rank_deficiency(self):
        f = np.ones((10, 2))
        with pytest.raises(ValueError, match="rank-deficient"):
            fit_pc_baseline(f, np.zeros(10), "linear")

    def test_additive_mode_tag(self):
        rng = np.random.default_rng(6)
        model = fit_pc_baseline(rng.standard_normal((20, 2)), rng.standard_normal(20), "additive")
        assert model.method == "NL-PC"
        assert model.kind == "additive"


def make_panel(x, y):
    p, t_len = x.shape
    return PanelData(
        x=x,
        series_names=tuple(f"s{i}" for i in range(p)),
        time_labels=tuple(f"t{i:04d}" for i in range(t_len)),
        y=y,
    )


def linear_panel(p=2, t_len=60, seed=7):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((p, t_len))
    y = 3.0 + x.sum(axis=0)
    return make_panel(x, y)


class TestRollingEvaluate:
    def test_linear_target_is_forecast_perfectly_by_pc(self):
        panel = linear_panel()
        config = RollingConfig(window=30, horizon=1, method="pc", k=2, n_eval=10)
        report = rolling_evaluate(panel, config)
        assert report.mse < 1e-16
        assert report.r2_oos > 1 - 1e-10
        assert report.rmse_vs_pc == 1.0

    def test_mean_forecast_stub_scores_zero(self, monkeypatch):
        # a stub that always forecasts the training-window mean has R^2 = 0
        from suffcast.factor_analysis import fit_factors
        from suffcast.forecaster import ForecastModel

        def stub(x_win, targets_train, config):
            model = ForecastModel(
                kind="linear",
                method="stub",
                horizon=config.horizon,
                intercept=float(targets_train.mean()),
                coefficients=np.zeros(1),
            )
            return model, fit_factors(x_win, 1), 1, 0

        monkeypatch.setattr(fc, "_fit_window_model", stub)
        rng = np.random.default_rng(8)
        panel = make_panel(rng.standard_normal((2, 50)), rng.standard_normal(50))
        report = rolling_evaluate(panel, RollingConfig(window=20, method="dr", k=1, n_eval=8))
        assert report.r2_oos == pytest.approx(0.0, abs=1e-12)

    def test_two_origin_scalar_oracle(self):
        # independent replication of the pipeline for a single-series panel
        rng = np.random.default_rng(9)
        x = rng.standard_normal((1, 20))
        y = 0.8 * x[0] + 0.1 * rng.standard_normal(20)
        panel = make_panel(x, y)
        config = RollingConfig(window=15, horizon=1, method="pc", k=1, n_eval=2)
        report = rolling_evaluate(panel, config)
        errors = []
        for t in (18, 19):
            window = x[0, t - 14 : t + 1]
            z = (window - window.mean()) / window.std(ddof=1)
            f = np.sqrt(15) * z / np.linalg.norm(z)
            f = f * np.sign(f[np.abs(f).argmax()])
            design = np.column_stack([np.ones(14), f[:14]])
            beta = np.linalg.solve(design.T @ design, design.T @ y[t - 14 : t])
            forecast = beta[0] + beta[1] * f[-1]
            errors.append((y[t] - forecast) ** 2)
        assert report.mse == pytest.approx(np.mean(errors), rel=1e-10)

    def test_leakage_freedom(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((3, 60))
        y = rng.standard_normal(60)
        panel = make_panel(x, y)
        config = RollingConfig(window=30, horizon=2, method="dr", k=2, l=1, h_slices=4, n_eval=1)
        report = rolling_evaluate(panel, config)
        origin = report.origins[0]
        x2, y2 = x.copy(), y.copy()
        x2[:, origin + 1 :] += 77.0
        y2[origin:] -= 13.0  # y[t] is observed after time t, so it is future
        report2 = rolling_evaluate(make_panel(x2, y2), config)
        assert report.forecasts[0] == report2.forecasts[0]

    def test_r2_mse_consistency(self):
        rng = np.random.default_rng(11)
        panel = make_panel(rng.standard_normal((2, 70)), rng.standard_normal(70))
        report = rolling_evaluate(panel, RollingConfig(window=25, method="sir", k=2, l=1, h_slices=4, n_eval=12))
        denom = np.sum((report.realized - report.benchmarks) ** 2)
        assert report.r2_oos == pytest.approx(1 - report.mse * report.n_eval / denom, rel=1e-12)

    def test_determinism(self):
        rng = np.random.default_rng(12)
        panel = make_panel(rng.standard_normal((3, 60)), rng.standard_normal(60))
        config = RollingConfig(window=30, method="ens", k=2, l=1, h_slices=4, n_eval=5)
        a = rolling_evaluate(panel, config)
        b = rolling_evaluate(panel, config)
        assert np.array_equal(a.forecasts, b.forecasts)
        assert a.mse == b.mse

    def test_insufficient_data(self):
        panel = linear_panel(t_len=40)
        with pytest.raises(ValueError, match="insufficient data"):
            rolling_evaluate(panel, RollingConfig(window=60, method="pc", k=1))

    def test_origin_attached_to_errors(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((2, 40))
        x[:, 28:] = 4.2  # constant tail spans the last window, breaking standardization
        panel = make_panel(x, rng.standard_normal(40))
        with pytest.raises(ValueError, match="forecast origin"):
            rolling_evaluate(
                panel, RollingConfig(window=12, method="pc", k=1, n_eval=1)
            )

    def test_auto_selection_paths(self):
        rng = np.random.default_rng(14)
        f = rng.standard_normal((80, 2))
        b = rng.uniform(-1, 2, (20, 2))
        x = b @ f.T + 0.2 * rng.standard_normal((20, 80))
        y = f[:, 0] + f[:, 1] ** 2 + 0.1 * rng.standard_normal(80)
        panel = make_panel(x, y)
        config = RollingConfig(window=50, method="dr", k="auto", l="auto", h_slices=5, n_eval=3, k_max=4)
        report = rolling_evaluate(panel, config)
        assert np.all(report.selected_k >= 1)
        assert np.all(report.selected_l >= 1)

    def test_unknown_method(self):
        with pytest.raises(ValueError, match="unknown method"):
            RollingConfig(method="zzz")


def test_save_eval_report(tmp_path):
    panel = linear_panel()
    config = RollingConfig(window=30, horizon=1, method="pc", k=2, n_eval=4)
    report = rolling_evaluate(panel, config)
    fc.save_eval_report(report, tmp_path, config)
    import json

    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["rmse_vs_pc"] == 1.0
    assert summary["n_eval"] == 4
    lines = (tmp_path / "origins.csv").read_text().strip().splitlines()
    assert len(lines) == 5  # header + 4 origins
