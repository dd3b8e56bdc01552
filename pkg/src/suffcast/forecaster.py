"""Nonparametric forecasting on extracted indices and rolling evaluation.

The forecast is ``y_hat = mean(y_train) + sum_j s_j(index_j)`` where each
``s_j`` is a univariate local-constant (Nadaraya-Watson, Gaussian weight)
smoother and the components are fit jointly by backfitting.  The rolling
evaluator re-runs the whole pipeline (standardize, factor fit, slice, kernel,
directions, additive fit) inside each moving window and scores forecasts
against a linear principal-components baseline fit on identical windows.
"""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import sdr
from .factor_analysis import fit_factors, select_num_factors
from .panel_data import PanelData, standardize

BACKFIT_TOL = 1e-8
BACKFIT_MAX_SWEEPS = 100

SDR_METHODS = ("sir", "dr", "tm", "ens")
METHODS = SDR_METHODS + ("pc", "nlpc")


def reference_bandwidth(values: np.ndarray) -> float:
    """Normal-reference rule: ``1.06 * sd * T^(-1/5)`` (sample sd)."""
    t_len = values.shape[0]
    return 1.06 * float(np.std(values, ddof=1)) * t_len ** (-0.2)


def _nw_weights(train_x: np.ndarray, query_x: np.ndarray, bandwidth: float) -> np.ndarray:
    """Row-normalized Gaussian weights of each query point over the training points.

    Exponents are shifted by their row maximum before exponentiation, so
    queries far outside the training range keep finite weights concentrated
    on the nearest observations.
    """
    d = (query_x[:, None] - train_x[None, :]) / bandwidth
    e = -0.5 * d * d
    e -= e.max(axis=1, keepdims=True)
    w = np.exp(e)
    return w / w.sum(axis=1, keepdims=True)


@dataclass(eq=False)
class _Smoother:
    """State of one fitted univariate component."""

    train_x: np.ndarray
    partial_residuals: np.ndarray
    bandwidth: float
    active: bool = True

    def __call__(self, query_x: np.ndarray) -> np.ndarray:
        if not self.active:
            return np.zeros_like(query_x, dtype=float)
        w = _nw_weights(self.train_x, np.asarray(query_x, dtype=float), self.bandwidth)
        return w @ self.partial_residuals


@dataclass(eq=False)
class ForecastModel:
    """A fitted forecast rule: either additive-in-indices or linear.

    ``directions`` maps a length-``K`` factor vector to the ``L`` fitted
    indices; for models fit directly on raw inputs it is the identity.
    """

    kind: str  # "additive" | "linear"
    method: str
    horizon: int
    intercept: float
    directions: np.ndarray | None = None
    smoothers: list[_Smoother] = field(default_factory=list)
    coefficients: np.ndarray | None = None

    @property
    def n_indices(self) -> int:
        return len(self.smoothers)


def fit_additive(
    indices: np.ndarray,
    targets: np.ndarray,
    bandwidths=None,
    *,
    directions: np.ndarray | None = None,
    method: str = "additive",
    horizon: int = 1,
) -> ForecastModel:
    """Backfit univariate kernel smoothers on the columns of ``indices``.

    Targets are centered at their mean (the model intercept) and components
    are updated in turn until the fitted values move less than ``BACKFIT_TOL``
    or ``BACKFIT_MAX_SWEEPS`` is reached.  A zero-variance index column is
    fixed at zero with a warning.  Default per-index bandwidth is the
    normal-reference rule.
    """
    indices = np.atleast_2d(np.asarray(indices, dtype=float))
    if indices.shape[0] == 1 and indices.shape[1] > 1:
        indices = indices.T
    targets = np.asarray(targets, dtype=float)
    t_len, n_idx = indices.shape
    if t_len < 3:
        raise ValueError(f"need at least 3 observations to fit, got {t_len}")
    if n_idx < 1:
        raise ValueError("need at least one index")
    if targets.shape != (t_len,):
        raise ValueError(f"targets have shape {targets.shape}, expected ({t_len},)")
    if not (np.all(np.isfinite(indices)) and np.all(np.isfinite(targets))):
        raise ValueError("non-finite inputs")
    if bandwidths is not None:
        bandwidths = np.asarray(bandwidths, dtype=float)
        if bandwidths.shape != (n_idx,):
            raise ValueError(f"bandwidths have shape {bandwidths.shape}, expected ({n_idx},)")
        if np.any(bandwidths <= 0):
            raise ValueError("bandwidths must be strictly positive")

    intercept = float(targets.mean())
    centered = targets - intercept

    active = np.ones(n_idx, dtype=bool)
    bws = np.empty(n_idx)
    weight_mats: list[np.ndarray | None] = []
    for j in range(n_idx):
        if np.ptp(indices[:, j]) == 0.0:
            warnings.warn(f"index {j} is degenerate (zero variance); component fixed at 0",
                          stacklevel=2)
            active[j] = False
            bws[j] = np.nan
            weight_mats.append(None)
            continue
        bws[j] = bandwidths[j] if bandwidths is not None else reference_bandwidth(indices[:, j])
        weight_mats.append(_nw_weights(indices[:, j], indices[:, j], bws[j]))

    fitted = np.zeros((n_idx, t_len))
    total_prev = np.zeros(t_len)
    for _ in range(BACKFIT_MAX_SWEEPS):
        for j in range(n_idx):
            if not active[j]:
                continue
            partial = centered - (fitted.sum(axis=0) - fitted[j])
            fitted[j] = weight_mats[j] @ partial
        total = fitted.sum(axis=0)
        if np.max(np.abs(total - total_prev)) < BACKFIT_TOL:
            break
        total_prev = total

    smoothers = []
    total = fitted.sum(axis=0)
    for j in range(n_idx):
        if active[j]:
            partial = centered - (total - fitted[j])
            smoothers.append(_Smoother(indices[:, j].copy(), partial, float(bws[j])))
        else:
            smoothers.append(_Smoother(indices[:, j].copy(), np.zeros(t_len), 1.0, active=False))

    if directions is None:
        directions = np.eye(n_idx)
    return ForecastModel(
        kind="additive",
        method=method,
        horizon=horizon,
        intercept=intercept,
        directions=np.asarray(directions, dtype=float),
        smoothers=smoothers,
    )


def fit_pc_baseline(factors: np.ndarray, targets: np.ndarray, mode: str = "linear") -> ForecastModel:
    """Baseline forecasts from all factors: OLS (``linear``) or additive on each.

    Linear mode regresses the targets on an intercept plus every factor and
    errors out on a rank-deficient design; additive mode reuses
    :func:`fit_additive` with identity directions.
    """
    factors = np.asarray(factors, dtype=float)
    targets = np.asarray(targets, dtype=float)
    t_len, k = factors.shape
    if mode == "additive":
        return fit_pc_additive(factors, targets)
    if mode != "linear":
        raise ValueError(f"unknown mode {mode!r}; expected 'linear' or 'additive'")
    if t_len <= k:
        raise ValueError(f"linear baseline needs T > K, got T={t_len}, K={k}")
    design = np.column_stack([np.ones(t_len), factors])
    if np.linalg.matrix_rank(design) < k + 1:
        raise ValueError("rank-deficient design in linear baseline")
    beta, *_ = np.linalg.lstsq(design, targets, rcond=None)
    return ForecastModel(
        kind="linear",
        method="PC",
        horizon=1,
        intercept=float(beta[0]),
        coefficients=beta[1:],
    )


def fit_pc_additive(factors: np.ndarray, targets: np.ndarray) -> ForecastModel:
    k = np.asarray(factors).shape[1]
    model = fit_additive(factors, targets, directions=np.eye(k), method="NL-PC")
    return model


def _predict_batch(model: ForecastModel, f_new: np.ndarray) -> np.ndarray:
    f_new = np.atleast_2d(np.asarray(f_new, dtype=float))
    if not np.all(np.isfinite(f_new)):
        raise ValueError("non-finite input to predict")
    if model.kind == "linear":
        return model.intercept + f_new @ model.coefficients
    idx = f_new @ model.directions
    out = np.full(f_new.shape[0], model.intercept)
    for j, smoother in enumerate(model.smoothers):
        out += smoother(idx[:, j])
    return out


def predict(model: ForecastModel, f_new) -> float:
    """Evaluate the fitted forecast rule at one length-``K`` input vector."""
    return float(_predict_batch(model, np.asarray(f_new, dtype=float)[None, :])[0])


@dataclass(frozen=True)
class RollingConfig:
    """Settings for the rolling out-of-sample evaluation."""

    window: int = 120
    horizon: int = 1
    method: str = "dr"
    k: int | str = 8  # factor count, or "auto"
    l: int | str = 1  # index count for SDR methods, or "auto"
    h_slices: int = 10
    n_eval: int = 240
    variance_mode: str = "identity"
    standardize: bool = True
    k_max: int = 8
    c_censor: float = 0.5
    ct_multiplier: float = 1.0
    benchmark: str = "window"  # "window" (training mean per origin) or "full"
    bandwidth_scale: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.window < 10:
            raise ValueError("window too short")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.benchmark not in ("window", "full"):
            raise ValueError(f"unknown benchmark {self.benchmark!r}")


@dataclass(eq=False)
class EvalReport:
    """Per-origin forecasts plus the aggregate accuracy measures."""

    method: str
    horizon: int
    window: int
    origins: np.ndarray  # column indices of the forecast origins
    forecasts: np.ndarray
    realized: np.ndarray
    benchmarks: np.ndarray  # per-origin benchmark means used in the R^2 denominator
    mse: float
    mse_pc: float
    rmse_vs_pc: float
    r2_oos: float
    selected_k: np.ndarray
    selected_l: np.ndarray

    @property
    def n_eval(self) -> int:
        return self.origins.shape[0]


def _forward_mean(y: np.ndarray, h: int) -> np.ndarray:
    """Aligned multi-step targets: ``out[t] = mean(y[t], ..., y[t+h-1])``.

    ``y`` follows the panel alignment (``y[t]`` observed one period after the
    column-``t`` predictors), so ``out[t]`` is the average outcome over the
    ``h`` periods following time ``t``.
    """
    if h == 1:
        return y.astype(float, copy=True)
    return np.lib.stride_tricks.sliding_window_view(y, h).mean(axis=1)


def _fit_window_model(x_win, targets_train, config: RollingConfig):
    """Fit the configured forecaster inside one window.

    ``x_win`` holds the window's predictor columns (already standardized if
    requested); the last column is the forecast origin and the first
    ``len(targets_train)`` columns are the training times.
    """
    t_w = x_win.shape[1]
    if config.k == "auto":
        k_sel = select_num_factors(x_win, min(config.k_max, min(x_win.shape) - 1))
        k_use = max(k_sel.k_hat, 1)
    else:
        k_use = int(config.k)
    fit = fit_factors(x_win, k_use)
    factors = fit.factors
    train_factors = factors[: targets_train.shape[0]]

    if config.method == "pc":
        model = fit_pc_baseline(train_factors, targets_train, "linear")
        return model, fit, k_use, 0
    if config.method == "nlpc":
        model = fit_pc_baseline(train_factors, targets_train, "additive")
        return model, fit, k_use, k_use

    slices = sdr.slice_target(targets_train, config.h_slices)
    if config.method == "sir":
        kernel = sdr.sir_kernel(train_factors, slices)
    elif config.method == "dr":
        kernel = sdr.dr_kernel(train_factors, slices, config.variance_mode)
    elif config.method == "tm":
        kernel = sdr.tm_kernel(train_factors, slices)
    else:  # ens
        kernel = sdr.ensemble_kernel(
            sdr.dr_kernel(train_factors, slices, config.variance_mode),
            sdr.tm_kernel(train_factors, slices),
        )
    if config.l == "auto":
        c_t = config.ct_multiplier * sdr.default_ct(
            kernel.method, k_use, x_win.shape[0], slices.t_len
        )
        l_use = sdr.select_dimension(kernel, slices.t_len, config.c_censor, c_t).l_hat
    else:
        l_use = int(config.l)
    phi = sdr.extract_directions(kernel, l_use)
    indices = train_factors @ phi
    bandwidths = None
    if config.bandwidth_scale != 1.0:
        bandwidths = config.bandwidth_scale * np.array(
            [reference_bandwidth(indices[:, j]) for j in range(l_use)]
        )
    model = fit_additive(
        indices,
        targets_train,
        bandwidths,
        directions=phi,
        method=f"{config.method.upper()}({l_use})",
        horizon=config.horizon,
    )
    return model, fit, k_use, l_use


def rolling_evaluate(panel: PanelData, config: RollingConfig) -> EvalReport:
    """Roll a fixed-length window through the panel and score the forecasts.

    At each origin ``t`` the pipeline sees only columns up to ``t`` and target
    values observed by time ``t``; the realized value ``mean(y[t..t+h-1])``
    is used for scoring only.  A linear principal-components baseline is fit
    on identical windows, so its relative RMSE is exactly one.
    """
    t_w, h = config.window, config.horizon
    t_len = panel.t_len
    aligned = _forward_mean(panel.y, h)  # defined for t = 0 .. T-h
    first = t_w - 1
    last = t_len - h
    if last < first:
        raise ValueError(
            f"insufficient data: need at least window + horizon = {t_w + h} columns, "
            f"panel has {t_len}"
        )
    origins = np.arange(first, last + 1)
    if config.n_eval < len(origins):
        origins = origins[-config.n_eval :]
    if t_w - h < 10:
        raise ValueError("window leaves too few training points for the horizon")

    forecasts = np.empty(origins.shape[0])
    baseline = np.empty(origins.shape[0])
    realized = aligned[origins]
    benchmarks = np.empty(origins.shape[0])
    selected_k = np.empty(origins.shape[0], dtype=int)
    selected_l = np.empty(origins.shape[0], dtype=int)

    for i, t in enumerate(origins):
        try:
            lo = t - t_w + 1
            x_win = panel.x[:, lo : t + 1]
            if config.standardize:
                sub = PanelData(
                    x=x_win,
                    series_names=panel.series_names,
                    time_labels=panel.time_labels[lo : t + 1],
                    y=panel.y[lo : t + 1],
                    target_name=panel.target_name,
                )
                sub, _ = standardize(sub)
                x_win = sub.x
            targets_train = aligned[lo : t - h + 1]
            model, fit, k_use, l_use = _fit_window_model(x_win, targets_train, config)
            forecasts[i] = predict(model, fit.factors[-1])
            if config.method == "pc":
                baseline[i] = forecasts[i]
            else:
                pc_model = fit_pc_baseline(
                    fit.factors[: targets_train.shape[0]], targets_train, "linear"
                )
                baseline[i] = predict(pc_model, fit.factors[-1])
            benchmarks[i] = targets_train.mean() if config.benchmark == "window" else aligned.mean()
            selected_k[i] = k_use
            selected_l[i] = l_use
        except Exception as e:
            raise type(e)(f"forecast origin {t}: {e}") from e

    err = realized - forecasts
    err_pc = realized - baseline
    mse = float(np.mean(err**2))
    mse_pc = float(np.mean(err_pc**2))
    rmse_vs_pc = 1.0 if config.method == "pc" else mse / mse_pc
    denom = float(np.sum((realized - benchmarks) ** 2))
    r2 = 1.0 - float(np.sum(err**2)) / denom if denom > 0 else float("-inf")
    return EvalReport(
        method=config.method,
        horizon=h,
        window=t_w,
        origins=origins,
        forecasts=forecasts,
        realized=realized,
        benchmarks=benchmarks,
        mse=mse,
        mse_pc=mse_pc,
        rmse_vs_pc=rmse_vs_pc,
        r2_oos=r2,
        selected_k=selected_k,
        selected_l=selected_l,
    )


def save_eval_report(report: EvalReport, out_dir: str | Path, config: RollingConfig | None = None) -> None:
    """Write per-origin forecasts as CSV and the aggregate summary as JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["origin", "forecast", "realized", "benchmark", "selected_k", "selected_l"])
    for i in range(report.n_eval):
        writer.writerow(
            [
                int(report.origins[i]),
                repr(float(report.forecasts[i])),
                repr(float(report.realized[i])),
                repr(float(report.benchmarks[i])),
                int(report.selected_k[i]),
                int(report.selected_l[i]),
            ]
        )
    (out / "origins.csv").write_text(buf.getvalue())
    summary = {
        "method": report.method,
        "horizon": report.horizon,
        "window": report.window,
        "n_eval": report.n_eval,
        "mse": report.mse,
        "mse_pc": report.mse_pc,
        "rmse_vs_pc": report.rmse_vs_pc,
        "r2_oos": report.r2_oos,
    }
    if config is not None:
        summary["config"] = asdict(config)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
