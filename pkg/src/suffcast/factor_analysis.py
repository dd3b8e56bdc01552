"""Factor extraction by constrained least squares and factor-count selection.

Given a ``p x T`` panel ``X``, the rank-``K`` least-squares factorization
``X ~ B F'`` under the constraints ``F'F / T = I_K`` and ``B'B`` diagonal is
computed from the eigenvectors of the ``T x T`` Gram matrix ``X'X``: the
columns of ``F / sqrt(T)`` are the top-``K`` eigenvectors and ``B = X F / T``.
The number of factors is selected by penalized log residual variance.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ._eigen import sym_eig_desc


@dataclass(frozen=True, eq=False)
class FactorEstimate:
    """Estimated loadings, factors and spectrum of a fitted factor model.

    ``loadings`` is ``p x K``, ``factors`` is ``T x K`` (row ``t`` holds the
    factor values for time ``t``), ``eigenvalues`` are the top ``K``
    eigenvalues of ``X'X / (pT)`` in descending order, and ``loadings_pinv``
    is ``(B'B)^{-1} B'`` (``K x p``), the projector used to recover factor
    values from new predictor columns.
    """

    loadings: np.ndarray
    factors: np.ndarray
    eigenvalues: np.ndarray
    loadings_pinv: np.ndarray

    @property
    def k(self) -> int:
        return self.factors.shape[1]

    @property
    def t_len(self) -> int:
        return self.factors.shape[0]


def fit_factors(x: np.ndarray, k: int) -> FactorEstimate:
    """Fit a rank-``k`` factor model to the ``p x T`` matrix ``x``.

    The factor columns are sign-fixed (largest-magnitude entry nonnegative)
    and ordered by descending eigenvalue, ties broken by the first index of
    each eigenvector's largest entry.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("x must be 2-D (series x time)")
    p, t_len = x.shape
    if not np.all(np.isfinite(x)):
        raise ValueError("x contains non-finite values")
    if not 1 <= k <= min(p, t_len):
        raise ValueError(f"k={k} out of range 1..min(p={p}, T={t_len})")
    gram = x.T @ x
    try:
        vals, vecs = sym_eig_desc(gram)
    except np.linalg.LinAlgError as e:  # pragma: no cover - LAPACK failure
        raise np.linalg.LinAlgError(f"eigen-solver failure on X'X: {e}") from e
    factors = np.sqrt(t_len) * vecs[:, :k]
    loadings = x @ factors / t_len
    eigenvalues = np.maximum(vals[:k], 0.0) / (p * t_len)
    loadings_pinv = np.linalg.pinv(loadings)
    return FactorEstimate(
        loadings=loadings,
        factors=factors,
        eigenvalues=eigenvalues,
        loadings_pinv=loadings_pinv,
    )


def estimated_factors_known_loadings(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Recover factor values by least squares given known loadings.

    Returns the ``T x K`` matrix whose row ``t`` is ``(B'B)^{-1} B' x[:, t]``.
    """
    x = np.asarray(x, dtype=float)
    b = np.asarray(b, dtype=float)
    if x.shape[0] != b.shape[0]:
        raise ValueError(f"x has {x.shape[0]} series but loadings have {b.shape[0]} rows")
    if np.linalg.matrix_rank(b) < b.shape[1]:
        raise ValueError("rank-deficient loadings: B'B is not invertible")
    return np.linalg.solve(b.T @ b, b.T @ x).T


def residuals(x: np.ndarray, fit: FactorEstimate) -> np.ndarray:
    """Return ``x - B F'`` for a fitted factor model."""
    x = np.asarray(x, dtype=float)
    p, t_len = fit.loadings.shape[0], fit.factors.shape[0]
    if x.shape != (p, t_len):
        raise ValueError(f"x has shape {x.shape}, fit expects ({p}, {t_len})")
    return x - fit.loadings @ fit.factors.T


def bai_ng_penalty(p: int, t_len: int) -> float:
    """Penalty per factor: ``(p+T)/(pT) * log(pT/(p+T))``."""
    return (p + t_len) / (p * t_len) * np.log(p * t_len / (p + t_len))


_PENALTIES: dict[str, Callable[[int, int], float]] = {"bai-ng": bai_ng_penalty}

#: residual sums of squares are floored here before taking logs, so that
#: exactly-recovered panels yield a finite criterion
RESIDUAL_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class NumFactorsSelection:
    """Result of the factor-count criterion: chosen order and its trace."""

    k_hat: int
    k_max: int
    log_resid: np.ndarray  # length k_max + 1, entry K is the log residual term
    penalties: np.ndarray  # length k_max + 1, entry K is K * g(p, T)
    penalty: str = "bai-ng"

    @property
    def criterion(self) -> np.ndarray:
        return self.log_resid + self.penalties


def select_num_factors(
    x: np.ndarray, k_max: int, penalty: str | Callable[[int, int], float] = "bai-ng"
) -> NumFactorsSelection:
    """Choose the number of factors minimizing penalized log residual variance.

    Evaluates ``log((pT)^{-1} ||X - B_K F_K'||_F^2) + K g(p, T)`` for
    ``K = 0..k_max`` (the ``K=0`` term is the log of the total mean square)
    and returns the minimizer, ties broken toward smaller ``K``.  Eigenvalues
    below numerical rank tolerance count as exact zeros so that noiseless
    low-rank panels hit the residual floor at their true rank.
    """
    x = np.asarray(x, dtype=float)
    p, t_len = x.shape
    if not 0 < k_max <= min(p, t_len):
        raise ValueError(f"k_max={k_max} out of range 1..min(p={p}, T={t_len})")
    if callable(penalty):
        g = penalty(p, t_len)
        tag = getattr(penalty, "__name__", "custom")
    else:
        try:
            g = _PENALTIES[penalty](p, t_len)
        except KeyError:
            raise ValueError(f"unknown penalty tag {penalty!r}") from None
        tag = penalty
    gram = x @ x.T if p <= t_len else x.T @ x
    vals = np.linalg.eigvalsh(gram)[::-1]
    tol = vals[0] * max(p, t_len) * np.finfo(float).eps if vals[0] > 0 else 0.0
    vals = np.where(vals > tol, vals, 0.0)
    total = vals.sum()
    ss = total - np.concatenate(([0.0], np.cumsum(vals[:k_max])))
    ss = np.maximum(ss, RESIDUAL_FLOOR)
    log_resid = np.log(ss) - np.log(p * t_len)
    penalties = g * np.arange(k_max + 1, dtype=float)
    k_hat = int(np.argmin(log_resid + penalties))
    return NumFactorsSelection(
        k_hat=k_hat, k_max=k_max, log_resid=log_resid, penalties=penalties, penalty=tag
    )


def save_factor_estimate(fit: FactorEstimate, out_dir: str | Path) -> None:
    """Dump a factor estimate as CSV matrices for inspection and golden tests."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_matrix(out / "loadings.csv", fit.loadings)
    _write_matrix(out / "factors.csv", fit.factors)
    _write_matrix(out / "eigenvalues.csv", fit.eigenvalues[:, None])


def _write_matrix(path: Path, m: np.ndarray) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in np.atleast_2d(m):
        writer.writerow([repr(float(v)) for v in row])
    path.write_text(buf.getvalue())
