"""Vector ARMA forecaster fit by the Hannan-Rissanen two-stage procedure.

Stage 1 fits a long VAR by ordinary least squares to estimate the
innovation series; stage 2 regresses each observation on p lags of the
series and q lags of the estimated innovations. Forecasting sets future
innovations to zero (conditional expectation).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InsufficientData, ShortHistory, SingularDesign


@dataclass
class VarmaModel:
    p: int
    q: int
    intercept: np.ndarray   # [k]
    ar: np.ndarray          # [p, k, k]; ar[i] multiplies y_{t-1-i}
    ma: np.ndarray          # [q, k, k]; ma[i] multiplies eps_{t-1-i}
    residual_tail: np.ndarray  # [q, k] most recent in-sample innovations (last row = newest)

    @property
    def k(self) -> int:
        return self.intercept.shape[0]

    def companion_matrix(self) -> np.ndarray:
        """AR companion matrix [pk, pk] for stability analysis."""
        k, p = self.k, self.p
        comp = np.zeros((p * k, p * k))
        for i in range(p):
            comp[:k, i * k : (i + 1) * k] = self.ar[i]
        if p > 1:
            comp[k:, : (p - 1) * k] = np.eye((p - 1) * k)
        return comp

    def unconditional_mean(self) -> np.ndarray:
        return np.linalg.solve(np.eye(self.k) - self.ar.sum(axis=0), self.intercept)

    def to_json(self) -> str:
        return json.dumps(
            {
                "p": self.p,
                "q": self.q,
                "intercept": self.intercept.tolist(),
                "ar": self.ar.tolist(),
                "ma": self.ma.tolist(),
                "residual_tail": self.residual_tail.tolist(),
            },
            sort_keys=True,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "VarmaModel":
        d = json.loads(text)
        return cls(
            p=d["p"],
            q=d["q"],
            intercept=np.asarray(d["intercept"]),
            ar=np.asarray(d["ar"]),
            ma=np.asarray(d["ma"]),
            residual_tail=np.asarray(d["residual_tail"]),
        )

    @classmethod
    def load(cls, path: str | Path) -> "VarmaModel":
        return cls.from_json(Path(path).read_text())


def _ols(X: np.ndarray, Y: np.ndarray, what: str) -> np.ndarray:
    coef, _, rank, _ = np.linalg.lstsq(X, Y, rcond=None)
    if rank < X.shape[1]:
        raise SingularDesign(
            f"rank-deficient {what} regression (rank {rank} < {X.shape[1]}); "
            "constant channels should be dropped by the caller"
        )
    return coef


def fit(series: np.ndarray, p: int = 6, q: int = 2) -> VarmaModel:
    """Fit a VARMA(p, q) to a [T, k] matrix (normalized scale expected)."""
    y = np.asarray(series, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError("series must be [T, k]")
    T, k = y.shape
    if T <= max(p, q) + p * k + q * k + 10:
        raise InsufficientData(
            f"need more than {max(p, q) + p * k + q * k + 10} rows, have {T}"
        )

    # stage 1: long VAR to estimate innovations
    h = max(p, q) + 2
    X1 = _lagged_design(y, h)
    Y1 = y[h:]
    coef1 = _ols(X1, Y1, "stage-1 VAR")
    resid = np.zeros_like(y)
    resid[h:] = Y1 - X1 @ coef1

    # stage 2: regress on p lags of y and q lags of the innovations
    start = max(p, q, h)
    rows = T - start
    X2 = np.empty((rows, 1 + p * k + q * k))
    X2[:, 0] = 1.0
    for i in range(p):
        X2[:, 1 + i * k : 1 + (i + 1) * k] = y[start - 1 - i : T - 1 - i]
    for i in range(q):
        X2[:, 1 + p * k + i * k : 1 + p * k + (i + 1) * k] = resid[start - 1 - i : T - 1 - i]
    Y2 = y[start:]
    coef2 = _ols(X2, Y2, "stage-2 VARMA")

    intercept = coef2[0]
    ar = (
        np.stack([coef2[1 + i * k : 1 + (i + 1) * k].T for i in range(p)])
        if p > 0
        else np.zeros((0, k, k))
    )
    ma = (
        np.stack([coef2[1 + p * k + i * k : 1 + p * k + (i + 1) * k].T for i in range(q)])
        if q > 0
        else np.zeros((0, k, k))
    )
    tail = resid[T - q :] if q > 0 else np.zeros((0, k))
    return VarmaModel(p=p, q=q, intercept=intercept, ar=ar, ma=ma, residual_tail=tail.copy())


def _lagged_design(y: np.ndarray, lags: int) -> np.ndarray:
    T, k = y.shape
    X = np.empty((T - lags, 1 + lags * k))
    X[:, 0] = 1.0
    for i in range(lags):
        X[:, 1 + i * k : 1 + (i + 1) * k] = y[lags - 1 - i : T - 1 - i]
    return X


def forecast(model: VarmaModel, history: np.ndarray, m: int,
             residual_history: np.ndarray | None = None) -> np.ndarray:
    """Iterated m-step forecast from the end of `history` [>=p, k].

    Future innovations are zero; past innovations default to the fitted
    in-sample tail (appropriate when history is the training tail).
    """
    hist = np.asarray(history, dtype=np.float64)
    if hist.ndim != 2 or hist.shape[0] < model.p:
        raise ShortHistory(f"need at least {model.p} history rows")
    k = model.k
    resid = (
        np.asarray(residual_history, dtype=np.float64)
        if residual_history is not None
        else model.residual_tail
    )
    ys = [hist[-i] for i in range(1, model.p + 1)]        # newest first
    eps = [resid[-i] if len(resid) >= i else np.zeros(k)  # newest first
           for i in range(1, model.q + 1)]
    out = np.empty((m, k))
    for t in range(m):
        pred = model.intercept.copy()
        for i in range(model.p):
            pred += model.ar[i] @ ys[i]
        for i in range(model.q):
            pred += model.ma[i] @ eps[i]
        out[t] = pred
        ys = [pred] + ys[: model.p - 1]
        if model.q > 0:
            eps = [np.zeros(k)] + eps[: model.q - 1]
    return out
