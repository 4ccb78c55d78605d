"""Forecast error measures: RMSE, range-normalized RMSE and weighted MAPE."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateRange, EmptySeries, LengthMismatch, ZeroDenominator


def _check_pair(actual, predicted) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(actual, dtype=np.float64).ravel()
    p = np.asarray(predicted, dtype=np.float64).ravel()
    if a.size == 0:
        raise EmptySeries("empty input")
    if a.size != p.size:
        raise LengthMismatch(f"lengths differ: {a.size} vs {p.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(p))):
        raise ValueError("non-finite values")
    return a, p


def rmse(actual, predicted) -> float:
    a, p = _check_pair(actual, predicted)
    return float(np.sqrt(np.mean((a - p) ** 2)))


def nrmse(actual, predicted, channel_range: tuple[float, float]) -> float:
    lo, hi = channel_range
    if hi <= lo:
        raise DegenerateRange(f"max ({hi}) must exceed min ({lo})")
    return rmse(actual, predicted) / (hi - lo)


def wmape(actual, predicted) -> float:
    a, p = _check_pair(actual, predicted)
    denom = np.sum(np.abs(a))
    if denom == 0.0:
        raise ZeroDenominator("all actual values are zero")
    return float(np.sum(np.abs(a - p)) / denom)


@dataclass(frozen=True)
class MetricReport:
    """Per-channel error table for one forecaster."""

    channel_names: tuple[str, ...]
    rmse: tuple[float, ...]
    nrmse: tuple[float, ...]
    wmape: tuple[float, ...]
    num_points: int

    def __post_init__(self):
        if self.num_points < 1:
            raise ValueError("num_points must be >= 1")

    @classmethod
    def compute(
        cls,
        channel_names,
        actual: np.ndarray,      # [..., C] watts
        predicted: np.ndarray,   # [..., C] watts
        ranges: list[tuple[float, float]],
    ) -> "MetricReport":
        C = len(channel_names)
        a = np.asarray(actual, dtype=np.float64).reshape(-1, C)
        p = np.asarray(predicted, dtype=np.float64).reshape(-1, C)
        # channels that are degenerate on this slice (all-zero actuals or a
        # flat range) report NaN instead of aborting the whole table
        nr, wm = [], []
        for j in range(C):
            try:
                nr.append(nrmse(a[:, j], p[:, j], ranges[j]))
            except DegenerateRange:
                nr.append(float("nan"))
            try:
                wm.append(wmape(a[:, j], p[:, j]))
            except ZeroDenominator:
                wm.append(float("nan"))
        return cls(
            channel_names=tuple(channel_names),
            rmse=tuple(rmse(a[:, j], p[:, j]) for j in range(C)),
            nrmse=tuple(nr),
            wmape=tuple(wm),
            num_points=a.shape[0],
        )

    def to_csv(self, path: str | Path) -> None:
        lines = ["channel,rmse,nrmse,wmape,n"]
        for j, name in enumerate(self.channel_names):
            lines.append(
                f"{name},{self.rmse[j]:.12g},{self.nrmse[j]:.12g},"
                f"{self.wmape[j]:.12g},{self.num_points}"
            )
        Path(path).write_text("\n".join(lines) + "\n")

    def to_json(self) -> str:
        return json.dumps(
            {
                "channels": list(self.channel_names),
                "rmse": list(self.rmse),
                "nrmse": list(self.nrmse),
                "wmape": list(self.wmape),
                "n": self.num_points,
            },
            sort_keys=True,
        )
