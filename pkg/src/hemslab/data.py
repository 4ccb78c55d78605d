"""Multi-channel energy time series: ingestion, resampling, normalization,
chronological splitting and sliding-window extraction.

All containers are immutable after construction; every operation returns a
new object. Timestamps are UTC epoch seconds with a constant period.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import (
    ChannelMismatch,
    EmptyPartition,
    FrameTooShort,
    IncompatiblePeriod,
    InconsistentPeriod,
    MissingColumn,
    NonMonotonicTimestamps,
)

WINDOW_CACHE_SCHEMA = "hemslab-windows-v1"

CHANNEL_KINDS = ("load", "pv", "total")


@dataclass(frozen=True)
class ChannelDesc:
    name: str
    kind: str = "load"  # one of CHANNEL_KINDS
    unit: str = "W"

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")


@dataclass(frozen=True)
class SeriesFrame:
    """Aligned multi-channel power series with constant sampling period."""

    channels: tuple[ChannelDesc, ...]
    timestamps: np.ndarray  # int64 epoch seconds, strictly increasing
    values: np.ndarray      # [num_steps, num_channels] float64 watts
    imputed: np.ndarray     # bool mask, True where a value was filled in

    def __post_init__(self):
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise ValueError("duplicate channel names")
        if self.values.shape != (len(self.timestamps), len(self.channels)):
            raise ValueError("values shape inconsistent with timestamps/channels")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite values in frame")

    @property
    def period(self) -> int:
        """Sampling period in seconds."""
        return int(self.timestamps[1] - self.timestamps[0])

    @property
    def num_steps(self) -> int:
        return len(self.timestamps)

    @property
    def channel_names(self) -> list[str]:
        return [c.name for c in self.channels]

    def channel_index(self, name: str) -> int:
        try:
            return self.channel_names.index(name)
        except ValueError:
            raise ChannelMismatch(f"no channel named {name!r}") from None


@dataclass(frozen=True)
class NormalizationParams:
    """Per-channel min/max fitted on the training partition only."""

    channel_names: tuple[str, ...]
    vmin: np.ndarray  # [C]
    vmax: np.ndarray  # [C]

    def __post_init__(self):
        if np.any(self.vmax < self.vmin):
            raise ValueError("max < min in normalization params")

    @property
    def constant(self) -> np.ndarray:
        return self.vmax == self.vmin

    @property
    def span(self) -> np.ndarray:
        return np.where(self.constant, 1.0, self.vmax - self.vmin)

    def to_dict(self) -> dict:
        return {
            "channel_names": list(self.channel_names),
            "vmin": self.vmin.tolist(),
            "vmax": self.vmax.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationParams":
        return cls(
            channel_names=tuple(d["channel_names"]),
            vmin=np.asarray(d["vmin"], dtype=np.float64),
            vmax=np.asarray(d["vmax"], dtype=np.float64),
        )


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/validation/test proportions."""

    train_frac: float = 0.7
    val_frac: float = 0.2
    test_frac: float = 0.1

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(not (0.0 <= f <= 1.0) for f in fracs) or self.train_frac == 0.0:
            raise ValueError("split fractions must lie in [0, 1] with train > 0")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")

    def partition_lengths(self, num_steps: int) -> tuple[int, int, int]:
        """Floor rule: train and val floored, test takes the remainder."""
        train = int(math.floor(self.train_frac * num_steps))
        val = int(math.floor(self.val_frac * num_steps))
        return train, val, num_steps - train - val


@dataclass(frozen=True)
class WindowedDataset:
    """Supervised windows: n history steps in, m target steps out."""

    inputs: np.ndarray        # [W, n, C] normalized
    targets: np.ndarray       # [W, m, C] normalized
    day_of_week: np.ndarray   # [W] int, Monday=0, of the first target step
    window_start: np.ndarray  # [W] index of the window's first step in the frame
    channel_names: tuple[str, ...]

    @property
    def num_windows(self) -> int:
        return self.inputs.shape[0]

    @property
    def history_len(self) -> int:
        return self.inputs.shape[1]

    @property
    def horizon_len(self) -> int:
        return self.targets.shape[1]

    def save(self, path: str | Path) -> None:
        np.savez_compressed(
            path,
            schema=np.array(WINDOW_CACHE_SCHEMA),
            inputs=self.inputs,
            targets=self.targets,
            day_of_week=self.day_of_week,
            window_start=self.window_start,
            channel_names=np.array(self.channel_names),
        )

    @classmethod
    def load(cls, path: str | Path) -> "WindowedDataset":
        with np.load(path, allow_pickle=False) as z:
            schema = str(z["schema"])
            if schema != WINDOW_CACHE_SCHEMA:
                raise ValueError(f"unsupported window cache schema {schema!r}")
            return cls(
                inputs=z["inputs"],
                targets=z["targets"],
                day_of_week=z["day_of_week"],
                window_start=z["window_start"],
                channel_names=tuple(str(s) for s in z["channel_names"]),
            )


def load_csv(path: str | Path, schema: list[ChannelDesc]) -> SeriesFrame:
    """Parse a CSV with a `timestamp` column plus one column per channel.

    Timestamps may be ISO-8601 or epoch seconds. Missing cells are
    forward-filled (leading gaps back-filled) and flagged in the imputed
    mask. Rows with unparseable values are rejected with their row numbers.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise MissingColumn(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header[0] != "timestamp":
            raise MissingColumn(f"{path}: first column must be 'timestamp'")
        col_of = {}
        for ch in schema:
            if ch.name not in header:
                raise MissingColumn(f"{path}: column {ch.name!r} not found")
            col_of[ch.name] = header.index(ch.name)

        times: list[int] = []
        rows: list[list[float]] = []
        missing: list[list[bool]] = []
        bad_rows: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                times.append(_parse_timestamp(row[0]))
                vals, miss = [], []
                for ch in schema:
                    cell = row[col_of[ch.name]].strip()
                    if cell == "" or cell.lower() in ("nan", "na"):
                        vals.append(np.nan)
                        miss.append(True)
                    else:
                        vals.append(float(cell))
                        miss.append(False)
                rows.append(vals)
                missing.append(miss)
            except (ValueError, IndexError):
                bad_rows.append(lineno)

    if bad_rows:
        raise ValueError(f"{path}: unparseable rows at lines {bad_rows}")
    if len(times) < 2:
        raise FrameTooShort(f"{path}: need at least 2 rows")

    ts = np.asarray(times, dtype=np.int64)
    diffs = np.diff(ts)
    if np.any(diffs <= 0):
        bad = int(np.argmax(diffs <= 0)) + 2
        raise NonMonotonicTimestamps(f"{path}: timestamps not increasing near row {bad}")
    delta = int(diffs[0])
    if np.any(np.abs(diffs - delta) > 0.01 * delta):
        raise InconsistentPeriod(f"{path}: spacing deviates from {delta}s by more than 1%")

    values = np.asarray(rows, dtype=np.float64)
    mask = np.asarray(missing, dtype=bool)
    values = _impute_forward_fill(values)
    # load / pv channels are physically nonnegative
    for j, ch in enumerate(schema):
        if ch.kind in ("load", "pv"):
            np.clip(values[:, j], 0.0, None, out=values[:, j])
    return SeriesFrame(tuple(schema), ts, values, mask)


def _parse_timestamp(text: str) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _impute_forward_fill(values: np.ndarray) -> np.ndarray:
    out = values.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nan = np.isnan(col)
        if not nan.any():
            continue
        if nan.all():
            col[:] = 0.0
            continue
        idx = np.where(~nan, np.arange(len(col)), -1)
        np.maximum.accumulate(idx, out=idx)
        # leading gap: back-fill from the first observed value
        first = int(np.argmax(~nan))
        idx[idx < 0] = first
        out[:, j] = col[idx]
    return out


def resample_mean(frame: SeriesFrame, target_period: int) -> SeriesFrame:
    """Downsample by averaging k consecutive samples; trailing partial
    bucket is dropped."""
    delta = frame.period
    if target_period % delta != 0 or target_period < delta:
        raise IncompatiblePeriod(
            f"target period {target_period}s is not a multiple of {delta}s"
        )
    k = target_period // delta
    n_out = frame.num_steps // k
    if n_out < 1:
        raise FrameTooShort("frame shorter than one resample bucket")
    kept = frame.values[: n_out * k]
    vals = kept.reshape(n_out, k, -1).mean(axis=1)
    mask = frame.imputed[: n_out * k].reshape(n_out, k, -1).any(axis=1)
    ts = frame.timestamps[: n_out * k : k]
    return SeriesFrame(frame.channels, ts.copy(), vals, mask)


def fit_normalization(frame: SeriesFrame, partition: np.ndarray) -> NormalizationParams:
    """Per-channel min/max over the given (training) row indices only."""
    partition = np.asarray(partition)
    if partition.size == 0:
        raise EmptyPartition("cannot fit normalization on an empty partition")
    sub = frame.values[partition]
    return NormalizationParams(
        channel_names=tuple(frame.channel_names),
        vmin=sub.min(axis=0),
        vmax=sub.max(axis=0),
    )


# values outside the fitted range (possible on val/test) are clamped here
NORM_CLAMP_LO = -0.5
NORM_CLAMP_HI = 1.5


def normalize(frame: SeriesFrame, params: NormalizationParams) -> SeriesFrame:
    if tuple(frame.channel_names) != params.channel_names:
        raise ChannelMismatch("frame channels do not match normalization params")
    scaled = (frame.values - params.vmin) / params.span
    scaled = np.where(params.constant, 0.0, scaled)
    scaled = np.clip(scaled, NORM_CLAMP_LO, NORM_CLAMP_HI)
    return SeriesFrame(frame.channels, frame.timestamps, scaled, frame.imputed)


def denormalize(frame: SeriesFrame, params: NormalizationParams) -> SeriesFrame:
    if tuple(frame.channel_names) != params.channel_names:
        raise ChannelMismatch("frame channels do not match normalization params")
    vals = frame.values * params.span + params.vmin
    vals = np.where(params.constant, params.vmin, vals)
    return SeriesFrame(frame.channels, frame.timestamps, vals, frame.imputed)


def denormalize_values(values: np.ndarray, params: NormalizationParams) -> np.ndarray:
    """Map normalized values (last axis = channels) back to watts."""
    return np.where(params.constant, params.vmin, values * params.span + params.vmin)


def normalize_values(values: np.ndarray, params: NormalizationParams) -> np.ndarray:
    scaled = (values - params.vmin) / params.span
    scaled = np.where(params.constant, 0.0, scaled)
    return np.clip(scaled, NORM_CLAMP_LO, NORM_CLAMP_HI)


def day_of_week(epoch_seconds: int) -> int:
    """UTC day of week, Monday=0."""
    return datetime.fromtimestamp(int(epoch_seconds), tz=timezone.utc).weekday()


def make_windows(
    frame: SeriesFrame, n: int, m: int, split: SplitSpec
) -> tuple[WindowedDataset, WindowedDataset, WindowedDataset]:
    """Stride-1 sliding windows inside each chronological partition.

    A window occupies n+m consecutive steps and never straddles a
    partition boundary. The frame should already be normalized.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    if frame.num_steps < n + m:
        raise FrameTooShort(f"need at least {n + m} steps, have {frame.num_steps}")
    lens = split.partition_lengths(frame.num_steps)
    out = []
    offset = 0
    for plen in lens:
        out.append(_windows_of_range(frame, offset, offset + plen, n, m))
        offset += plen
    return tuple(out)  # type: ignore[return-value]


def _windows_of_range(frame: SeriesFrame, lo: int, hi: int, n: int, m: int) -> WindowedDataset:
    count = max(0, (hi - lo) - n - m + 1)
    C = len(frame.channels)
    inputs = np.empty((count, n, C))
    targets = np.empty((count, m, C))
    dows = np.empty(count, dtype=np.int64)
    starts = np.empty(count, dtype=np.int64)
    for w in range(count):
        s = lo + w
        inputs[w] = frame.values[s : s + n]
        targets[w] = frame.values[s + n : s + n + m]
        dows[w] = day_of_week(frame.timestamps[s + n])
        starts[w] = s
    return WindowedDataset(inputs, targets, dows, starts, tuple(frame.channel_names))


def partition_indices(split: SplitSpec, num_steps: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row index arrays for the three chronological partitions."""
    train, val, test = split.partition_lengths(num_steps)
    return (
        np.arange(0, train),
        np.arange(train, train + val),
        np.arange(train + val, num_steps),
    )


def write_csv(frame: SeriesFrame, path: str | Path) -> None:
    """Inverse of load_csv for round-tripping frames (timestamps as epoch)."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp"] + frame.channel_names)
        for i in range(frame.num_steps):
            writer.writerow(
                [int(frame.timestamps[i])]
                + [format(v, ".10g") for v in frame.values[i]]
            )
