"""ETT-style CSV ingestion, chronological splits, scaling and windowing."""

from __future__ import annotations

import calendar
import csv
from dataclasses import dataclass
from datetime import datetime, timedelta
import logging
import math

import numpy as np

from .errors import DataError, ParseError

log = logging.getLogger(__name__)

ETT_COLUMNS = ("HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL", "OT")


@dataclass(frozen=True)
class RawSeries:
    timestamps: tuple
    values: np.ndarray
    columns: tuple

    def __len__(self):
        return self.values.shape[0]

    def slice(self, start, stop) -> "RawSeries":
        return RawSeries(self.timestamps[start:stop], self.values[start:stop], self.columns)


@dataclass(frozen=True)
class ForecastWindow:
    encoder_input: np.ndarray
    decoder_seed: np.ndarray
    target: np.ndarray
    start: int


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values) -> "Scaler":
        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] == 0:
            raise DataError("cannot fit a scaler on an empty split")
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        constant = std == 0
        if constant.any():
            log.warning("constant columns %s: using std = 1", np.nonzero(constant)[0].tolist())
            std = np.where(constant, 1.0, std)
        return cls(mean, std)

    def transform(self, values):
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def inverse_transform(self, values):
        return np.asarray(values, dtype=np.float64) * self.std + self.mean


def _parse_time(text: str, line: int) -> datetime:
    try:
        return datetime.fromisoformat(text.strip())
    except ValueError:
        raise ParseError(f"unparseable timestamp {text!r}", line) from None


def load_csv(path) -> RawSeries:
    """Read ``date,<feature>,...`` with a header row.

    Line numbers in errors count the header as line 1.  Empty cells are
    rejected rather than imputed.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        if len(header) < 2:
            raise ParseError("need a timestamp column and at least one feature", 1)
        columns = tuple(h.strip() for h in header[1:])
        stamps, rows = [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", line)
            ts = _parse_time(row[0], line)
            if stamps and ts <= stamps[-1]:
                raise ParseError("timestamps must be strictly increasing", line)
            vals = []
            for cell in row[1:]:
                cell = cell.strip()
                if not cell:
                    raise ParseError("missing value", line)
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"non-numeric value {cell!r}", line) from None
                if not math.isfinite(v):
                    raise ParseError(f"non-finite value {cell!r}", line)
                vals.append(v)
            stamps.append(ts)
            rows.append(vals)
    values = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(columns))
    return RawSeries(tuple(stamps), values, columns)


def write_csv(path, series: RawSeries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("date",) + tuple(series.columns))
        for ts, row in zip(series.timestamps, series.values):
            w.writerow([ts.strftime("%Y-%m-%d %H:%M:%S")] + [repr(float(v)) for v in row])


def _add_months(ts: datetime, months: int) -> datetime:
    month = ts.month - 1 + months
    year = ts.year + month // 12
    month = month % 12 + 1
    day = min(ts.day, calendar.monthrange(year, month)[1])
    return ts.replace(year=year, month=month, day=day)


def split_bounds(series: RawSeries, ratios=None, months=None) -> tuple:
    """Row boundaries ``(train_end, val_end, test_end)`` of a chronological split.

    ``ratios`` is ``(train, val, test)`` fractions; the test part takes the
    remainder.  ``months`` is ``(train, val, test)`` calendar months counted
    from the first timestamp.
    """
    n = len(series)
    if (ratios is None) == (months is None):
        raise DataError("give exactly one of ratios or months")
    if ratios is not None:
        r_train, r_val, _ = ratios
        a = int(round(n * r_train))
        b = a + int(round(n * r_val))
    else:
        m_train, m_val, m_test = months
        t0 = series.timestamps[0]
        edges = [_add_months(t0, m_train), _add_months(t0, m_train + m_val),
                 _add_months(t0, m_train + m_val + m_test)]
        stamps = np.array(series.timestamps, dtype="datetime64[us]")
        a, b, c = (int(np.searchsorted(stamps, np.datetime64(e, "us"))) for e in edges)
        n = c
    if not 0 < a < b < n:
        raise DataError(f"split boundaries {(a, b, n)} leave an empty segment")
    return a, b, n


def split(series: RawSeries, ratios=None, months=None):
    a, b, n = split_bounds(series, ratios, months)
    return series.slice(0, a), series.slice(a, b), series.slice(b, n)


def standardize(series: RawSeries, scaler: Scaler) -> RawSeries:
    return RawSeries(series.timestamps, scaler.transform(series.values), series.columns)


def n_windows(length: int, seq_len: int, pred_len: int, stride: int = 1) -> int:
    if length < seq_len + pred_len:
        return 0
    return (length - seq_len - pred_len) // stride + 1


def windows(values, seq_len: int, label_len: int, pred_len: int, stride: int = 1) -> list:
    """Sliding windows over a ``(T, D)`` array (or :class:`RawSeries`).

    The decoder seed is the last ``label_len`` rows of the encoder input and
    the target the ``pred_len`` rows right after it.
    """
    if isinstance(values, RawSeries):
        values = values.values
    values = np.asarray(values, dtype=np.float64)
    if label_len > seq_len:
        raise DataError("label_len cannot exceed seq_len")
    count = n_windows(values.shape[0], seq_len, pred_len, stride)
    if count == 0:
        raise DataError(f"series of length {values.shape[0]} too short for {seq_len}+{pred_len}")
    out = []
    for k in range(0, count * stride, stride):
        enc = values[k:k + seq_len]
        out.append(ForecastWindow(enc, enc[seq_len - label_len:], values[k + seq_len:k + seq_len + pred_len], k))
    return out


def stack_windows(ws) -> tuple:
    """``(encoder_inputs, decoder_seeds, targets)`` as stacked arrays."""
    if not ws:
        raise DataError("no windows")
    return (np.stack([w.encoder_input for w in ws]), np.stack([w.decoder_seed for w in ws]),
            np.stack([w.target for w in ws]))


@dataclass(frozen=True)
class Dataset:
    """Standardized train/val/test series plus the train-only scaler."""

    name: str
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    scaler: Scaler
    columns: tuple


def prepare(series: RawSeries, name="data", ratios=(0.7, 0.1, 0.2), months=None, seq_len=0) -> Dataset:
    """Split, fit the scaler on train only, and standardize every split.

    Validation and test segments are extended backwards by ``seq_len`` rows
    so their first window can start at the split boundary.
    """
    if months is not None:
        a, b, n = split_bounds(series, months=months)
    else:
        a, b, n = split_bounds(series, ratios=ratios)
    scaler = Scaler.fit(series.values[:a])
    z = scaler.transform(series.values[:n])
    return Dataset(name, z[:a], z[max(a - seq_len, 0):b], z[max(b - seq_len, 0):n], scaler, series.columns)


def synthetic_ett(n_rows: int = 2000, seed: int = 0, start="2016-07-01 00:00:00") -> RawSeries:
    """Hourly series with the ETTh1 column layout.

    Each load column mixes a shared daily and weekly cycle with its own AR(1)
    noise; ``OT`` (oil temperature) is a lagged smooth combination of the
    loads.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_rows)
    daily = np.sin(2 * np.pi * t / 24)
    daily2 = np.cos(2 * np.pi * t / 12)
    weekly = np.sin(2 * np.pi * t / 168)
    loads = np.empty((n_rows, 6))
    for c in range(6):
        amp = rng.uniform(0.5, 2.0, size=3)
        phase = rng.uniform(0, 2 * np.pi)
        noise = np.zeros(n_rows)
        eps = rng.normal(scale=0.3, size=n_rows)
        for i in range(1, n_rows):
            noise[i] = 0.8 * noise[i - 1] + eps[i]
        loads[:, c] = (amp[0] * np.sin(2 * np.pi * t / 24 + phase) + amp[1] * daily2 * (c % 2)
                       + amp[2] * weekly + 0.3 * daily + noise + 5 * rng.uniform())
    ot = np.zeros(n_rows)
    drive = loads.mean(axis=1)
    for i in range(1, n_rows):
        ot[i] = 0.9 * ot[i - 1] + 0.1 * drive[i - 1] + rng.normal(scale=0.05)
    values = np.column_stack([loads, ot + 10.0])
    t0 = datetime.fromisoformat(start)
    stamps = tuple(t0 + timedelta(hours=int(i)) for i in t)
    return RawSeries(stamps, values, ETT_COLUMNS)
