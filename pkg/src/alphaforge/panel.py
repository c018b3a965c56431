"""Stock panel ingestion, forward-return targets and date splits."""
from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

FEATURE_NAMES: tuple[str, ...] = ("open", "close", "high", "low", "volume", "vwap")
REQUIRED_COLUMNS: tuple[str, ...] = ("date", "ticker") + FEATURE_NAMES


class DataError(ValueError):
    """Input data violates the ingest or split contract."""


@dataclass(frozen=True, eq=False)
class FeaturePanel:
    values: np.ndarray                 # (stock, day, feature)
    mask: np.ndarray                   # (stock, day) bool
    dates: tuple[str, ...]
    tickers: tuple[str, ...]
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self) -> None:
        n, t, m = self.values.shape
        if self.mask.shape != (n, t):
            raise DataError("mask shape does not match values")
        if len(self.dates) != t or len(self.tickers) != n or m != len(self.feature_names):
            raise DataError("axis labels do not match values")
        if any(a >= b for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("dates must be strictly increasing")
        if len(set(self.tickers)) != n:
            raise DataError("duplicate tickers")
        self.values.setflags(write=False)
        self.mask.setflags(write=False)

    @property
    def n_stocks(self) -> int:
        return self.values.shape[0]

    @property
    def n_days(self) -> int:
        return self.values.shape[1]

    def feature(self, name: str) -> np.ndarray:
        return self.values[:, :, self.feature_names.index(name)]

    @cached_property
    def obs_index(self) -> np.ndarray:
        """Per-stock ordinal of each listed day (-1 on masked cells)."""
        pos = np.cumsum(self.mask, axis=1) - 1
        return np.where(self.mask, pos, -1)

    def date_index(self, date: str) -> int:
        return self.dates.index(date)

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.mask, dtype=np.uint8).tobytes())
        h.update(json.dumps([self.dates, self.tickers, self.feature_names]).encode())
        return h.hexdigest()

    def save(self, path: str | Path) -> str:
        path = Path(path)
        with open(path, "wb") as fh:
            np.savez(fh, values=self.values, mask=self.mask,
                     dates=np.array(self.dates), tickers=np.array(self.tickers))
        return self.checksum()

    @classmethod
    def load(cls, path: str | Path) -> "FeaturePanel":
        with np.load(path, allow_pickle=False) as z:
            return cls(z["values"].copy(), z["mask"].copy(),
                       tuple(str(d) for d in z["dates"]), tuple(str(t) for t in z["tickers"]))


@dataclass(frozen=True, eq=False)
class TargetPanel:
    returns: np.ndarray                # (stock, day), NaN where undefined
    horizon: int = 20

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise DataError("horizon must be a positive number of days")


def ingest_csv(path: str | Path, schema: Mapping[str, str] | None = None) -> FeaturePanel:
    """Read daily bars into a rectangular panel.

    ``schema`` maps canonical column names (date, ticker, open, ...) to the
    header names used in the file.
    """
    colmap = {c: c for c in REQUIRED_COLUMNS}
    colmap.update(schema or {})
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")

    rows: dict[tuple[str, str], list[float]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in REQUIRED_COLUMNS if colmap[c] not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(colmap[c] for c in missing)}")
        idx = {c: header.index(colmap[c]) for c in REQUIRED_COLUMNS}
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            date = rec[idx["date"]].strip()
            ticker = rec[idx["ticker"]].strip()
            if not _is_iso_date(date):
                raise DataError(f"{path}:{lineno}: bad date {date!r}")
            if not ticker:
                raise DataError(f"{path}:{lineno}: empty ticker")
            vals = []
            for name in FEATURE_NAMES:
                raw = rec[idx[name]].strip()
                try:
                    v = float(raw)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: {name} is not a number: {raw!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}:{lineno}: {name} is not finite")
                vals.append(v)
            if vals[FEATURE_NAMES.index("volume")] < 0:
                raise DataError(f"{path}:{lineno}: negative volume")
            key = (date, ticker)
            if key in rows:
                raise DataError(f"{path}:{lineno}: duplicate row for {ticker} on {date}")
            rows[key] = vals
    if not rows:
        raise DataError(f"{path}: no data rows")

    dates = sorted({d for d, _ in rows})
    tickers = sorted({t for _, t in rows})
    d_idx = {d: i for i, d in enumerate(dates)}
    t_idx = {t: i for i, t in enumerate(tickers)}
    values = np.full((len(tickers), len(dates), len(FEATURE_NAMES)), np.nan)
    mask = np.zeros((len(tickers), len(dates)), dtype=bool)
    for (d, t), vals in rows.items():
        values[t_idx[t], d_idx[d]] = vals
        mask[t_idx[t], d_idx[d]] = True
    return FeaturePanel(values, mask, tuple(dates), tuple(tickers))


def _is_iso_date(text: str) -> bool:
    try:
        return dt.date.fromisoformat(text).isoformat() == text
    except ValueError:
        return False


def compute_targets(panel: FeaturePanel, horizon: int = 20) -> TargetPanel:
    """Forward return ``close[t + horizon] / close[t] - 1`` on the date axis."""
    if horizon < 1:
        raise DataError("horizon must be >= 1")
    if horizon >= panel.n_days:
        raise DataError(f"horizon {horizon} >= number of days {panel.n_days}")
    close = panel.feature("close")
    out = np.full(close.shape, np.nan)
    ok = panel.mask[:, :-horizon] & panel.mask[:, horizon:]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = close[:, horizon:] / close[:, :-horizon] - 1.0
    out[:, :-horizon] = np.where(ok & np.isfinite(r), r, np.nan)
    return TargetPanel(out, horizon)


@dataclass(frozen=True, eq=False)
class PanelView:
    """Day-range view of a parent panel.

    Factors are evaluated on the parent (so rolling windows keep their
    history) and then cut with :meth:`take`; targets likewise come from the
    parent and may look past the view's last day.
    """

    parent: FeaturePanel
    start: int
    stop: int
    name: str = ""

    @property
    def days(self) -> slice:
        return slice(self.start, self.stop)

    @property
    def n_days(self) -> int:
        return self.stop - self.start

    @property
    def dates(self) -> tuple[str, ...]:
        return self.parent.dates[self.start:self.stop]

    @property
    def tickers(self) -> tuple[str, ...]:
        return self.parent.tickers

    @property
    def mask(self) -> np.ndarray:
        return self.parent.mask[:, self.start:self.stop]

    def take(self, matrix: np.ndarray) -> np.ndarray:
        return matrix[:, self.start:self.stop]

    def materialize(self) -> FeaturePanel:
        p = self.parent
        return FeaturePanel(p.values[:, self.start:self.stop].copy(), self.mask.copy(),
                            self.dates, p.tickers)


DateRange = Sequence[str]


def view(panel: FeaturePanel, date_range: DateRange, name: str = "") -> PanelView:
    start, end = date_range
    if start > end:
        raise DataError(f"{name or 'range'}: start {start} after end {end}")
    if not panel.dates:
        raise DataError("empty panel")
    if start < panel.dates[0] or end > panel.dates[-1]:
        raise DataError(f"{name or 'range'} {start}..{end} outside panel span "
                        f"{panel.dates[0]}..{panel.dates[-1]}")
    lo = int(np.searchsorted(panel.dates, start, side="left"))
    hi = int(np.searchsorted(panel.dates, end, side="right"))
    if hi <= lo:
        raise DataError(f"{name or 'range'} {start}..{end} contains no trading days")
    return PanelView(panel, lo, hi, name)


def split(panel: FeaturePanel, train_range: DateRange, valid_range: DateRange,
          test_range: DateRange) -> tuple[PanelView, PanelView, PanelView]:
    ranges = {"train": tuple(train_range), "valid": tuple(valid_range), "test": tuple(test_range)}
    ordered = sorted(ranges.items(), key=lambda kv: kv[1][0])
    for (na, (_, a_end)), (nb, (b_start, _)) in zip(ordered, ordered[1:]):
        if b_start <= a_end:
            raise DataError(f"{na} and {nb} ranges overlap")
    views = tuple(view(panel, r, n) for n, r in ranges.items())
    return views  # type: ignore[return-value]
