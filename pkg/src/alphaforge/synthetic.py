"""Synthetic bar panels with a planted predictive signal.

Used for desk-scale experiments where real market data is unavailable: the
target is a noisy monotone function of a known formula, with the noise level
calibrated so the formula's daily IC lands near a chosen value.
"""
from __future__ import annotations

import datetime as dt

import numpy as np

from alphaforge import dsl, ops
from alphaforge.panel import FeaturePanel, TargetPanel
from alphaforge.pool import zscore_daily


def business_days(start: str, count: int) -> tuple[str, ...]:
    day = dt.date.fromisoformat(start)
    out = []
    while len(out) < count:
        if day.weekday() < 5:
            out.append(day.isoformat())
        day += dt.timedelta(days=1)
    return tuple(out)


def make_panel(n_stocks: int = 50, n_days: int = 300, seed: int = 0,
               start: str = "2016-01-04", listing_gaps: bool = False) -> FeaturePanel:
    rng = np.random.default_rng(seed)
    n, T = n_stocks, n_days
    vol = rng.uniform(0.01, 0.03, size=(n, 1))
    close = 20 * rng.lognormal(0, 0.5, size=(n, 1)) * np.exp(np.cumsum(rng.normal(0, 1, (n, T)) * vol, axis=1))
    open_ = close * np.exp(rng.normal(0, 0.005, (n, T)))
    high = np.maximum(open_, close) * np.exp(np.abs(rng.normal(0, 0.007, (n, T))))
    low = np.minimum(open_, close) * np.exp(-np.abs(rng.normal(0, 0.007, (n, T))))
    vwap = (open_ + high + low + close) / 4
    volume = np.round(rng.lognormal(12, 0.6, (n, 1)) * rng.lognormal(0, 0.3, (n, T)))
    values = np.stack([open_, close, high, low, volume, vwap], axis=-1)
    mask = np.ones((n, T), dtype=bool)
    if listing_gaps:
        late = rng.random(n) < 0.2
        for i in np.flatnonzero(late):
            mask[i, : rng.integers(1, T // 4)] = False
    values = np.where(mask[..., None], values, np.nan)
    tickers = tuple(f"SYN{i:04d}" for i in range(n))
    return FeaturePanel(values, mask, business_days(start, T), tickers)


def planted_target(panel: FeaturePanel, formula: str = "Delta(close, 5)", ic: float = 0.6,
                   seed: int = 0, horizon: int = 20) -> TargetPanel:
    """Target = tanh(zscore(formula)) + calibrated Gaussian noise.

    ``horizon`` only labels the result; the planted relation is same-day.
    """
    rng = np.random.default_rng(seed)
    x = zscore_daily(ops.evaluate(dsl.parse(formula), panel).values)
    g = np.tanh(x)
    ok = np.isfinite(g)
    c = np.corrcoef(x[ok], g[ok])[0, 1]
    sigma = np.sqrt(np.var(g[ok]) * max(c * c / (ic * ic) - 1.0, 0.0))
    y = g + sigma * rng.normal(size=g.shape)
    return TargetPanel(np.where(ok, y, np.nan), horizon)


def write_csv(panel: FeaturePanel, path) -> None:
    """Dump ``panel`` in the ingest CSV layout (one row per listed cell)."""
    with open(path, "w") as fh:
        fh.write("date,ticker," + ",".join(panel.feature_names) + "\n")
        for t, date in enumerate(panel.dates):
            for i, ticker in enumerate(panel.tickers):
                if panel.mask[i, t]:
                    vals = ",".join(repr(float(v)) for v in panel.values[i, t])
                    fh.write(f"{date},{ticker},{vals}\n")
