"""Information coefficient metrics and the IC gradient with respect to
combination weights."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


class MetricsError(ValueError):
    pass


@dataclass
class ICReport:
    ic: float
    rank_ic: float
    daily_ic: np.ndarray        # one value per day, NaN on skipped days
    days_used: int

    def to_dict(self) -> dict:
        return {
            "ic": self.ic,
            "rank_ic": self.rank_ic,
            "days_used": self.days_used,
            "daily_ic": [None if np.isnan(v) else float(v) for v in self.daily_ic],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _as_array(m) -> np.ndarray:
    return np.asarray(getattr(m, "values", getattr(m, "returns", m)), dtype=np.float64)


def _daily_pearson(f: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-day Pearson over cells where both are finite; NaN on days with
    fewer than 2 pairs or a constant side."""
    valid = np.isfinite(f) & np.isfinite(y)
    cnt = valid.sum(axis=0)
    fz = np.where(valid, f, 0.0)
    yz = np.where(valid, y, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        fm = fz.sum(axis=0) / cnt
        ym = yz.sum(axis=0) / cnt
        fc = np.where(valid, f - fm, 0.0)
        yc = np.where(valid, y - ym, 0.0)
        r = (fc * yc).sum(axis=0) / np.sqrt((fc * fc).sum(axis=0) * (yc * yc).sum(axis=0))
    usable = (cnt >= 2) & ~_constant_days(f, valid) & ~_constant_days(y, valid)
    return np.where(usable, r, np.nan)


def _constant_days(x: np.ndarray, valid: np.ndarray) -> np.ndarray:
    hi = np.where(valid, x, -np.inf).max(axis=0)
    lo = np.where(valid, x, np.inf).min(axis=0)
    return hi == lo


def _daily_ranks(f: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    valid = np.isfinite(f) & np.isfinite(y)
    fr = rankdata(np.where(valid, f, np.nan), axis=0, nan_policy="omit")
    yr = rankdata(np.where(valid, y, np.nan), axis=0, nan_policy="omit")
    return fr, yr


def _mean_or_raise(daily: np.ndarray) -> tuple[float, int]:
    used = np.isfinite(daily)
    if not used.any():
        raise MetricsError("no overlapping valid data")
    return float(daily[used].mean()), int(used.sum())


def _check_shapes(f: np.ndarray, y: np.ndarray) -> None:
    if f.shape != y.shape:
        raise MetricsError(f"factor shape {f.shape} != target shape {y.shape}")


def ic(factor, target) -> ICReport:
    """Mean daily cross-sectional Pearson and Spearman correlation."""
    f, y = _as_array(factor), _as_array(target)
    _check_shapes(f, y)
    daily = _daily_pearson(f, y)
    mean_ic, used = _mean_or_raise(daily)
    return ICReport(mean_ic, rank_ic(f, y), daily, used)


def _daily_rank_ic(f: np.ndarray, y: np.ndarray) -> np.ndarray:
    fr, yr = _daily_ranks(f, y)
    # constant days are detected on the raw values, then skipped
    daily = _daily_pearson(fr, yr)
    valid = np.isfinite(f) & np.isfinite(y)
    return np.where(_constant_days(f, valid) | _constant_days(y, valid), np.nan, daily)


def rank_ic(factor, target) -> float:
    f, y = _as_array(factor), _as_array(target)
    _check_shapes(f, y)
    return _mean_or_raise(_daily_rank_ic(f, y))[0]


def target_days(target) -> np.ndarray:
    """Days on which the target alone supports a correlation: at least two
    finite cells and not constant."""
    y = _as_array(target)
    valid = np.isfinite(y)
    return (valid.sum(axis=0) >= 2) & ~_constant_days(y, valid)


def signal_ic(signal, target) -> ICReport:
    """IC of a combined signal, averaged over every usable target day.

    Unlike :func:`ic`, a day where the signal is missing or constant counts
    as zero rather than being dropped, so a signal cannot raise its score by
    being defined on only a handful of days.
    """
    z, y = _as_array(signal), _as_array(target)
    _check_shapes(z, y)
    days = target_days(y)
    if not days.any():
        raise MetricsError("no overlapping valid data")
    out = []
    for daily in (_daily_pearson(z, y), _daily_rank_ic(z, y)):
        out.append(np.where(days, np.nan_to_num(daily, nan=0.0), np.nan))
    n = int(days.sum())
    return ICReport(float(np.nansum(out[0]) / n), float(np.nansum(out[1]) / n), out[0], n)


class CombinedIC:
    """IC of ``sum_j w_j f_j`` as a function of ``w``, with its gradient.

    Per-day centered cross-products are computed once, so each evaluation
    costs O(days * k^2).

    By default a cell counts only when every factor and the target are
    valid, and days without a usable cross-section are dropped, which
    matches :func:`ic` of the weighted sum. With ``neutral_fill`` a missing
    factor value contributes 0 (its daily mean after z-scoring), cells are
    dropped only when every factor is missing, and days without a usable
    signal count as IC 0, which matches :func:`signal_ic`.
    """

    def __init__(self, factors: Sequence, target, neutral_fill: bool = False):
        fs = np.stack([_as_array(f) for f in factors])          # (k, n, D)
        y = _as_array(target)
        if fs.shape[1:] != y.shape:
            raise MetricsError("factor and target shapes differ")
        finite = np.isfinite(fs)
        self.neutral_fill = neutral_fill
        if neutral_fill:
            keep = target_days(y)
            valid = np.isfinite(y) & finite.any(axis=0)
            fs = np.where(finite, fs, 0.0)
        else:
            valid = np.isfinite(y) & finite.all(axis=0)
            keep = (valid.sum(axis=0) >= 2) & ~_constant_days(y, valid)
        self.n_days = int(keep.sum())
        fs, y, valid = fs[:, :, keep], y[:, keep], valid[:, keep]
        cnt = valid.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            fz = np.where(valid, fs, 0.0)
            fc = np.where(valid, fs - fz.sum(axis=1, keepdims=True) / cnt, 0.0)
            yz = np.where(valid, y, 0.0)
            yc = np.where(valid, y - yz.sum(axis=0) / cnt, 0.0)
        self.k = fs.shape[0]
        self.cov = np.einsum("jnd,lnd->djl", fc, fc)             # (D, k, k)
        self.xy = np.einsum("jnd,nd->dj", fc, yc)                # (D, k)
        self.yy = (yc * yc).sum(axis=0)                          # (D,)
        self._ok = (cnt >= 2) & (self.yy > 0)

    def _terms(self, w: np.ndarray):
        w = np.asarray(w, dtype=np.float64)
        sw = self.cov @ w                                        # (D, k)
        q = sw @ w                                               # (D,)
        num = self.xy @ w
        # z is constant on a day when its variance cancels to rounding noise
        scale = np.einsum("djj,j->d", self.cov, w * w)
        used = self._ok & (q > 1e-20 * scale)
        return w, sw, q, num, used

    def daily(self, w) -> np.ndarray:
        w, sw, q, num, used = self._terms(w)
        with np.errstate(invalid="ignore", divide="ignore"):
            r = num / np.sqrt(q * self.yy)
        return np.where(used, r, 0.0 if self.neutral_fill else np.nan)

    def value(self, w) -> float:
        if self.neutral_fill:
            if self.n_days == 0:
                raise MetricsError("no overlapping valid data")
            return float(self.daily(w).sum() / self.n_days)
        return _mean_or_raise(self.daily(w))[0]

    def gradient(self, w) -> np.ndarray:
        w, sw, q, num, used = self._terms(w)
        if not used.any():
            if self.neutral_fill and self.n_days:
                return np.zeros(self.k)
            raise MetricsError("no overlapping valid data")
        q, sw, num, xy, yy = q[used], sw[used], num[used], self.xy[used], self.yy[used]
        root = np.sqrt(q * yy)
        g = xy / root[:, None] - (num / (q * root))[:, None] * sw
        return g.sum(axis=0) / (self.n_days if self.neutral_fill else used.sum())


def ic_weight_gradient(factors: Sequence, weights, target, neutral_fill: bool = False) -> np.ndarray:
    """Analytic d IC(sum_j w_j f_j) / d w."""
    if len(factors) != len(weights) or not factors:
        raise MetricsError("need one weight per factor and at least one factor")
    return CombinedIC(factors, target, neutral_fill).gradient(np.asarray(weights, dtype=np.float64))
