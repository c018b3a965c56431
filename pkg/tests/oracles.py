"""Brute-force reference implementations used as test oracles.

Deliberately slow and loop-based; nothing here imports the package's
operator code.
"""
from __future__ import annotations

import math

import numpy as np

NAN = float("nan")


def _fin(v: float) -> float:
    return v if isinstance(v, float) and math.isfinite(v) else NAN


def _mean(xs):
    return math.fsum(xs) / len(xs)


def _window_stat(op: str, xs: list[float], w: int) -> float:
    """``xs`` holds the window oldest-first; the last entry is today."""
    if op == "Mean":
        return _mean(xs)
    if op == "Sum":
        return math.fsum(xs)
    if op == "Product":
        p = 1.0
        for v in xs:
            p *= v
        return p
    if op == "Max":
        return max(xs)
    if op == "Min":
        return min(xs)
    if op == "Med":
        s = sorted(xs)
        mid = len(s) // 2
        return s[mid] if len(s) % 2 else (s[mid - 1] + s[mid]) / 2
    if op in ("Std", "Var", "Mad", "Skew", "Kurt"):
        const = max(xs) == min(xs)
        mu = _mean(xs)
        if op == "Mad":
            return 0.0 if const else _mean([abs(v - mu) for v in xs])
        m2 = _mean([(v - mu) ** 2 for v in xs])
        if op == "Var":
            return 0.0 if const else m2
        if op == "Std":
            return 0.0 if const else math.sqrt(m2)
        if const:
            return NAN
        if op == "Skew":
            return _mean([(v - mu) ** 3 for v in xs]) / m2 ** 1.5
        return _mean([(v - mu) ** 4 for v in xs]) / (m2 * m2) - 3.0
    if op == "WMA":
        wts = list(range(1, w + 1))
        return math.fsum(a * b for a, b in zip(wts, xs)) / math.fsum(wts)
    if op == "EMA":
        alpha = 2.0 / (w + 1)
        wts = [(1 - alpha) ** (w - 1 - j) for j in range(w)]
        return math.fsum(a * b for a, b in zip(wts, xs)) / math.fsum(wts)
    if op == "Rank":
        cur = xs[-1]
        below = sum(1 for v in xs if v < cur)
        ties = sum(1 for v in xs if v == cur)
        # average of the 1-based positions below+1 .. below+ties
        return (below + (ties + 1) / 2) / w
    if op in ("Argmax", "Argmin"):
        best_off, best = 0, xs[-1]
        for off in range(w):
            v = xs[w - 1 - off]
            if (op == "Argmax" and v > best) or (op == "Argmin" and v < best):
                best_off, best = off, v
        return float(best_off)
    raise ValueError(op)


def _pair_stat(op: str, xs: list[float], ys: list[float], w: int) -> float:
    if w < 2:
        return NAN
    cx, cy = max(xs) == min(xs), max(ys) == min(ys)
    mx, my = _mean(xs), _mean(ys)
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(xs, ys))
    if op == "Cov":
        return 0.0 if (cx or cy) else sxy / (w - 1)
    if cx or cy:
        return NAN
    sxx = math.fsum((a - mx) ** 2 for a in xs)
    syy = math.fsum((b - my) ** 2 for b in ys)
    return sxy / math.sqrt(sxx * syy)


def rolling(op: str, args: list[np.ndarray], w: int, mask: np.ndarray) -> np.ndarray:
    n, T = mask.shape
    out = np.full((n, T), NAN)
    for i in range(n):
        listed = [t for t in range(T) if mask[i, t]]
        series = [[float(a[i, t]) for t in listed] for a in args]
        for k, t in enumerate(listed):
            if op in ("Ref", "Delta"):
                if k - w < 0:
                    continue
                now, then = series[0][k], series[0][k - w]
                if math.isnan(now) and op == "Delta" or math.isnan(then):
                    continue
                v = then if op == "Ref" else now - then
            else:
                if k - w + 1 < 0:
                    continue
                wins = [s[k - w + 1:k + 1] for s in series]
                if any(math.isnan(v) or math.isinf(v) for win in wins for v in win):
                    continue
                try:
                    if len(wins) == 2:
                        v = _pair_stat(op, wins[0], wins[1], w)
                    else:
                        v = _window_stat(op, wins[0], w)
                except (OverflowError, ZeroDivisionError):
                    v = NAN
            out[i, t] = _fin(float(v))
    return out


def elementwise(op: str, *args) -> np.ndarray:
    shape = next(np.shape(a) for a in args if np.ndim(a) > 0)
    arrs = [np.broadcast_to(np.asarray(a, dtype=float), shape) for a in args]
    out = np.full(shape, NAN)
    for idx in np.ndindex(*shape):
        vals = [float(a[idx]) for a in arrs]
        if any(math.isnan(v) for v in vals):
            continue
        x = vals[0]
        y = vals[1] if len(vals) > 1 else None
        try:
            if op == "Abs":
                v = abs(x)
            elif op == "Sign":
                v = 0.0 if x == 0 else (1.0 if x > 0 else -1.0)
            elif op == "Log":
                v = math.log(x) if x > 0 else NAN
            elif op == "Add":
                v = x + y
            elif op == "Sub":
                v = x - y
            elif op == "Mul":
                v = x * y
            elif op == "Div":
                v = x / y if y != 0 else NAN
            elif op == "Greater":
                v = x if x >= y else y
            elif op == "Less":
                v = x if x <= y else y
            elif op == "Pow":
                if x == 0 and y < 0:
                    v = NAN
                else:
                    v = x ** y
                    v = NAN if isinstance(v, complex) else v
            else:
                raise ValueError(op)
        except (OverflowError, ZeroDivisionError):
            v = NAN
        out[idx] = _fin(float(v))
    return out


def cond(x, y, a, b) -> np.ndarray:
    shape = next(np.shape(v) for v in (x, y, a, b) if np.ndim(v) > 0)
    x, y, a, b = (np.broadcast_to(np.asarray(v, dtype=float), shape) for v in (x, y, a, b))
    out = np.full(shape, NAN)
    for idx in np.ndindex(*shape):
        if math.isnan(x[idx]) or math.isnan(y[idx]):
            continue
        out[idx] = _fin(float(a[idx] if x[idx] > y[idx] else b[idx]))
    return out


def cross_sectional(op: str, x: np.ndarray) -> np.ndarray:
    n, T = x.shape
    out = np.full((n, T), NAN)
    for t in range(T):
        cells = [(float(x[i, t]), i) for i in range(n) if math.isfinite(x[i, t])]
        if not cells:
            continue
        if op == "CSRank":
            ordered = sorted(cells)
            j = 0
            while j < len(ordered):
                k = j
                while k + 1 < len(ordered) and ordered[k + 1][0] == ordered[j][0]:
                    k += 1
                avg = (j + 1 + k + 1) / 2
                for _, i in ordered[j:k + 1]:
                    out[i, t] = avg / len(cells)
                j = k + 1
        elif op == "Scale":
            total = math.fsum(abs(v) for v, _ in cells)
            for v, i in cells:
                out[i, t] = v / total if total != 0 else NAN
        else:
            raise ValueError(op)
    return out


def pearson(xs: list[float], ys: list[float]) -> float:
    mx, my = _mean(xs), _mean(ys)
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(xs, ys))
    sxx = math.fsum((a - mx) ** 2 for a in xs)
    syy = math.fsum((b - my) ** 2 for b in ys)
    return sxy / math.sqrt(sxx * syy)


def average_ranks(xs: list[float]) -> list[float]:
    order = sorted(range(len(xs)), key=lambda i: xs[i])
    ranks = [0.0] * len(xs)
    j = 0
    while j < len(order):
        k = j
        while k + 1 < len(order) and xs[order[k + 1]] == xs[order[j]]:
            k += 1
        for m in range(j, k + 1):
            ranks[order[m]] = (j + k + 2) / 2
        j = k + 1
    return ranks


def daily_ic(f: np.ndarray, y: np.ndarray, rank: bool = False) -> tuple[float, list[float]]:
    """Mean of per-day Pearson (or Spearman) over pairwise-valid cells."""
    vals = []
    for t in range(f.shape[1]):
        pairs = [(float(f[i, t]), float(y[i, t])) for i in range(f.shape[0])
                 if math.isfinite(f[i, t]) and math.isfinite(y[i, t])]
        if len(pairs) < 2:
            continue
        xs, ys = [p[0] for p in pairs], [p[1] for p in pairs]
        if max(xs) == min(xs) or max(ys) == min(ys):
            continue
        if rank:
            xs, ys = average_ranks(xs), average_ranks(ys)
        vals.append(pearson(xs, ys))
    return (math.fsum(vals) / len(vals) if vals else NAN), vals


def naive_zscore(x: np.ndarray) -> np.ndarray:
    """Per-day z-score over finite cells, looping over days; constant days NaN."""
    out = np.full(x.shape, NAN)
    for t in range(x.shape[1]):
        col = [(i, float(x[i, t])) for i in range(x.shape[0]) if math.isfinite(x[i, t])]
        if not col:
            continue
        vals = [v for _, v in col]
        if max(vals) == min(vals):
            continue
        mu = math.fsum(vals) / len(vals)
        sd = math.sqrt(math.fsum((v - mu) ** 2 for v in vals) / len(vals))
        for i, v in col:
            out[i, t] = (v - mu) / sd
    return out


def angle_sweep(z1: np.ndarray, z2: np.ndarray, y: np.ndarray, points: int = 10_000):
    """Best IC of cos(a) z1 + sin(a) z2 over an even grid of directions.

    IC depends only on the weight direction, so the grid over the circle
    covers the whole search space.
    """
    rows = []
    for t in range(y.shape[1]):
        ok = np.isfinite(z1[:, t]) & np.isfinite(z2[:, t]) & np.isfinite(y[:, t])
        if ok.sum() < 2:
            continue
        a, b, c = z1[ok, t], z2[ok, t], y[ok, t]
        a, b, c = a - a.mean(), b - b.mean(), c - c.mean()
        if not (c ** 2).sum() > 0:
            continue
        rows.append([a @ a, a @ b, b @ b, a @ c, b @ c, c @ c])
    s = np.array(rows).T
    theta = np.linspace(0, 2 * np.pi, points, endpoint=False)
    co, si = np.cos(theta)[:, None], np.sin(theta)[:, None]
    var = co * co * s[0] + 2 * co * si * s[1] + si * si * s[2]
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (co * s[3] + si * s[4]) / np.sqrt(var * s[5])
    r = np.where(var > 1e-12 * (s[0] + s[2]), r, np.nan)
    ics = np.nanmean(r, axis=1)
    best = int(np.nanargmax(ics))
    return float(ics[best]), float(theta[best])
