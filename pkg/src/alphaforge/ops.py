"""Operator semantics over (stock, day) matrices.

Every operator returns float64 matrices with NaN wherever the value is
undefined: warm-up days, masked cells and domain errors (log of a
non-positive number, division by zero, zero-variance moments).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import rankdata

from alphaforge import dsl
from alphaforge.panel import FeaturePanel

Operand = Union[np.ndarray, float]

ELEMENTWISE = ("Abs", "Log", "Sign", "Add", "Sub", "Mul", "Div", "Greater", "Less", "Pow")
ROLLING = ("Ref", "Mean", "Std", "Var", "Sum", "Max", "Min", "Med", "Mad", "WMA", "EMA",
           "Delta", "Rank", "Argmax", "Argmin", "Product", "Cov", "Corr")
CROSS_SECTIONAL = ("CSRank", "Scale")
MOMENTS = ("Skew", "Kurt")


@dataclass(frozen=True, eq=False)
class FactorMatrix:
    values: np.ndarray                 # (stock, day)

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def to_csv(self, path: str | Path, panel: FeaturePanel) -> None:
        import pandas as pd
        frame = pd.DataFrame(self.values.T, index=list(panel.dates), columns=list(panel.tickers))
        frame.index.name = "date"
        frame.to_csv(path, float_format="%.17g")


def _clean(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.isfinite(x), x, np.nan)


# --------------------------------------------------------------------------
# elementwise

def apply_elementwise(op: str, *args: Operand) -> Operand:
    with np.errstate(all="ignore"):
        if op == "Abs":
            out = np.abs(args[0])
        elif op == "Sign":
            out = np.sign(args[0])
        elif op == "Log":
            x = np.asarray(args[0], dtype=np.float64)
            out = np.log(np.where(x > 0, x, np.nan))
        else:
            x, y = args
            if op == "Add":
                out = np.add(x, y)
            elif op == "Sub":
                out = np.subtract(x, y)
            elif op == "Mul":
                out = np.multiply(x, y)
            elif op == "Div":
                y_arr = np.asarray(y, dtype=np.float64)
                out = np.divide(x, np.where(y_arr == 0, np.nan, y_arr))
            elif op == "Pow":
                out = np.power(np.asarray(x, dtype=np.float64), y)
            elif op == "Greater":
                out = np.maximum(x, y)
            elif op == "Less":
                out = np.minimum(x, y)
            else:
                raise ValueError(f"not an elementwise operator: {op}")
    return _clean(out)


def apply_cond(x: Operand, y: Operand, a: Operand, b: Operand) -> np.ndarray:
    """``a`` where ``x > y`` else ``b``; NaN wherever the comparison is."""
    x, y, a, b = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (x, y, a, b)))
    with np.errstate(invalid="ignore"):
        out = np.where(x > y, a, b)
    out = np.where(np.isnan(x) | np.isnan(y), np.nan, out)
    return _clean(out)


# --------------------------------------------------------------------------
# cross-sectional (axis 0 = stocks)

def apply_cross_sectional(op: str, x: np.ndarray) -> np.ndarray:
    x = _clean(x)
    valid = np.isfinite(x)
    count = valid.sum(axis=0)
    if op == "CSRank":
        ranks = rankdata(x, axis=0, nan_policy="omit")
        with np.errstate(invalid="ignore", divide="ignore"):
            out = ranks / count
    elif op == "Scale":
        denom = np.nansum(np.abs(x), axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = x / np.where(denom == 0, np.nan, denom)
    else:
        raise ValueError(f"not a cross-sectional operator: {op}")
    return _clean(np.where(valid, out, np.nan))


# --------------------------------------------------------------------------
# rolling windows on each stock's listed days

def _gather_index(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    rows, cols = np.nonzero(mask)
    pos = (np.cumsum(mask, axis=1) - 1)[rows, cols]
    width = int(mask.sum(axis=1).max()) if mask.size else 0
    return rows, cols, pos, width


def _compress(x: np.ndarray, idx) -> np.ndarray:
    rows, cols, pos, width = idx
    out = np.full((x.shape[0], width), np.nan)
    out[rows, pos] = x[rows, cols]
    return out


def _expand(c: np.ndarray, idx, shape) -> np.ndarray:
    rows, cols, pos, _ = idx
    out = np.full(shape, np.nan)
    out[rows, cols] = c[rows, pos]
    return out


def _windows(c: np.ndarray, w: int) -> np.ndarray:
    return sliding_window_view(c, w, axis=1)


def _place(c: np.ndarray, w: int, res: np.ndarray) -> np.ndarray:
    out = np.full(c.shape, np.nan)
    out[:, w - 1:] = res
    return out


@lru_cache(maxsize=64)
def _ema_weights(w: int) -> np.ndarray:
    alpha = 2.0 / (w + 1)
    wts = (1 - alpha) ** np.arange(w - 1, -1, -1, dtype=np.float64)
    return wts / wts.sum()


@lru_cache(maxsize=64)
def _wma_weights(w: int) -> np.ndarray:
    # integer weights; the sum is divided out afterwards so that windows
    # which cancel exactly give exactly zero
    return np.arange(1, w + 1, dtype=np.float64)


def _centered(win: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = win.mean(axis=-1)
    return win - mean[..., None], win.max(axis=-1) == win.min(axis=-1)


def _roll_single(op: str, c: np.ndarray, w: int) -> np.ndarray:
    L = c.shape[1]
    if op in ("Ref", "Delta"):
        out = np.full(c.shape, np.nan)
        if w < L:
            out[:, w:] = c[:, :-w] if op == "Ref" else c[:, w:] - c[:, :-w]
        return out
    if w > L:
        return np.full(c.shape, np.nan)
    win = _windows(c, w)
    has_nan = np.isnan(win).any(axis=-1)
    if op == "Mean":
        res = win.mean(axis=-1)
    elif op == "Sum":
        res = win.sum(axis=-1)
    elif op == "Product":
        res = win.prod(axis=-1)
    elif op == "Max":
        res = win.max(axis=-1)
    elif op == "Min":
        res = win.min(axis=-1)
    elif op == "Med":
        res = np.median(win, axis=-1)
    elif op in ("Std", "Var", "Mad"):
        dev, const = _centered(win)
        if op == "Mad":
            res = np.abs(dev).mean(axis=-1)
        else:
            res = (dev * dev).mean(axis=-1)
            if op == "Std":
                res = np.sqrt(res)
        res = np.where(const, 0.0, res)
    elif op in ("Skew", "Kurt"):
        # extended precision: kurtosis near zero is a difference of two
        # numbers close to 3 and loses digits in float64
        dev, const = _centered(win.astype(np.longdouble))
        m2 = (dev ** 2).mean(axis=-1)
        if op == "Skew":
            res = (dev ** 3).mean(axis=-1) / m2 ** 1.5
        else:
            res = (dev ** 4).mean(axis=-1) / (m2 * m2) - 3
        res = np.where(const, np.nan, res.astype(np.float64))
    elif op == "WMA":
        res = (win @ _wma_weights(w)) / (w * (w + 1) / 2)
    elif op == "EMA":
        res = win @ _ema_weights(w)
    elif op == "Rank":
        cur = win[..., -1:]
        less = (win < cur).sum(axis=-1)
        eq = (win == cur).sum(axis=-1)
        res = (less + (eq + 1) / 2.0) / w
    elif op in ("Argmax", "Argmin"):
        rev = win[..., ::-1]
        res = (np.argmax(rev, axis=-1) if op == "Argmax" else np.argmin(rev, axis=-1)).astype(np.float64)
    else:
        raise ValueError(f"not a single-series rolling operator: {op}")
    return _place(c, w, np.where(has_nan, np.nan, res))


def _roll_pair(op: str, cx: np.ndarray, cy: np.ndarray, w: int) -> np.ndarray:
    if w > cx.shape[1] or w < 2:
        return np.full(cx.shape, np.nan)
    wx, wy = _windows(cx, w), _windows(cy, w)
    has_nan = np.isnan(wx).any(axis=-1) | np.isnan(wy).any(axis=-1)
    dx, cst_x = _centered(wx)
    dy, cst_y = _centered(wy)
    sxy = (dx * dy).sum(axis=-1)
    if op == "Cov":
        res = np.where(cst_x | cst_y, 0.0, sxy / (w - 1))
    elif op == "Corr":
        denom = np.sqrt((dx * dx).sum(axis=-1) * (dy * dy).sum(axis=-1))
        res = np.where(cst_x | cst_y, np.nan, sxy / np.where(denom == 0, np.nan, denom))
    else:
        raise ValueError(f"not a paired rolling operator: {op}")
    return _place(cx, w, np.where(has_nan, np.nan, res))


def apply_rolling(op: str, args: Sequence[np.ndarray], window: int,
                  mask: np.ndarray | None = None) -> np.ndarray:
    """Trailing-window operator over each stock's listed (mask-true) days.

    ``args`` holds one series, or two for Cov/Corr. Without ``mask`` every
    cell counts as listed.
    """
    x0 = _clean(args[0])
    if mask is None:
        mask = np.ones(x0.shape, dtype=bool)
    if window < 1:
        raise ValueError("window must be >= 1")
    idx = _gather_index(mask)
    with np.errstate(all="ignore"):
        if op in ("Cov", "Corr"):
            c = _roll_pair(op, _compress(x0, idx), _compress(_clean(args[1]), idx), window)
        else:
            c = _roll_single(op, _compress(x0, idx), window)
    return _clean(_expand(c, idx, x0.shape))


def apply_moments(op: str, x: np.ndarray, window: int, mask: np.ndarray | None = None) -> np.ndarray:
    if op not in MOMENTS:
        raise ValueError(f"not a moment operator: {op}")
    return apply_rolling(op, [x], window, mask)


# --------------------------------------------------------------------------
# expression evaluation

def evaluate(expr: dsl.Node, panel: FeaturePanel) -> FactorMatrix:
    """Raw (unstandardized) factor values of ``expr`` on ``panel``."""
    if expr.sort is not dsl.Sort.SERIES:
        raise dsl.DSLError("only Series expressions can be evaluated")
    memo: dict[dsl.Node, Operand] = {}
    out = _eval(expr, panel, memo)
    return FactorMatrix(np.where(panel.mask, out, np.nan))


def _eval(node: dsl.Node, panel: FeaturePanel, memo: dict) -> Operand:
    hit = memo.get(node)
    if hit is not None:
        return hit
    if isinstance(node, dsl.Feature):
        val: Operand = np.where(panel.mask, panel.feature(node.name), np.nan)
    elif isinstance(node, dsl.Constant):
        val = float(node.value)
    elif isinstance(node, dsl.Window):
        raise dsl.DSLError("time delta outside an operator")
    else:
        val = _apply(node, panel, memo)
        val = np.where(panel.mask, np.broadcast_to(val, panel.mask.shape), np.nan)
    memo[node] = val
    return val


def _apply(node: dsl.Call, panel: FeaturePanel, memo: dict) -> Operand:
    op = node.op
    kind = dsl.OPERATORS[op].kind
    if kind in (dsl.OpKind.ROLLING, dsl.OpKind.PAIR_ROLLING):
        *series, win = node.args
        vals = [_eval(a, panel, memo) for a in series]
        return apply_rolling(op, vals, win.days, panel.mask)
    vals = [_eval(a, panel, memo) for a in node.args]
    if op in CROSS_SECTIONAL:
        return apply_cross_sectional(op, vals[0])
    if kind is dsl.OpKind.COND:
        return apply_cond(*vals)
    return apply_elementwise(op, *vals)
