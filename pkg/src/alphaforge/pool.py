"""Alpha pool: a bounded set of factors combined linearly into one signal
whose training IC is maximized over the weights."""
from __future__ import annotations

import json
import logging
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from alphaforge import dsl, metrics, ops
from alphaforge.panel import FeaturePanel, PanelView, TargetPanel

log = logging.getLogger(__name__)


class PoolError(ValueError):
    pass


def zscore_daily(x: np.ndarray) -> np.ndarray:
    """Standardize each day over its finite cells; constant days become NaN."""
    x = np.asarray(x, dtype=np.float64)
    valid = np.isfinite(x)
    cnt = valid.sum(axis=0)
    xz = np.where(valid, x, 0.0)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        # rescale by the largest magnitude first so huge factors do not overflow
        scale = np.abs(xz).max(axis=0)
        xs = xz / np.where(scale > 0, scale, 1.0)
        mean = xs.sum(axis=0) / cnt
        dev = np.where(valid, xs - mean, 0.0)
        std = np.sqrt((dev * dev).sum(axis=0) / cnt)
        out = dev / std
    hi = np.where(valid, x, -np.inf).max(axis=0)
    lo = np.where(valid, x, np.inf).min(axis=0)
    ok = valid & (hi != lo)[None, :]
    return np.where(ok, out, np.nan)


class EvalSet:
    """Panel + targets restricted to one date range, with a factor cache.

    Factors are evaluated on the whole parent panel so rolling windows see
    the history before the range starts.
    """

    def __init__(self, panel: FeaturePanel, target: TargetPanel | np.ndarray,
                 days: slice | PanelView | None = None, cache_size: int = 512):
        if isinstance(days, PanelView):
            days = days.days
        self.panel = panel
        self.days = days if days is not None else slice(0, panel.n_days)
        y = np.asarray(getattr(target, "returns", target), dtype=np.float64)
        self.target = y[:, self.days]
        self._cache: OrderedDict[dsl.Node, np.ndarray] = OrderedDict()
        self._cache_size = cache_size

    def raw(self, expr: dsl.Node) -> np.ndarray:
        return ops.evaluate(expr, self.panel).values[:, self.days]

    def factor(self, expr: dsl.Node) -> np.ndarray:
        hit = self._cache.get(expr)
        if hit is not None:
            self._cache.move_to_end(expr)
            return hit
        z = zscore_daily(self.raw(expr))
        z.setflags(write=False)
        self._cache[expr] = z
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return z


@dataclass(frozen=True)
class PoolEntry:
    expr: dsl.Node
    weight: float
    factor: np.ndarray

    @property
    def formula(self) -> str:
        return dsl.to_formula(self.expr)


@dataclass
class AddResult:
    delta_ic: float
    status: str                      # added | duplicate | degenerate | rejected
    evicted: str | None = None
    eviction_delta: float = 0.0


class AlphaPool:
    def __init__(self, capacity: int, data: EvalSet, lr: float = 1.0,
                 max_iters: int = 500, tol: float = 1e-6):
        if capacity < 1:
            raise PoolError("pool capacity must be positive")
        self.capacity = capacity
        self.data = data
        self.entries: list[PoolEntry] = []
        self.train_ic = 0.0
        self.lr, self.max_iters, self.tol = lr, max_iters, tol

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def weights(self) -> np.ndarray:
        return np.array([e.weight for e in self.entries])

    @property
    def formulas(self) -> list[str]:
        return [e.formula for e in self.entries]

    def copy(self) -> "AlphaPool":
        other = AlphaPool(self.capacity, self.data, self.lr, self.max_iters, self.tol)
        other.entries = list(self.entries)
        other.train_ic = self.train_ic
        return other

    def adopt(self, other: "AlphaPool") -> None:
        """Take over the entries and train IC of a trial copy."""
        self.entries, self.train_ic = list(other.entries), other.train_ic

    def __contains__(self, expr: dsl.Node) -> bool:
        return any(e.expr == expr for e in self.entries)

    # -- weights --------------------------------------------------------

    def _objective(self) -> metrics.CombinedIC:
        return metrics.CombinedIC([e.factor for e in self.entries], self.data.target, neutral_fill=True)

    def _set_weights(self, w: Sequence[float]) -> None:
        self.entries = [PoolEntry(e.expr, float(x), e.factor) for e, x in zip(self.entries, w)]

    def recompute_ic(self) -> float:
        if not self.entries:
            return 0.0
        return self._objective().value(self.weights)

    def optimize_weights(self, lr: float | None = None, max_iters: int | None = None,
                         tol: float | None = None) -> float:
        """Gradient ascent on training IC; returns the new train IC.

        IC is invariant to positive rescaling of the weights, so they are kept
        on the unit sphere. The best iterate is kept, which makes the result
        never worse than the starting point.
        """
        lr = self.lr if lr is None else lr
        max_iters = self.max_iters if max_iters is None else max_iters
        tol = self.tol if tol is None else tol
        if not self.entries:
            raise PoolError("cannot optimize an empty pool")
        if lr <= 0:
            raise PoolError("learning rate must be positive")
        obj = self._objective()
        w = self.weights
        norm = np.linalg.norm(w)
        if not np.isfinite(norm) or norm == 0:
            raise PoolError("weights must be finite and not all zero")
        w = w / norm
        cur = obj.value(w)
        best_ic, best_w = cur, w
        for _ in range(max_iters):
            g = obj.gradient(w)
            if not np.all(np.isfinite(g)):
                raise PoolError(f"non-finite IC gradient {g!r}; weights left unchanged")
            w = w + lr * g
            w = w / np.linalg.norm(w)
            new = obj.value(w)
            if new > best_ic:
                best_ic, best_w = new, w
            if abs(new - cur) < tol:
                break
            cur = new
        self._set_weights(best_w)
        self.train_ic = best_ic
        return best_ic

    # -- membership -----------------------------------------------------

    def add_factor(self, expr: dsl.Node) -> AddResult:
        """Insert ``expr``, re-optimize, evict the smallest |weight| entry when
        over capacity. ``delta_ic`` is the change in train IC."""
        if expr in self:
            return AddResult(0.0, "duplicate")
        f = self.data.factor(expr)
        if not np.isfinite(f).any():
            return AddResult(0.0, "degenerate")
        try:
            single = metrics.CombinedIC([f], self.data.target, neutral_fill=True).value([1.0])
        except metrics.MetricsError:
            return AddResult(0.0, "degenerate")
        before = self.train_ic
        trial = self.copy()
        trial.entries.append(PoolEntry(expr, 0.01 if single >= 0 else -0.01, f))
        try:
            if len(trial.entries) == 1:
                trial.train_ic = trial.recompute_ic()
            else:
                trial.optimize_weights()
            evicted, ev_delta = None, 0.0
            if len(trial.entries) > trial.capacity:
                pre = trial.train_ic
                drop = int(np.argmin(np.abs(trial.weights)))
                evicted = trial.entries[drop].formula
                del trial.entries[drop]
                trial.train_ic = trial.recompute_ic()
                trial.optimize_weights()
                ev_delta = trial.train_ic - pre
        except (metrics.MetricsError, PoolError) as exc:
            log.debug("rejected %s: %s", dsl.to_formula(expr), exc)
            return AddResult(0.0, "rejected")
        self.entries, self.train_ic = trial.entries, trial.train_ic
        return AddResult(self.train_ic - before, "added", evicted, ev_delta)

    def seed(self, exprs: Iterable[dsl.Node]) -> list[AddResult]:
        exprs = list(exprs)
        if len(exprs) > self.capacity:
            raise PoolError(f"{len(exprs)} seeds exceed pool capacity {self.capacity}")
        results = []
        for e in exprs:
            res = self.add_factor(e)
            if res.status in ("degenerate", "rejected"):
                log.warning("skipping seed alpha %s (%s)", dsl.to_formula(e), res.status)
            results.append(res)
        return results

    # -- persistence ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "entries": [{"formula": e.formula, "weight": e.weight} for e in self.entries],
            "train_ic": self.train_ic,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, doc: dict, data: EvalSet, **kw) -> "AlphaPool":
        pool = cls(int(doc["capacity"]), data, **kw)
        for item in doc["entries"]:
            expr = dsl.parse(item["formula"])
            pool.entries.append(PoolEntry(expr, float(item["weight"]), data.factor(expr)))
        pool.train_ic = float(doc.get("train_ic", 0.0))
        return pool

    @classmethod
    def load(cls, path: str | Path, data: EvalSet, **kw) -> "AlphaPool":
        return cls.from_dict(json.loads(Path(path).read_text()), data, **kw)


def read_pool_file(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    for key in ("capacity", "entries"):
        if key not in doc:
            raise PoolError(f"{path}: pool file lacks {key!r}")
    return doc


def combine_factors(factors: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """``sum_j w_j f_j`` over z-scored factors, a missing value counting as
    0 (the factor's daily mean); NaN only where every factor is missing."""
    stack = np.stack([np.asarray(f, dtype=np.float64) for f in factors])
    finite = np.isfinite(stack)
    z = np.tensordot(np.asarray(weights, dtype=np.float64), np.where(finite, stack, 0.0), axes=1)
    return np.where(finite.any(axis=0), z, np.nan)


def combine(exprs_weights: AlphaPool | Sequence[tuple[dsl.Node, float]],
            panel: FeaturePanel) -> ops.FactorMatrix:
    """Mega alpha ``sum_j w_j * zscore_daily(f_j(panel))`` over all panel days.

    A factor missing on a cell contributes nothing there; the cell is NaN
    only when all factors are missing.
    """
    if isinstance(exprs_weights, AlphaPool):
        pairs = [(e.expr, e.weight) for e in exprs_weights.entries]
    else:
        pairs = list(exprs_weights)
    if not pairs:
        raise PoolError("cannot combine an empty pool")
    factors = [zscore_daily(ops.evaluate(expr, panel).values) for expr, _ in pairs]
    return ops.FactorMatrix(combine_factors(factors, [w for _, w in pairs]))
