"""Top-K / Swap-N long-only backtest on a daily signal, and its report files."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from alphaforge.panel import FeaturePanel


class BacktestError(ValueError):
    pass


@dataclass(frozen=True)
class BacktestParams:
    top_k: int = 50
    swap_n: int = 5
    min_hold_days: int = 20
    enter_threshold: float = 0.0
    start: str = "2020-01-01"
    end: str = "2021-12-31"
    initial_capital: float = 1_000_000.0
    fee_bps: float = 0.0

    def __post_init__(self):
        if self.top_k < 1:
            raise BacktestError("top_k must be >= 1")
        if not 0 <= self.swap_n <= self.top_k:
            raise BacktestError("swap_n must lie in [0, top_k]")
        if self.min_hold_days < 0:
            raise BacktestError("min_hold_days must be >= 0")
        if self.initial_capital <= 0 or self.fee_bps < 0:
            raise BacktestError("initial_capital must be > 0 and fee_bps >= 0")


@dataclass(frozen=True)
class Trade:
    date: str
    ticker: str
    side: str            # buy | sell
    shares: float
    price: float
    cash_flow: float     # signed: negative for buys


@dataclass
class BacktestReport:
    dates: list[str]
    equity: np.ndarray
    cash: np.ndarray
    trades: list[Trade] = field(default_factory=list)
    initial_capital: float = 1.0
    holdings: list[dict] = field(default_factory=list)   # ticker -> shares, per day

    @property
    def cumulative_return(self) -> np.ndarray:
        return self.equity / self.initial_capital - 1.0

    def ledger_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(t) for t in self.trades],
                            columns=["date", "ticker", "side", "shares", "price", "cash_flow"])


def _ranking(sig: np.ndarray, tickers: Sequence[str]) -> list[int]:
    """Stocks with a finite signal, best first; ties by ticker."""
    ok = np.flatnonzero(np.isfinite(sig))
    return sorted(ok.tolist(), key=lambda i: (-sig[i], tickers[i]))


def run_backtest(signal, panel: FeaturePanel, params: BacktestParams = BacktestParams()) -> BacktestReport:
    sig_all = np.asarray(getattr(signal, "values", signal), dtype=np.float64)
    if sig_all.shape != (panel.n_stocks, panel.n_days):
        raise BacktestError(f"signal shape {sig_all.shape} does not match panel "
                            f"({panel.n_stocks}, {panel.n_days})")
    days = [t for t, d in enumerate(panel.dates) if params.start <= d <= params.end]
    if not days:
        raise BacktestError(f"no trading days between {params.start} and {params.end}")
    close = panel.feature("close")
    tickers = panel.tickers
    fee = params.fee_bps / 1e4

    cash = float(params.initial_capital)
    shares: dict[int, float] = {}
    entry: dict[int, int] = {}
    last_px = np.full(panel.n_stocks, np.nan)
    trades: list[Trade] = []
    equity_curve, cash_curve, holdings = [], [], []

    for t in days:
        date = panel.dates[t]
        px = close[:, t]
        tradable = panel.mask[:, t] & np.isfinite(px)
        last_px = np.where(tradable, px, last_px)
        sig = np.where(tradable, sig_all[:, t], np.nan)
        order = _ranking(sig, tickers)
        if order:
            rank = {i: r for r, i in enumerate(order)}
            top = set(order[: params.top_k])
            # sells: min-hold first, then rank or threshold exit, worst first
            sellable = [i for i in shares
                        if tradable[i] and t - entry[i] >= params.min_hold_days
                        and (i not in top or not sig[i] >= params.enter_threshold)]
            sellable.sort(key=lambda i: (-rank.get(i, len(order)), tickers[i]))
            for i in sellable[: params.swap_n]:
                q = shares.pop(i)
                del entry[i]
                flow = q * px[i] * (1 - fee)
                cash += flow
                trades.append(Trade(date, tickers[i], "sell", q, float(px[i]), flow))
            # buys: best unheld names inside the top K above the threshold
            equity = cash + sum(q * last_px[i] for i, q in shares.items())
            size = equity / params.top_k
            bought = 0
            for i in order[: params.top_k]:
                if bought == params.swap_n or len(shares) >= params.top_k:
                    break
                if i in shares or not sig[i] > params.enter_threshold:
                    continue
                spend = min(size, cash)
                if spend <= 0:
                    break
                q = spend * (1 - fee) / px[i]
                shares[i], entry[i] = q, t
                cash -= spend
                trades.append(Trade(date, tickers[i], "buy", q, float(px[i]), -spend))
                bought += 1
        equity_curve.append(cash + sum(q * last_px[i] for i, q in shares.items()))
        cash_curve.append(cash)
        holdings.append({tickers[i]: q for i, q in sorted(shares.items())})

    return BacktestReport([panel.dates[t] for t in days], np.array(equity_curve), np.array(cash_curve),
                          trades, float(params.initial_capital), holdings)


# -- reporting ----------------------------------------------------------------

def read_benchmark(path: str | Path) -> pd.Series:
    """Two-column CSV (date, index level)."""
    df = pd.read_csv(path)
    if df.shape[1] != 2:
        raise BacktestError(f"{path}: benchmark file needs exactly 2 columns (date, level)")
    s = pd.Series(df.iloc[:, 1].to_numpy(dtype=float), index=df.iloc[:, 0].astype(str))
    if s.index.has_duplicates:
        raise BacktestError(f"{path}: duplicate benchmark dates")
    return s


def equal_weight_benchmark(panel: FeaturePanel) -> pd.Series:
    """Index level from the mean daily return of all listed stocks."""
    close = panel.feature("close")
    with np.errstate(invalid="ignore", divide="ignore"):
        r = close[:, 1:] / close[:, :-1] - 1
    ok = panel.mask[:, 1:] & panel.mask[:, :-1] & np.isfinite(r)
    cnt = ok.sum(axis=0)
    mean = np.where(cnt > 0, np.where(ok, r, 0).sum(axis=0) / np.maximum(cnt, 1), 0.0)
    return pd.Series(np.concatenate([[1.0], np.cumprod(1 + mean)]), index=list(panel.dates))


def max_drawdown(equity: np.ndarray) -> float:
    peak = np.maximum.accumulate(equity)
    return float(np.max(1 - equity / peak))


def summarize(equity: np.ndarray, initial: float) -> dict:
    path = np.concatenate([[initial], equity])
    daily = path[1:] / path[:-1] - 1
    return {
        "total_return": float(equity[-1] / initial - 1),
        "max_drawdown": max_drawdown(path),
        "daily_mean": float(daily.mean()) if len(daily) else 0.0,
        "daily_std": float(daily.std(ddof=1)) if len(daily) > 1 else 0.0,
        "days": len(equity),
    }


def report(rep: BacktestReport, benchmark: pd.Series, out_dir: str | Path, name: str = "backtest",
           plot: bool = True) -> dict[str, Path]:
    """Write ``<name>.csv``, ``<name>.json``, the trade ledger and a figure."""
    missing = [d for d in rep.dates if d not in benchmark.index]
    if missing:
        shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
        raise BacktestError(f"benchmark lacks {len(missing)} backtest date(s): {shown}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    level = benchmark.loc[rep.dates].to_numpy(dtype=float)
    bench = level / level[0] - 1
    strat = rep.cumulative_return
    frame = pd.DataFrame({"date": rep.dates, "strategy": strat, "benchmark": bench, "excess": strat - bench})
    paths = {"csv": out / f"{name}.csv", "json": out / f"{name}.json", "ledger": out / f"{name}_trades.csv"}
    frame.to_csv(paths["csv"], index=False)
    rep.ledger_frame().to_csv(paths["ledger"], index=False)
    summary = summarize(rep.equity, rep.initial_capital)
    summary["benchmark_total_return"] = float(bench[-1])
    summary["excess_total_return"] = summary["total_return"] - float(bench[-1])
    summary["trades"] = len(rep.trades)
    paths["json"].write_text(json.dumps(summary, indent=2) + "\n")
    if plot:
        from alphaforge import plots
        paths["png"] = plots.cumulative_returns(frame, out / f"{name}.png")
    return paths
