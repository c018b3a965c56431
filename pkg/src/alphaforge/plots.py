"""Figures written next to the CSV/JSON outputs."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

golden = (np.sqrt(5) - 1) / 2
width = 6.0

STYLE = {
    "figure.figsize": (width, width * golden),
    "figure.dpi": 150,
    "savefig.bbox": "tight",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "lines.linewidth": 1.2,
    "axes.prop_cycle": matplotlib.cycler(color=["#08589e", "#e6550d", "#31a354", "#756bb1", "#636363"]),
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


def cumulative_returns(frame: pd.DataFrame, path: str | Path, title: str = "Cumulative return") -> Path:
    """Strategy vs benchmark cumulative return, with the excess shaded."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = pd.to_datetime(frame["date"])
        ax.plot(x, frame["strategy"], label="strategy")
        ax.plot(x, frame["benchmark"], label="benchmark")
        ax.fill_between(x, frame["benchmark"], frame["strategy"], alpha=0.15, color="#636363", label="excess")
        ax.axhline(0, color="k", lw=0.6)
        ax.set_ylabel("cumulative return")
        ax.set_title(title)
        ax.legend(loc="upper left")
        fig.autofmt_xdate()
        return _save(fig, path)


def pool_size_sweep(curves: Mapping[int | str, Sequence[dict]], path: str | Path) -> Path:
    """Train and valid IC per update, one line per run (keyed by pool size or label)."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(width * 1.6, width * golden), sharey=True)
        for k, rows in curves.items():
            steps = [r["step"] for r in rows]
            for ax, key in zip(axes, ("train_ic", "valid_ic")):
                ys = [np.nan if r.get(key) is None else r[key] for r in rows]
                ax.plot(steps, ys, label=f"k={k}" if isinstance(k, int) else str(k))
        for ax, key in zip(axes, ("train IC", "valid IC")):
            ax.set_xlabel("PPO update")
            ax.set_title(key)
        axes[0].set_ylabel("IC of combined alpha")
        axes[1].legend(loc="lower right")
        return _save(fig, path)


def ic_by_day(daily_ic: np.ndarray, dates: Sequence[str], path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = pd.to_datetime(list(dates))
        ax.bar(x, daily_ic, width=1.0, color="#9ecae1")
        s = pd.Series(daily_ic).rolling(20, min_periods=5).mean()
        ax.plot(x, s, color="#08589e", label="20-day mean")
        ax.axhline(np.nanmean(daily_ic), color="#e6550d", lw=0.8, ls="--", label="mean")
        ax.set_ylabel("daily IC")
        ax.legend()
        fig.autofmt_xdate()
        return _save(fig, path)
