"""Data setup from config plus the multi-run experiments (pool-size sweep,
seeded vs unseeded mining)."""
from __future__ import annotations

import dataclasses
import json
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from alphaforge import panel as pn
from alphaforge import synthetic
from alphaforge.pool import EvalSet
from alphaforge.search import ConfigError, MineConfig, mine


@dataclass
class Setup:
    panel: pn.FeaturePanel
    target: pn.TargetPanel
    views: dict[str, pn.PanelView]

    def evalset(self, name: str) -> EvalSet:
        return EvalSet(self.panel, self.target, self.views[name])


def default_ranges(panel: pn.FeaturePanel, fractions=(0.6, 0.2, 0.2)) -> dict[str, tuple[str, str]]:
    T = panel.n_days
    a = int(round(T * fractions[0]))
    b = a + int(round(T * fractions[1]))
    d = panel.dates
    return {"train": (d[0], d[a - 1]), "valid": (d[a], d[b - 1]), "test": (d[b], d[-1])}


def load_panel(data: dict) -> tuple[pn.FeaturePanel, pn.TargetPanel]:
    """``data`` holds one of ``panel`` (npz cache), ``csv`` (+ ``schema``) or
    ``synthetic`` (keyword arguments for the planted-signal generator)."""
    horizon = int(data.get("horizon", 20))
    if "synthetic" in data:
        opts = dict(data["synthetic"])
        formula = opts.pop("formula", "Delta(close, 5)")
        ic = float(opts.pop("ic", 0.6))
        panel = synthetic.make_panel(**opts)
        return panel, synthetic.planted_target(panel, formula, ic, seed=opts.get("seed", 0), horizon=horizon)
    if "panel" in data:
        path = Path(data["panel"])
        if not path.exists():
            raise ConfigError(f"no such file: {path}")
        panel = pn.FeaturePanel.load(path)
    elif "csv" in data:
        panel = pn.ingest_csv(data["csv"], data.get("schema"))
    else:
        raise ConfigError("data section needs one of: panel, csv, synthetic")
    return panel, pn.compute_targets(panel, horizon)


def load_setup(data: dict, split: dict | None = None) -> Setup:
    panel, target = load_panel(data)
    ranges = default_ranges(panel) if not split else split
    missing = {"train", "valid", "test"} - set(ranges)
    if missing:
        raise ConfigError(f"split lacks range(s): {', '.join(sorted(missing))}")
    tr, va, te = pn.split(panel, ranges["train"], ranges["valid"], ranges["test"])
    return Setup(panel, target, {"train": tr, "valid": va, "test": te})


def pool_size_sweep(cfg: MineConfig, setup: Setup, sizes: Sequence[int] = (1, 10, 20, 50, 100),
                    out_dir: str | Path | None = None, plot: bool = True) -> dict:
    """One mining run per pool size; returns per-k logs and final ICs."""
    train, valid = setup.evalset("train"), setup.evalset("valid")
    runs = {}
    for k in sizes:
        sub = None if out_dir is None else Path(out_dir) / f"k{k}"
        res = mine(dataclasses.replace(cfg, pool_size=k), train, valid, sub)
        runs[k] = {"log": res.log, "train_ic": res.pool.train_ic, "valid_ic": res.log[-1]["valid_ic"],
                   "pool_size": len(res.pool), "seconds": res.seconds}
    finals = [runs[k]["train_ic"] for k in sizes]
    summary = {
        "sizes": list(sizes),
        "train_ic": finals,
        "valid_ic": [runs[k]["valid_ic"] for k in sizes],
        # reported, not enforced: train IC should not fall as k grows
        "train_ic_monotone": all(b >= a - 1e-3 for a, b in zip(finals, finals[1:])),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.json").write_text(json.dumps(summary, indent=2) + "\n")
        if plot:
            from alphaforge import plots
            plots.pool_size_sweep({k: runs[k]["log"] for k in sizes}, out / "sweep.png")
    return {"runs": runs, "summary": summary}


def updates_to_reach(log: Sequence[dict], level: float) -> int | None:
    for row in log:
        if row["train_ic"] >= level:
            return row["step"]
    return None


def seeding_comparison(cfg: MineConfig, setup: Setup, seed_pool: str | Path, rng_seeds=range(5),
                       level: float = 0.5) -> dict:
    """Updates needed to reach ``level`` train IC with and without seeding
    from ``seed_pool``. Runs that never reach it count as ``cfg.updates + 1``."""
    train = setup.evalset("train")
    out = {"unseeded": [], "seeded": []}
    for s in rng_seeds:
        for name, extra in (("unseeded", {}), ("seeded", {"seed_pool": str(seed_pool)})):
            run_cfg = dataclasses.replace(cfg, rng_seed=s, target_ic=level, **extra)
            res = mine(run_cfg, train)
            hit = updates_to_reach(res.log, level)
            out[name].append(cfg.updates + 1 if hit is None else hit)
    out["median_unseeded"] = statistics.median(out["unseeded"])
    out["median_seeded"] = statistics.median(out["seeded"])
    return out
