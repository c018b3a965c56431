"""Command line entry point: ingest, mine, eval, backtest, report."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import statistics
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from alphaforge import backtest as bt
from alphaforge import dsl, metrics, plots
from alphaforge import panel as pn
from alphaforge.experiments import Setup, load_setup, pool_size_sweep
from alphaforge.ops import FactorMatrix
from alphaforge.pool import PoolError, combine, read_pool_file
from alphaforge.search import ConfigError, MineConfig, mine

log = logging.getLogger("alphaforge")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


class CLIError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


# -- config ------------------------------------------------------------------

def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"no such config file: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: top level must be an object")
    unknown = set(doc) - {"data", "split", "mine", "backtest", "out_dir"}
    if unknown:
        raise ConfigError(f"{p}: unknown section(s) {', '.join(sorted(unknown))}")
    return doc


def out_dir(args, cfg: dict) -> Path:
    """Flag, then ALPHAFORGE_OUT, then config, then ./alphaforge_out."""
    chosen = args.out or os.environ.get("ALPHAFORGE_OUT") or cfg.get("out_dir") or "alphaforge_out"
    path = Path(chosen)
    path.mkdir(parents=True, exist_ok=True)
    return path


def data_section(args, cfg: dict) -> dict:
    data = dict(cfg.get("data", {}))
    if getattr(args, "panel", None):
        data = {"panel": args.panel, "horizon": data.get("horizon", 20)}
    if not data:
        raise ConfigError("no data configured: pass --panel or a config with a data section")
    return data


def read_seed_file(path: str) -> list[str]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"no such seed file: {p}")
    formulas = []
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            dsl.parse(text)
        except dsl.DSLError as exc:
            raise ConfigError(f"{p}:{lineno}: invalid formula: {exc}") from None
        formulas.append(text)
    return formulas


def mine_config(args, cfg: dict) -> MineConfig:
    mc = MineConfig.from_dict(cfg.get("mine", {}))
    over = {}
    for flag, name in (("pool_size", "pool_size"), ("rng_seed", "rng_seed"), ("updates", "updates"),
                       ("batch_size", "batch_size"), ("max_len", "max_len"), ("target_ic", "target_ic"),
                       ("seed_pool", "seed_pool"), ("init_checkpoint", "init_checkpoint")):
        v = getattr(args, flag, None)
        if v is not None:
            over[name] = v
    if args.keep_buffer:
        over["keep_buffer"] = True
    if args.fresh_policy is not None:
        over["fresh_policy"] = args.fresh_policy
    if args.seed_alphas:
        over["seed_formulas"] = list(mc.seed_formulas) + read_seed_file(args.seed_alphas)
    mc = dataclasses.replace(mc, **over)
    mc.validate()
    return mc


# -- commands ----------------------------------------------------------------

def cmd_ingest(args) -> int:
    cfg = load_config(args.config)
    data = cfg.get("data", {})
    csv_path = args.csv or data.get("csv")
    if not csv_path:
        raise ConfigError("ingest needs --csv or data.csv in the config")
    schema = json.loads(args.schema) if args.schema else data.get("schema")
    panel = pn.ingest_csv(csv_path, schema)
    out = out_dir(args, cfg)
    checksum = panel.save(out / "panel.npz")
    info = {"n_stocks": panel.n_stocks, "n_days": panel.n_days, "first_date": panel.dates[0],
            "last_date": panel.dates[-1], "checksum": checksum, "path": str(out / "panel.npz")}
    (out / "panel.json").write_text(json.dumps(info, indent=2) + "\n")
    print(f"n={panel.n_stocks} T={panel.n_days} span={panel.dates[0]}..{panel.dates[-1]} sha256={checksum}")
    return EXIT_OK


def cmd_mine(args) -> int:
    cfg = load_config(args.config)
    mc = mine_config(args, cfg)
    setup = load_setup(data_section(args, cfg), cfg.get("split"))
    out = out_dir(args, cfg)
    if args.pool_sizes:
        res = pool_size_sweep(mc, setup, args.pool_sizes, out / "sweep")
        s = res["summary"]
        for k, tr, va in zip(s["sizes"], s["train_ic"], s["valid_ic"]):
            print(f"k={k} train_ic={tr:.6f} valid_ic={_fmt(va)}")
        print(f"train_ic non-decreasing in k: {s['train_ic_monotone']}")
        return EXIT_OK
    run_dir = out / (args.name or f"mine_seed{mc.rng_seed}")
    res = mine(mc, setup.evalset("train"), setup.evalset("valid"), run_dir)
    (run_dir / "config.json").write_text(json.dumps(mc.to_dict(), indent=2) + "\n")
    plots.pool_size_sweep({mc.pool_size: res.log}, run_dir / "training.png")
    print(json.dumps({"pool": str(run_dir / "pool.json"), "train_ic": res.pool.train_ic,
                      "valid_ic": res.log[-1]["valid_ic"], "pool_size": len(res.pool),
                      "updates": res.log[-1]["step"]}))
    return EXIT_OK


def _fmt(v) -> str:
    return "nan" if v is None else f"{v:.6f}"


def _load_pairs(path: str) -> tuple[dict, list[tuple[dsl.Node, float]]]:
    if not Path(path).exists():
        raise ConfigError(f"no such pool file: {path}")
    doc = read_pool_file(path)
    pairs = []
    for item in doc["entries"]:
        try:
            pairs.append((dsl.parse(item["formula"]), float(item["weight"])))
        except dsl.DSLError as exc:
            raise pn.DataError(f"{path}: formula {item['formula']!r} cannot be evaluated on this panel: {exc}") from None
    if not pairs:
        raise PoolError(f"{path}: pool is empty")
    return doc, pairs


def _signal(setup: Setup, pairs) -> np.ndarray:
    return combine(pairs, setup.panel).values


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    setup = load_setup(data_section(args, cfg), cfg.get("split"))
    out = out_dir(args, cfg)
    view = setup.views[args.split]
    y = view.take(setup.target.returns)
    rows = []
    for path in args.pool:
        _, pairs = _load_pairs(path)
        z = view.take(_signal(setup, pairs))
        rep = metrics.signal_ic(z, y)
        rows.append({"pool": path, "split": args.split, "ic": rep.ic, "rank_ic": rep.rank_ic,
                     "days_used": rep.days_used})
        print(f"{path}: ic={rep.ic:.6f} rank_ic={rep.rank_ic:.6f} days={rep.days_used}")
        if args.export_factors:
            fdir = out / "factors"
            fdir.mkdir(exist_ok=True)
            FactorMatrix(view.take(_signal(setup, pairs))).to_csv(fdir / f"{Path(path).stem}_{args.split}.csv",
                                                      view.materialize())
    summary = {"split": args.split, "runs": rows}
    for key in ("ic", "rank_ic"):
        vals = [r[key] for r in rows]
        mean = statistics.fmean(vals)
        std = statistics.stdev(vals) if len(vals) > 1 else 0.0
        summary[key] = {"mean": mean, "std": std}
        print(f"{key} mean={mean:.6f} std={std:.6f} (n={len(vals)})")
    (out / f"eval_{args.split}.json").write_text(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def backtest_params(args, cfg: dict) -> bt.BacktestParams:
    doc = dict(cfg.get("backtest", {}))
    for flag, name in (("top_k", "top_k"), ("swap_n", "swap_n"), ("min_hold", "min_hold_days"),
                       ("threshold", "enter_threshold"), ("start", "start"), ("end", "end"),
                       ("fee_bps", "fee_bps"), ("capital", "initial_capital")):
        v = getattr(args, flag)
        if v is not None:
            doc[name] = v
    known = {f.name for f in dataclasses.fields(bt.BacktestParams)}
    bad = set(doc) - known
    if bad:
        raise ConfigError(f"unknown backtest option(s): {', '.join(sorted(bad))}")
    try:
        return bt.BacktestParams(**doc)
    except bt.BacktestError as exc:
        raise ConfigError(str(exc)) from None


def cmd_backtest(args) -> int:
    cfg = load_config(args.config)
    params = backtest_params(args, cfg)
    if args.benchmark and not Path(args.benchmark).exists():
        raise ConfigError(f"no such benchmark file: {args.benchmark}")
    setup = load_setup(data_section(args, cfg), cfg.get("split"))
    out = out_dir(args, cfg) / "backtest"
    _, pairs = _load_pairs(args.pool)
    rep = bt.run_backtest(_signal(setup, pairs), setup.panel, params)
    bench = bt.read_benchmark(args.benchmark) if args.benchmark else bt.equal_weight_benchmark(setup.panel)
    paths = bt.report(rep, bench, out)
    (out / "params.json").write_text(json.dumps(dataclasses.asdict(params), indent=2) + "\n")
    summary = json.loads(paths["json"].read_text())
    print(f"total_return={summary['total_return']:.6f} benchmark={summary['benchmark_total_return']:.6f} "
          f"max_drawdown={summary['max_drawdown']:.6f} trades={summary['trades']}")
    return EXIT_OK


def cmd_report(args) -> int:
    """Re-render figures from finished runs found under the given directories."""
    made = []
    for d in map(Path, args.runs):
        if not d.is_dir():
            raise ConfigError(f"no such run directory: {d}")
        logs = {}
        for f in sorted(d.rglob("log.jsonl")):
            pool_file = f.parent / "pool.json"
            label = f"k={read_pool_file(pool_file)['capacity']}" if pool_file.exists() else f.parent.name
            logs[label] = [json.loads(x) for x in f.read_text().splitlines() if x.strip()]
        if logs:
            made.append(plots.pool_size_sweep(logs, d / "ic_curves.png"))
        for f in sorted(d.rglob("backtest.csv")):
            made.append(plots.cumulative_returns(pd.read_csv(f), f.with_suffix(".png")))
    if not made:
        raise ConfigError("no training logs or backtest outputs found")
    for p in made:
        print(p)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(json.dumps({"error": "usage", "code": EXIT_CONFIG, "message": f"{self.prog}: {message}"}),
              file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="alphaforge", description="Formulaic alpha mining toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory (overrides ALPHAFORGE_OUT and config)")
        if data:
            p.add_argument("--panel", help="panel cache written by `ingest`")
        return p

    p = common(sub.add_parser("ingest", help="parse a bar CSV into a panel cache"), data=False)
    p.add_argument("--csv")
    p.add_argument("--schema", help='JSON column map, e.g. {"date": "Date"}')
    p.set_defaults(func=cmd_ingest)

    p = common(sub.add_parser("mine", help="search for an alpha pool"))
    p.add_argument("--pool-size", type=int)
    p.add_argument("--rng-seed", type=int)
    p.add_argument("--updates", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--target-ic", type=float)
    p.add_argument("--seed-alphas", help="text file, one formula per line, # comments")
    p.add_argument("--seed-pool", help="pool file to re-seed pool and buffer from")
    p.add_argument("--init-checkpoint")
    p.add_argument("--keep-buffer", action="store_true")
    p.add_argument("--fresh-policy", dest="fresh_policy", action="store_true", default=None)
    p.add_argument("--continue-policy", dest="fresh_policy", action="store_false")
    p.add_argument("--pool-sizes", type=int, nargs="+", help="run a pool-size sweep instead")
    p.add_argument("--name", help="run directory name under the output directory")
    p.set_defaults(func=cmd_mine)

    p = common(sub.add_parser("eval", help="IC of saved pools on a split"))
    p.add_argument("--pool", nargs="+", required=True)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--export-factors", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("backtest", help="Top-K/Swap-N backtest of a pool's signal"))
    p.add_argument("--pool", required=True)
    p.add_argument("--benchmark", help="CSV with columns date, level")
    p.add_argument("--top-k", type=int)
    p.add_argument("--swap-n", type=int)
    p.add_argument("--min-hold", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--start")
    p.add_argument("--end")
    p.add_argument("--fee-bps", type=float)
    p.add_argument("--capital", type=float)
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("report", help="render figures for finished runs")
    p.add_argument("runs", nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def _classify(exc: BaseException) -> tuple[int, str]:
    if isinstance(exc, CLIError):
        return exc.code, exc.kind
    if isinstance(exc, (ConfigError, bt.BacktestError)):
        return EXIT_CONFIG, "config"
    if isinstance(exc, (pn.DataError, dsl.DSLError)):
        return EXIT_DATA, "data"
    return EXIT_RUNTIME, "runtime"


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one error line
        code, kind = _classify(exc)
        msg = " ".join(str(exc).split())
        print(json.dumps({"error": kind, "code": code, "message": msg}), file=sys.stderr)
        if args.verbose:
            log.exception("details")
        return code


if __name__ == "__main__":
    sys.exit(main())
