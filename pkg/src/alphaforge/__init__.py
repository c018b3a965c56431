"""Formulaic alpha mining: expression language, panel evaluation, IC-weighted
alpha pools, PPO search and a Top-K backtest."""
from alphaforge.dsl import parse, to_formula
from alphaforge.metrics import ic, rank_ic
from alphaforge.ops import evaluate
from alphaforge.panel import FeaturePanel, TargetPanel, compute_targets, ingest_csv, split
from alphaforge.pool import AlphaPool, EvalSet, combine

__version__ = "0.1.0"

__all__ = ["AlphaPool", "EvalSet", "FeaturePanel", "TargetPanel", "combine", "compute_targets", "evaluate",
           "ic", "ingest_csv", "parse", "rank_ic", "split", "to_formula"]
