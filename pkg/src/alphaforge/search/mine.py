"""Mining loop: rollouts -> pool rewards -> PPO, with optional seeding."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from alphaforge import dsl, metrics
from alphaforge.pool import AlphaPool, EvalSet, combine_factors, read_pool_file
from alphaforge.search.episode import Episode, ExperienceBuffer
from alphaforge.search.policy import Policy, TokenMasks, rollout_batch
from alphaforge.search.ppo import PPOConfig, ppo_update
from alphaforge.search.reward import reward, seed_buffer

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class MineConfig:
    pool_size: int = 20
    max_len: int = dsl.DEFAULT_MAX_LEN
    updates: int = 500
    batch_size: int = 256
    rng_seed: int = 0
    target_ic: float | None = None      # stop once train IC reaches this
    commit_threshold: float = 0.0
    degenerate_penalty: float = -0.1
    buffer_capacity: int = 1024
    embed_dim: int = 32
    hidden_dim: int = 64
    seed_formulas: list[str] = field(default_factory=list)
    seed_pool: str | None = None        # pool file re-seeded into pool and buffer
    init_checkpoint: str | None = None  # policy (and buffer) to continue from
    fresh_policy: bool = True
    keep_buffer: bool = False
    checkpoint_every: int = 0
    ppo: PPOConfig = field(default_factory=PPOConfig)

    @classmethod
    def from_dict(cls, doc: dict) -> "MineConfig":
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown mine option(s): {', '.join(sorted(extra))}")
        doc = dict(doc)
        if "ppo" in doc:
            ppo_known = {f.name for f in fields(PPOConfig)}
            bad = set(doc["ppo"]) - ppo_known
            if bad:
                raise ConfigError(f"unknown ppo option(s): {', '.join(sorted(bad))}")
            doc["ppo"] = PPOConfig(**doc["ppo"])
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        checks = [
            (self.pool_size >= 1, "pool_size must be >= 1"),
            (self.max_len >= 1, "max_len must be >= 1"),
            (self.updates >= 0, "updates must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.buffer_capacity >= 1, "buffer_capacity must be >= 1"),
            (self.ppo.clip >= 0, "ppo.clip must be >= 0"),
            (self.ppo.lr > 0, "ppo.lr must be > 0"),
            (self.ppo.epochs >= 1 and self.ppo.minibatch >= 1, "ppo.epochs and ppo.minibatch must be >= 1"),
            (0 <= self.ppo.gae_lambda <= 1 and 0 <= self.ppo.gamma <= 1, "gamma and gae_lambda must lie in [0, 1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        for path in (self.seed_pool, self.init_checkpoint):
            if path is not None and not Path(path).exists():
                raise ConfigError(f"no such file: {path}")
        if not self.fresh_policy and self.init_checkpoint is None:
            raise ConfigError("continuing the policy needs init_checkpoint")


@dataclass
class MineResult:
    pool: AlphaPool
    log: list[dict]
    ledger: list[dict]              # one row per committed add, eviction deltas included
    policy: Policy
    buffer: ExperienceBuffer
    reached_at: int | None = None   # first step with train IC >= target_ic
    seconds: float = 0.0


def combined_ic(pool: AlphaPool, data: EvalSet) -> float | None:
    if not pool.entries:
        return None
    z = combine_factors([data.factor(e.expr) for e in pool.entries], pool.weights)
    try:
        return metrics.signal_ic(z, data.target).ic
    except metrics.MetricsError:
        return None


def _episode_rng(seed: int, update: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, update, index]))


def _parse_seeds(cfg: MineConfig) -> list[dsl.Node]:
    texts = list(cfg.seed_formulas)
    if cfg.seed_pool is not None:
        texts += [e["formula"] for e in read_pool_file(cfg.seed_pool)["entries"]]
    exprs = []
    for t in texts:
        e = dsl.parse(t)
        if e not in exprs:
            exprs.append(e)
    if len(exprs) > cfg.pool_size:
        raise ConfigError(f"{len(exprs)} seed alphas exceed pool size {cfg.pool_size}")
    return exprs


def save_checkpoint(path: str | Path, policy: Policy, optimizer, buffer: ExperienceBuffer, step: int) -> None:
    torch.save({"policy": policy.state_dict(), "optimizer": optimizer.state_dict(),
                "buffer": [e.to_dict() for e in buffer], "buffer_capacity": buffer.capacity,
                "step": step}, path)


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")


def mine(cfg: MineConfig, train: EvalSet, valid: EvalSet | None = None,
         out_dir: str | Path | None = None,
         callback: Callable[[int, Policy, AlphaPool], bool] | None = None) -> MineResult:
    """Run the search. ``callback(step, policy, pool)`` is called after every
    update; returning True stops the run."""
    cfg.validate()
    seeds = _parse_seeds(cfg)
    t0 = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(cfg.rng_seed)
    policy = Policy(len(dsl.VOCAB), cfg.embed_dim, cfg.hidden_dim)
    optimizer = torch.optim.Adam(policy.parameters(), lr=cfg.ppo.lr)
    buffer = ExperienceBuffer(cfg.buffer_capacity)
    if cfg.init_checkpoint is not None:
        ckpt = torch.load(cfg.init_checkpoint, weights_only=False)
        if not cfg.fresh_policy:
            policy.load_state_dict(ckpt["policy"])
            optimizer.load_state_dict(ckpt["optimizer"])
        if cfg.keep_buffer:
            buffer.extend(Episode.from_dict(d, cfg.max_len) for d in ckpt["buffer"])
    if cfg.keep_buffer and seeds:
        # stale experience is replayed alongside the new seeds
        for e in buffer:
            e.seeded = True

    source = TokenMasks(cfg.max_len)
    pool = AlphaPool(cfg.pool_size, train)
    ledger: list[dict] = []
    for r, e in zip(seed_buffer(buffer, seeds, pool, cfg.max_len, cfg.degenerate_penalty), seeds):
        if r.committed:
            ledger.append(_ledger_row(0, dsl.to_formula(e), r))

    history = [{"step": 0, "train_ic": pool.train_ic, "valid_ic": _valid(pool, valid),
                "pool_size": len(pool), "entropy": None, "kl": None}]
    reached = 0 if cfg.target_ic is not None and pool.train_ic >= cfg.target_ic else None

    for step in range(1, cfg.updates + 1):
        if reached is not None:
            break
        rngs = [_episode_rng(cfg.rng_seed, step, i) for i in range(cfg.batch_size)]
        episodes = rollout_batch(policy, source, rngs)
        for ep in episodes:
            expr = ep.expr
            r = reward(pool, expr, cfg.commit_threshold, cfg.degenerate_penalty)
            ep.reward = r.value
            if r.committed:
                ledger.append(_ledger_row(step, dsl.to_formula(expr), r))
            buffer.add(ep)
        decay = max(0.0, 1.0 - (step - 1) / cfg.ppo.bc_decay_updates) if cfg.ppo.bc_decay_updates > 0 else 0.0
        stats = ppo_update(policy, optimizer, episodes, cfg.ppo, _episode_rng(cfg.rng_seed, step, -1 % 2**32),
                           buffer.seeded(), cfg.ppo.bc_coef * decay)
        history.append({"step": step, "train_ic": pool.train_ic, "valid_ic": _valid(pool, valid),
                        "pool_size": len(pool), "entropy": _finite(stats.entropy), "kl": _finite(stats.kl)})
        if cfg.target_ic is not None and pool.train_ic >= cfg.target_ic:
            reached = step
        if callback is not None and callback(step, policy, pool):
            break
        if out is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(out / "checkpoint.pt", policy, optimizer, buffer, step)

    if out is not None:
        pool.save(out / "pool.json")
        _write_jsonl(out / "log.jsonl", history)
        _write_jsonl(out / "rewards.jsonl", ledger)
        save_checkpoint(out / "checkpoint.pt", policy, optimizer, buffer, history[-1]["step"])
    return MineResult(pool, history, ledger, policy, buffer, reached, time.perf_counter() - t0)


def _ledger_row(step: int, formula: str, r) -> dict:
    return {"step": step, "formula": formula, "delta_ic": r.value,
            "evicted": r.result.evicted, "eviction_delta": r.result.eviction_delta}


def _valid(pool: AlphaPool, valid: EvalSet | None) -> float | None:
    return None if valid is None else combined_ic(pool, valid)


def _finite(x: float) -> float | None:
    return x if math.isfinite(x) else None
