"""Episode rewards from pool-IC improvement, and buffer seeding."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable

from alphaforge import dsl
from alphaforge.pool import AddResult, AlphaPool
from alphaforge.search.episode import Episode, ExperienceBuffer

log = logging.getLogger(__name__)


@dataclass
class Reward:
    value: float
    result: AddResult
    committed: bool


def reward(pool: AlphaPool, expr: dsl.Node, commit_threshold: float = 0.0,
           penalty: float = -0.1) -> Reward:
    """Pool-IC change from adding ``expr`` to a copy of ``pool``.

    The copy replaces the pool's contents only when the change exceeds
    ``commit_threshold``; degenerate factors score ``penalty``.
    """
    trial = pool.copy()
    res = trial.add_factor(expr)
    if res.status in ("degenerate", "rejected"):
        return Reward(penalty, res, False)
    if res.status == "duplicate":
        return Reward(0.0, res, False)
    commit = res.delta_ic > commit_threshold
    if commit:
        pool.adopt(trial)
    return Reward(res.delta_ic, res, commit)


def seed_buffer(buffer: ExperienceBuffer, exprs: Iterable[dsl.Node], pool: AlphaPool,
                max_len: int = dsl.DEFAULT_MAX_LEN, penalty: float = -0.1) -> list[Reward]:
    """Add seed formulas to ``pool`` (unconditionally, as pool seeding does)
    and their episodes to ``buffer``.

    Seeds that cannot be written in the token alphabet within ``max_len``
    stay in the pool but are left out of the buffer.
    """
    out = []
    for expr in exprs:
        r = reward(pool, expr, commit_threshold=float("-inf"), penalty=penalty)
        out.append(r)
        if r.result.status in ("degenerate", "rejected"):
            log.warning("skipping seed alpha %s (%s)", dsl.to_formula(expr), r.result.status)
            continue
        try:
            ep = Episode.from_expr(expr, max_len, reward=r.value, seeded=True)
        except dsl.DSLError as exc:
            log.warning("seed alpha kept in pool but not in buffer: %s", exc)
            continue
        buffer.add(ep)
    return out
