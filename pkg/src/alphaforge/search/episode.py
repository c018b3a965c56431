"""Episodes of token actions and the bounded experience buffer."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from alphaforge import dsl


@dataclass
class Episode:
    actions: list[int]                    # indices into the action alphabet
    masks: np.ndarray                     # (steps, n_actions) legal actions per step
    logprobs: np.ndarray | None = None    # behaviour policy, None for seeded episodes
    values: np.ndarray | None = None
    reward: float = 0.0
    seeded: bool = False
    info: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def rewards(self) -> np.ndarray:
        """Terminal-only reward vector."""
        r = np.zeros(len(self.actions))
        r[-1] = self.reward
        return r

    # formula-token episodes ------------------------------------------------

    @property
    def tokens(self) -> list[dsl.Token]:
        return [dsl.BEG] + [dsl.VOCAB[a] for a in self.actions]

    @property
    def expr(self) -> dsl.Node:
        return dsl.from_tokens(self.tokens)

    @property
    def formula(self) -> str:
        return dsl.to_formula(self.expr)

    @classmethod
    def from_expr(cls, expr: dsl.Node, max_len: int = dsl.DEFAULT_MAX_LEN, reward: float = 0.0,
                  seeded: bool = True) -> "Episode":
        """Episode that emits ``expr``; raises DSLError if it is not reachable
        under the token alphabet and length budget."""
        tokens = dsl.to_tokens(expr)[1:]
        if not dsl.in_vocab(tokens):
            raise dsl.DSLError(f"{dsl.to_formula(expr)} uses literals outside the token grid")
        state, masks, actions = dsl.PrefixState(), [], []
        for tok in tokens:
            legal = dsl.legal_index_set(state.stack, max_len - state.length)
            idx = dsl.TOKEN_INDEX[tok]
            if idx not in legal:
                raise dsl.DSLError(f"{dsl.to_formula(expr)} does not fit in {max_len} tokens")
            m = np.zeros(len(dsl.VOCAB), dtype=bool)
            m[list(legal)] = True
            masks.append(m)
            actions.append(idx)
            if tok is not dsl.SEP:
                state = state.push(tok)
        return cls(actions, np.array(masks), reward=reward, seeded=seeded)

    def to_dict(self) -> dict:
        return {"actions": list(map(int, self.actions)), "reward": self.reward, "seeded": self.seeded}

    @classmethod
    def from_dict(cls, doc: dict, max_len: int = dsl.DEFAULT_MAX_LEN) -> "Episode":
        expr = dsl.from_tokens([dsl.BEG] + [dsl.VOCAB[int(a)] for a in doc["actions"]])
        return cls.from_expr(expr, max_len, doc["reward"], doc["seeded"])


class ExperienceBuffer:
    """FIFO buffer of finished episodes; the oldest are dropped at capacity."""

    def __init__(self, capacity: int = 1024):
        if capacity < 1:
            raise ValueError("buffer capacity must be positive")
        self.capacity = capacity
        self._items: deque[Episode] = deque(maxlen=capacity)

    def add(self, ep: Episode) -> None:
        self._items.append(ep)

    def extend(self, eps: Iterable[Episode]) -> None:
        self._items.extend(eps)

    def clear(self) -> None:
        self._items.clear()

    def seeded(self) -> list[Episode]:
        return [e for e in self._items if e.seeded]

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[Episode]:
        return iter(self._items)
