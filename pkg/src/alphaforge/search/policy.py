"""Recurrent token policy with legal-action masking, and batched rollouts."""
from __future__ import annotations

from typing import Hashable, Protocol, Sequence

import numpy as np
import torch
from torch import nn

from alphaforge import dsl
from alphaforge.search.episode import Episode


class Policy(nn.Module):
    """Token embedding -> GRU -> linear policy and value heads.

    The input at step t is the action taken at step t-1 (a dedicated start
    symbol at t=0).
    """

    def __init__(self, n_actions: int = len(dsl.VOCAB), embed_dim: int = 32, hidden_dim: int = 64):
        super().__init__()
        self.n_actions = n_actions
        self.embed = nn.Embedding(n_actions + 1, embed_dim)
        self.gru = nn.GRU(embed_dim, hidden_dim, batch_first=True)
        self.pi = nn.Linear(hidden_dim, n_actions)
        self.v = nn.Linear(hidden_dim, 1)
        # zero value head: advantages of an all-zero-reward batch start at 0
        nn.init.zeros_(self.v.weight)
        nn.init.zeros_(self.v.bias)

    @property
    def start_symbol(self) -> int:
        return self.n_actions

    def forward(self, inputs: torch.Tensor, hidden: torch.Tensor | None = None):
        out, hidden = self.gru(self.embed(inputs), hidden)
        return self.pi(out), self.v(out).squeeze(-1), hidden

    def shifted_inputs(self, actions: torch.Tensor) -> torch.Tensor:
        start = torch.full_like(actions[:, :1], self.start_symbol)
        return torch.cat([start, actions[:, :-1]], dim=1)


def masked_log_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Illegal actions get log-probability -inf, i.e. probability exactly 0."""
    return logits.masked_fill(~mask, float("-inf")).log_softmax(dim=-1)


class MaskSource(Protocol):
    n_actions: int

    def initial(self) -> Hashable: ...
    def mask(self, state) -> np.ndarray: ...
    def step(self, state, action: int): ...        # None when the episode ends


class TokenMasks:
    """Legal next tokens for RPN formulas of at most ``max_len`` tokens."""

    def __init__(self, max_len: int = dsl.DEFAULT_MAX_LEN):
        self.max_len = max_len
        self.n_actions = len(dsl.VOCAB)
        self._sep = dsl.TOKEN_INDEX[dsl.SEP]
        self._cache: dict = {}

    def initial(self):
        return ((), 0)

    def mask(self, state) -> np.ndarray:
        m = self._cache.get(state)
        if m is None:
            stack, length = state
            m = np.zeros(self.n_actions, dtype=bool)
            m[list(dsl.legal_index_set(stack, self.max_len - length))] = True
            self._cache[state] = m
        return m

    def step(self, state, action: int):
        if action == self._sep:
            return None
        stack, length = state
        return dsl.apply_token(stack, dsl.VOCAB[action]), length + 1


def _sample(logp: np.ndarray, rng: np.random.Generator) -> int:
    p = np.exp(logp.astype(np.float64))
    cdf = np.cumsum(p)
    a = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    if a >= len(p):                           # u * total rounded up to total
        a = int(np.flatnonzero(p > 0)[-1])
    return a


@torch.no_grad()
def rollout_batch(policy: Policy, source: MaskSource, rngs: Sequence[np.random.Generator] | int,
                  greedy: bool = False, max_steps: int = 10_000) -> list[Episode]:
    """Sample one episode per rng in lockstep. Each episode draws only from
    its own generator, so results do not depend on batch composition."""
    n = rngs if isinstance(rngs, int) else len(rngs)
    states = [source.initial() for _ in range(n)]
    acts: list[list[int]] = [[] for _ in range(n)]
    masks: list[list[np.ndarray]] = [[] for _ in range(n)]
    lps: list[list[float]] = [[] for _ in range(n)]
    vals: list[list[float]] = [[] for _ in range(n)]
    inp = torch.full((n, 1), policy.start_symbol, dtype=torch.long)
    hidden = None
    for _ in range(max_steps):
        live = [i for i, s in enumerate(states) if s is not None]
        if not live:
            break
        logits, values, hidden = policy(inp, hidden)
        m = torch.from_numpy(np.stack([source.mask(s) if s is not None else np.ones(source.n_actions, bool)
                                       for s in states]))
        logp = masked_log_softmax(logits[:, 0], m).numpy()
        nxt = inp.clone()
        for i in live:
            a = int(np.argmax(logp[i])) if greedy else _sample(logp[i], rngs[i])
            acts[i].append(a)
            masks[i].append(m[i].numpy())
            lps[i].append(float(logp[i, a]))
            vals[i].append(float(values[i, 0]))
            states[i] = source.step(states[i], a)
            nxt[i, 0] = a
        inp = nxt
    else:
        raise RuntimeError("rollout did not terminate")
    return [Episode(acts[i], np.array(masks[i]), np.array(lps[i]), np.array(vals[i])) for i in range(n)]


def rollout(policy: Policy, source: MaskSource, rng: np.random.Generator, greedy: bool = False) -> Episode:
    return rollout_batch(policy, source, [rng], greedy)[0]


def greedy_formula(policy: Policy, max_len: int = dsl.DEFAULT_MAX_LEN) -> str:
    return rollout_batch(policy, TokenMasks(max_len), 1, greedy=True)[0].formula
