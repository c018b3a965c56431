"""Clipped-surrogate PPO over padded token episodes."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch

from alphaforge.search.episode import Episode
from alphaforge.search.policy import Policy, masked_log_softmax

log = logging.getLogger(__name__)


@dataclass
class PPOConfig:
    clip: float = 0.2
    gamma: float = 1.0
    gae_lambda: float = 0.95
    epochs: int = 4
    minibatch: int = 64            # episodes per gradient step
    lr: float = 3e-4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    bc_coef: float = 0.1           # behaviour cloning weight on seeded episodes
    bc_decay_updates: int = 50     # linear decay of bc_coef to 0


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    kl: float
    bc_loss: float = 0.0
    aborted: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def gae(rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and returns for one episode; the value after the last step is 0."""
    adv = np.zeros(len(rewards))
    nxt_v, run = 0.0, 0.0
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * nxt_v - values[t]
        run = delta + gamma * lam * run
        adv[t] = run
        nxt_v = values[t]
    return adv, adv + values


def _pad(episodes: Sequence[Episode], n_actions: int):
    B, L = len(episodes), max(len(e) for e in episodes)
    actions = torch.zeros((B, L), dtype=torch.long)
    masks = torch.ones((B, L, n_actions), dtype=torch.bool)
    valid = torch.zeros((B, L), dtype=torch.bool)
    for b, e in enumerate(episodes):
        n = len(e)
        actions[b, :n] = torch.as_tensor(e.actions)
        masks[b, :n] = torch.from_numpy(e.masks)
        valid[b, :n] = True
    return actions, masks, valid


def _evaluate(policy: Policy, actions, masks):
    logits, values, _ = policy(policy.shifted_inputs(actions))
    logp_all = masked_log_softmax(logits, masks)
    logp = logp_all.gather(-1, actions.unsqueeze(-1)).squeeze(-1)
    p = logp_all.exp()
    entropy = -(p * logp_all.masked_fill(~masks, 0.0)).sum(-1)
    return logp, values, entropy


def _bc_loss(policy: Policy, episodes: Sequence[Episode]) -> torch.Tensor:
    actions, masks, valid = _pad(episodes, policy.n_actions)
    logp, _, _ = _evaluate(policy, actions, masks)
    return -logp[valid].mean()


def ppo_update(policy: Policy, optimizer: torch.optim.Optimizer, episodes: Sequence[Episode],
               cfg: PPOConfig, rng: np.random.Generator, bc_episodes: Sequence[Episode] = (),
               bc_coef: float = 0.0) -> UpdateStats:
    if not episodes:
        raise ValueError("empty PPO batch")
    actions, masks, valid = _pad(episodes, policy.n_actions)
    B, L = actions.shape
    old_logp = torch.zeros((B, L))
    adv = torch.zeros((B, L))
    ret = torch.zeros((B, L))
    for b, e in enumerate(episodes):
        a, r = gae(e.rewards, e.values, cfg.gamma, cfg.gae_lambda)
        n = len(e)
        old_logp[b, :n] = torch.as_tensor(e.logprobs, dtype=torch.float32)
        adv[b, :n] = torch.as_tensor(a, dtype=torch.float32)
        ret[b, :n] = torch.as_tensor(r, dtype=torch.float32)
    flat = adv[valid]
    if flat.numel() > 1 and flat.std() > 1e-8:
        adv = torch.where(valid, (adv - flat.mean()) / (flat.std() + 1e-8), adv)

    snapshot = copy.deepcopy((policy.state_dict(), optimizer.state_dict()))
    stats = []
    for _ in range(cfg.epochs):
        order = rng.permutation(B)
        for lo in range(0, B, cfg.minibatch):
            idx = torch.as_tensor(order[lo:lo + cfg.minibatch])
            v_mb = valid[idx]
            logp, values, ent = _evaluate(policy, actions[idx], masks[idx])
            ratio = (logp - old_logp[idx]).exp()
            a_mb = adv[idx]
            surr = torch.minimum(ratio * a_mb, ratio.clamp(1 - cfg.clip, 1 + cfg.clip) * a_mb)
            pl = -surr[v_mb].mean()
            vl = ((values - ret[idx]) ** 2)[v_mb].mean()
            el = ent[v_mb].mean()
            loss = pl + cfg.value_coef * vl - cfg.entropy_coef * el
            bl = torch.zeros(())
            if bc_episodes and bc_coef > 0:
                bl = _bc_loss(policy, bc_episodes)
                loss = loss + bc_coef * bl
            if not torch.isfinite(loss):
                policy.load_state_dict(snapshot[0])
                optimizer.load_state_dict(snapshot[1])
                log.warning("non-finite PPO loss (policy %s, value %s, entropy %s); update skipped",
                            pl.item(), vl.item(), el.item())
                return UpdateStats(math.nan, math.nan, math.nan, math.nan, math.nan, aborted=True)
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(policy.parameters(), cfg.max_grad_norm)
            optimizer.step()
            stats.append((pl.item(), vl.item(), el.item(), bl.item()))

    with torch.no_grad():
        logp, _, _ = _evaluate(policy, actions, masks)
        log_r = (logp - old_logp)[valid]
        kl = float(((log_r.exp() - 1) - log_r).mean())
    pl, vl, el, bl = np.mean(stats, axis=0)
    return UpdateStats(float(pl), float(vl), float(el), kl, float(bl))
