"""Token-sequence search for alpha formulas with a PPO agent."""
from alphaforge.search.episode import Episode, ExperienceBuffer
from alphaforge.search.mine import ConfigError, MineConfig, MineResult, combined_ic, mine
from alphaforge.search.policy import Policy, TokenMasks, greedy_formula, rollout, rollout_batch
from alphaforge.search.ppo import PPOConfig, UpdateStats, gae, ppo_update
from alphaforge.search.reward import Reward, reward, seed_buffer

__all__ = [
    "ConfigError", "Episode", "ExperienceBuffer", "MineConfig", "MineResult", "PPOConfig", "Policy",
    "Reward", "TokenMasks", "UpdateStats", "combined_ic", "gae", "greedy_formula", "mine",
    "ppo_update", "reward", "rollout", "rollout_batch", "seed_buffer",
]
