"""Rule-based rewards, token-level KL shaping and batch reward normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import ParseResult


@dataclass(frozen=True)
class RewardBreakdown:
    formatting: int
    result: int
    consistency: int
    final: float


def formatting_reward(parse: ParseResult) -> int:
    return int(parse.format_ok)


def result_reward(parse: ParseResult, ground_truth: int) -> int:
    return int(parse.final_answer is not None and parse.final_answer == ground_truth)


def consistency_reward(parse: ParseResult) -> int:
    """1 iff the think-span verdict and the final answer are both present and agree."""
    if parse.reasoning_verdict is None or parse.final_answer is None:
        return 0
    return int(parse.reasoning_verdict == parse.final_answer)


def composite_reward(result: int, consistency: int, formatting: int) -> float:
    """Consistency only pays out when the result is correct."""
    for name, v in (("result", result), ("consistency", consistency), ("formatting", formatting)):
        if v not in (0, 1):
            raise ValueError(f"{name} must be 0 or 1, got {v!r}")
    return result * (1 + 0.5 * consistency) + 0.5 * formatting


def score(parse: ParseResult, ground_truth: int) -> RewardBreakdown:
    f = formatting_reward(parse)
    r = result_reward(parse, ground_truth)
    c = consistency_reward(parse)
    return RewardBreakdown(f, r, c, composite_reward(r, c, f))


def shape_token_rewards(final: float, logp_actor, logp_ref, beta: float = 0.0) -> np.ndarray:
    """Per-token rewards: ``-beta * kl[t]`` everywhere plus ``final`` on the last token.

    ``kl[t]`` is the signed k1 estimate ``logp_actor[t] - logp_ref[t]``.
    """
    logp_actor = np.asarray(logp_actor, dtype=np.float64)
    logp_ref = np.asarray(logp_ref, dtype=np.float64)
    if logp_actor.shape != logp_ref.shape:
        raise ValueError("logp_actor and logp_ref must have equal length")
    if len(logp_actor) == 0:
        raise ValueError("empty trajectory")
    if beta < 0:
        raise ValueError("beta must be >= 0")
    out = -beta * (logp_actor - logp_ref) if beta else np.zeros(len(logp_actor))
    out[-1] += final
    return out


def batch_reward_normalize(rewards, clip: float = 5.0, enabled: bool = True,
                           eps: float = 1e-8) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=np.float64)
    if not enabled:
        return rewards.copy()
    if rewards.size < 2:
        raise ValueError("batch reward normalization needs at least 2 values")
    if not clip > 0:
        raise ValueError("clip must be positive")
    z = (rewards - rewards.mean()) / (rewards.std() + eps)
    return np.clip(z, -clip, clip)
