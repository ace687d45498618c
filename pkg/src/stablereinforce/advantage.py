"""Per-token advantages: returns-to-go, batch z-normalization and the 3-sigma filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rewards import batch_reward_normalize, shape_token_rewards


@dataclass
class AdvantageBatch:
    raw: np.ndarray
    standardized: np.ndarray
    filtered: np.ndarray
    mask: np.ndarray
    offsets: np.ndarray

    @property
    def filtered_fraction(self) -> float:
        return float(1.0 - self.mask.mean()) if self.mask.size else 0.0


def returns_to_go(token_rewards, gamma: float = 1.0) -> np.ndarray:
    rewards = np.asarray(token_rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("token_rewards must be non-empty")
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    if gamma == 1.0:
        return np.cumsum(rewards[::-1])[::-1].copy()
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def z_normalize(values, eps: float = 1e-8) -> np.ndarray:
    """``(v - mean) / (population_std + eps)``."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise ValueError("z_normalize needs at least 2 values")
    return (values - values.mean()) / (values.std() + eps)


def advantage_filter(standardized, sigma: float = 3.0) -> tuple[np.ndarray, np.ndarray]:
    """Zero out (and mask) entries with ``|z| > sigma``; the bound itself is kept."""
    z = np.asarray(standardized, dtype=np.float64)
    keep = np.abs(z) <= sigma
    return np.where(keep, z, 0.0), keep.astype(np.float64)


def compute_advantages(final_rewards, logp_actor, logp_ref, offsets, *, beta: float = 0.0,
                       gamma: float = 1.0, normalize: bool = True, filter: bool = True,
                       sigma: float = 3.0, reward_norm: bool = False, reward_clip: float = 5.0,
                       eps: float = 1e-8) -> AdvantageBatch:
    """Shape -> returns-to-go -> joint z-normalization over all tokens -> filter.

    ``logp_actor``/``logp_ref`` are flat over the batch, sliced by ``offsets``.
    With ``normalize=False`` the raw returns are used as advantages and the
    filter is skipped; with ``filter=False`` the z-scores pass through unmasked.
    """
    finals = np.asarray(final_rewards, dtype=np.float64)
    offsets = np.asarray(offsets)
    if finals.size == 0:
        raise ValueError("empty batch")
    if reward_norm:
        finals = batch_reward_normalize(finals, reward_clip, enabled=True, eps=eps)
    parts = []
    for i, (a, b) in enumerate(zip(offsets[:-1], offsets[1:])):
        shaped = shape_token_rewards(finals[i], logp_actor[a:b], logp_ref[a:b], beta)
        parts.append(returns_to_go(shaped, gamma))
    raw = np.concatenate(parts)
    if not normalize:
        return AdvantageBatch(raw, raw.copy(), raw.copy(), np.ones_like(raw), offsets)
    standardized = z_normalize(raw, eps)
    if filter:
        filtered, mask = advantage_filter(standardized, sigma)
    else:
        filtered, mask = standardized.copy(), np.ones_like(standardized)
    return AdvantageBatch(raw, standardized, filtered, mask, offsets)
