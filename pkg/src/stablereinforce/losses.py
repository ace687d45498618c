"""Clipped policy-gradient surrogates: PPO, Reinforce++ and StableReinforce.

Every loss returns a :class:`LossReport` carrying both the per-token values and
``dlogp``, the derivative of each per-token loss w.r.t. ``logp_new``.  Losses
never sanitise non-finite values; they raise ``overflow_flag`` instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

DELTA_MIN = 1e-3
DELTA_MAX = 1e3


@dataclass
class LossReport:
    per_token_loss: np.ndarray
    mean_loss: float
    max_abs_ratio: float
    overflow_flag: bool
    clipped_fraction: float
    dlogp: np.ndarray
    mask: np.ndarray
    empty: bool = False

    @property
    def max_abs_token_loss(self) -> float:
        live = self.per_token_loss[self.mask > 0]
        return float(np.max(np.abs(live))) if live.size else 0.0


def _pair(logp_new, logp_old) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(logp_new, dtype=np.float64)
    b = np.asarray(logp_old, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def ratio_raw(logp_new, logp_old) -> np.ndarray:
    """``exp(logp_new - logp_old)``; may overflow to inf."""
    a, b = _pair(logp_new, logp_old)
    with np.errstate(over="ignore", invalid="ignore"):
        return np.exp(a - b)


def _check_bounds(delta_min: float, delta_max: float) -> None:
    if not (0 < delta_min <= 1 <= delta_max) or not math.isfinite(delta_max):
        raise ValueError(f"need 0 < delta_min <= 1 <= delta_max < inf, got {delta_min}, {delta_max}")


def ratio_preclip(logp_new, logp_old, delta_min: float = DELTA_MIN,
                  delta_max: float = DELTA_MAX) -> np.ndarray:
    """Clamp the log-ratio to ``[ln delta_min, ln delta_max]`` before exponentiating."""
    _check_bounds(delta_min, delta_max)
    a, b = _pair(logp_new, logp_old)
    lo, hi = math.log(delta_min), math.log(delta_max)
    ratio = np.exp(np.clip(a - b, lo, hi))
    # exp(log(x)) can land one ulp outside [delta_min, delta_max]
    return np.clip(ratio, delta_min, delta_max)


def _clipped_surrogate(ratio, dratio, advantages, epsilon, mask) -> LossReport:
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    adv = np.asarray(advantages, dtype=np.float64)
    if adv.shape != ratio.shape:
        raise ValueError(f"length mismatch: ratios {ratio.shape} vs advantages {adv.shape}")
    mask = np.ones_like(adv) if mask is None else np.asarray(mask, dtype=np.float64)
    if mask.shape != adv.shape:
        raise ValueError("mask length mismatch")

    with np.errstate(over="ignore", invalid="ignore"):
        surr1 = ratio * adv
        surr2 = np.clip(ratio, 1 - epsilon, 1 + epsilon) * adv
        clipped = surr2 < surr1
        per_token = -np.minimum(surr1, surr2)
        dlogp = np.where(clipped, 0.0, -adv * dratio)

    live = mask > 0
    n = int(live.sum())
    overflow = not (np.all(np.isfinite(per_token[live])) and np.all(np.isfinite(ratio[live])))
    if n:
        mean = float(np.sum(np.where(live, per_token, 0.0)) / n)
        clipped_frac = float(clipped[live].mean())
        max_ratio = float(np.max(np.abs(ratio[live])))
    else:
        mean, clipped_frac, max_ratio = 0.0, 0.0, 0.0
    return LossReport(per_token, mean, max_ratio, overflow, clipped_frac, dlogp, mask, empty=n == 0)


def ppo_clip_loss(ratios, advantages, epsilon: float = 0.1,
                  mask: Optional[np.ndarray] = None) -> LossReport:
    """Per-token ``-min(r * A, clip(r, 1 - eps, 1 + eps) * A)``, token-mean over the mask."""
    ratios = np.asarray(ratios, dtype=np.float64)
    return _clipped_surrogate(ratios, ratios, advantages, epsilon, mask)


def stable_reinforce_loss(logp_new, logp_old, filtered_advantages, mask=None,
                          epsilon: float = 0.1, delta_min: float = DELTA_MIN,
                          delta_max: float = DELTA_MAX) -> LossReport:
    """Clipped surrogate on the pre-clipped ratio.

    Filtered tokens (mask 0) drop out of both the sum and the token count, so
    every per-token magnitude is bounded by ``delta_max * max|A|``.
    """
    a, b = _pair(logp_new, logp_old)
    _check_bounds(delta_min, delta_max)
    ratio = ratio_preclip(a, b, delta_min, delta_max)
    diff = a - b
    inside = (diff >= math.log(delta_min)) & (diff <= math.log(delta_max))
    return _clipped_surrogate(ratio, np.where(inside, ratio, 0.0), filtered_advantages,
                              epsilon, mask)


def reinforce_pp_loss(logp_new, logp_old, normalized_advantages, epsilon: float = 0.1,
                      mask=None) -> LossReport:
    """The unmodified clipped surrogate on the raw ratio."""
    ratio = ratio_raw(logp_new, logp_old)
    return _clipped_surrogate(ratio, ratio, normalized_advantages, epsilon, mask)
