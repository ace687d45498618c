"""Paired stable-vs-baseline runs and the crafted stress batch."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .trainer import (
    CollapseError,
    TrainConfig,
    TrainerState,
    attach_advantages,
    collect_rollouts,
    default_tasks,
    run_training,
    stress_batch,
    supervised_warmup,
    train_step,
)

DEMO_OVERRIDES = {"gap_scale": 0.25, "updates_per_rollout": 4}


@dataclass
class SeedOutcome:
    seed: int
    mode: str
    collapsed: bool
    first_collapse_step: Optional[int]
    overflow_events: int
    max_abs_token_loss: float
    all_losses_finite: bool
    final_eval_accuracy: Optional[float]
    error: Optional[str] = None

    def to_record(self) -> dict:
        rec = dict(self.__dict__)
        rec["first_collapse_step"] = (self.first_collapse_step
                                      if self.first_collapse_step is not None else "none")
        return rec


def stress_check(config: TrainConfig) -> dict[str, float]:
    """Max per-token loss of one train_step on a crafted batch, per mode.

    The batch is a real rollout from the warm-up policy with one token's old
    log-prob pushed 9.9 nats below its current value and its advantage set to -1.
    """
    _, warm, _ = default_tasks(config)
    rng = np.random.default_rng(config.seed)
    ref = supervised_warmup(warm, config, rng)
    tasks = warm[:config.rollout_batch]
    out = {}
    for mode in ("stable", "reinforce_pp"):
        cfg = replace(config, mode=mode)
        batch = attach_advantages(
            collect_rollouts(ref, ref, tasks, cfg, np.random.default_rng(config.seed)), cfg)
        state = TrainerState.create(ref, ref, cfg, np.random.default_rng(config.seed))
        _, metrics = train_step(state, stress_batch(batch), cfg)
        out[mode] = metrics.max_abs_token_loss
    return out


def run_seed(config: TrainConfig) -> SeedOutcome:
    try:
        res = run_training(config)
    except CollapseError as exc:
        return SeedOutcome(config.seed, config.mode, True, None, 0, float("nan"), False, None,
                           error=str(exc))
    h = res.history
    losses = [m.mean_policy_loss for m in h]
    return SeedOutcome(
        seed=config.seed,
        mode=config.mode,
        collapsed=res.collapsed,
        first_collapse_step=res.collapse_step,
        overflow_events=sum(m.overflow_events for m in h),
        max_abs_token_loss=max((m.max_abs_token_loss for m in h), default=0.0),
        all_losses_finite=bool(np.all(np.isfinite(losses))),
        final_eval_accuracy=h[-1].eval_accuracy if h else None,
    )


def collapse_demo(seeds: Sequence[int], base: TrainConfig,
                  modes: Sequence[str] = ("stable", "reinforce_pp")) -> list[SeedOutcome]:
    return [run_seed(replace(base, seed=int(s), mode=m)) for s in seeds for m in modes]
