"""On-policy training loop for StableReinforce, Reinforce++ and the ablations.

Modes differ only in two switches:

============  =========  ================
mode          pre-clip   advantage filter
============  =========  ================
stable        yes        yes
reinforce_pp  no         no
wo_preclip    no         yes
wo_filter     yes        no
============  =========  ================
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import env
from .advantage import AdvantageBatch, compute_advantages
from .env import Task, Vocab, difficulty_filter, referee_parse
from .evaluation import greedy_accuracy
from .losses import LossReport, reinforce_pp_loss, stable_reinforce_loss
from .policy import (
    PolicyParams,
    Rollout,
    Trajectory,
    sample_batch,
    state_sequence,
    token_log_probs,
    weighted_grad,
)
from .rewards import RewardBreakdown, score

log = logging.getLogger(__name__)

MODES = ("stable", "reinforce_pp", "wo_preclip", "wo_filter")

# Disjoint seed ranges for the task streams of a run.
TRAIN_SEED_BASE = 0
WARMUP_SEED_BASE = 500_000_000
EVAL_SEED_BASE = 900_000_000
SEED_STRIDE = 1_000_000


class CollapseError(RuntimeError):
    """Raised when stable mode diverges; that indicates a bug, not a finding."""


@dataclass
class TrainConfig:
    mode: str = "stable"
    rollout_batch: int = 256
    train_batch: int = 128
    updates_per_rollout: int = 4
    learning_rate: float = 1e-3
    beta_kl: float = 0.0
    epsilon: float = 0.1
    delta_min: float = 1e-3
    delta_max: float = 1e3
    sigma: float = 3.0
    gamma: float = 1.0
    max_len: int = 32
    seed: int = 0
    total_steps: int = 500
    # task stream
    gap_scale: float = 2.0
    dim: int = 4
    pool_size: int = 4096
    difficulty_filter: bool = True
    max_attempts: int = 3
    eval_size: int = 500
    eval_every: int = 50
    # reference policy warm-up
    warmup_steps: int = 200
    warmup_lr: float = 0.05
    warmup_batch: int = 64
    # policy / pipeline switches
    hard_mask: bool = False
    normalize_advantages: bool = True
    reward_norm: bool = False
    reward_clip: float = 5.0
    # optimizer
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.train_batch > self.rollout_batch:
            raise ValueError("train_batch must be <= rollout_batch")
        for name in ("rollout_batch", "train_batch", "updates_per_rollout", "learning_rate",
                     "delta_min", "delta_max", "sigma", "gamma", "max_len", "gap_scale",
                     "dim", "pool_size", "max_attempts", "eval_size", "warmup_lr",
                     "warmup_batch", "reward_clip"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("beta_kl", "total_steps", "warmup_steps", "eval_every", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must be in (0, 1)")

    @property
    def preclip(self) -> bool:
        return self.mode in ("stable", "wo_filter")

    @property
    def advantage_filter(self) -> bool:
        return self.mode in ("stable", "wo_preclip")

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Return ``params`` after one descent step on ``grad``."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class StepMetrics:
    step: int
    mean_policy_loss: float
    mean_final_reward: float
    mean_response_length: float
    eval_accuracy: Optional[float]
    overflow_events: int
    filtered_fraction: float
    clipped_fraction: float
    max_abs_token_loss: float
    format_rate: float
    result_rate: float
    consistency_rate: float
    params_finite: bool = True

    def to_record(self) -> dict:
        return asdict(self)


@dataclass
class RolloutBatch:
    task_ids: np.ndarray
    ground_truth: np.ndarray
    rollout: Rollout
    logp_ref: np.ndarray
    parses: list
    rewards: list
    advantages: Optional[AdvantageBatch] = None

    @property
    def size(self) -> int:
        return self.rollout.batch_size

    @property
    def logp_old(self) -> np.ndarray:
        return self.rollout.logp

    @property
    def finals(self) -> np.ndarray:
        return np.array([r.final for r in self.rewards])

    def trajectories(self) -> list[Trajectory]:
        out = []
        for i, (a, b) in enumerate(zip(self.rollout.offsets[:-1], self.rollout.offsets[1:])):
            out.append(Trajectory(
                task_id=int(self.task_ids[i]),
                tokens=self.rollout.tokens[a:b].tolist(),
                logp_actor=self.rollout.logp[a:b].copy(),
                logp_ref=self.logp_ref[a:b].copy(),
                parse=self.parses[i],
                reward=self.rewards[i],
                truncated=bool(self.rollout.truncated[i]),
            ))
        return out


@dataclass
class TrainerState:
    params: PolicyParams
    ref_params: PolicyParams
    optimizer: Adam
    rng: np.random.Generator
    step: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def create(cls, params: PolicyParams, ref_params: PolicyParams, config: TrainConfig,
               rng: np.random.Generator) -> "TrainerState":
        opt = Adam(params.size, config.learning_rate, config.adam_beta1, config.adam_beta2,
                   config.adam_eps)
        return cls(params.copy(), ref_params.copy(), opt, rng)


def collect_rollouts(params: PolicyParams, ref_params: PolicyParams, tasks: Sequence[Task],
                     config: TrainConfig, rng: np.random.Generator) -> RolloutBatch:
    """One temperature-1 trajectory per task, scored and with reference log-probs."""
    contexts = np.stack([t.context for t in tasks])
    ro = sample_batch(params, contexts, rng, temperature=1.0, max_len=config.max_len)
    logp_ref, _ = token_log_probs(ref_params, contexts, ro.traj, ro.states, ro.tokens)
    gts = np.array([t.ground_truth for t in tasks])
    parses = [referee_parse(seq) for seq in ro.sequences()]
    rewards = [score(p, gt) for p, gt in zip(parses, gts)]
    return RolloutBatch(np.array([t.id for t in tasks]), gts, ro, logp_ref, parses, rewards)


def attach_advantages(batch: RolloutBatch, config: TrainConfig) -> RolloutBatch:
    batch.advantages = compute_advantages(
        batch.finals, batch.rollout.logp, batch.logp_ref, batch.rollout.offsets,
        beta=config.beta_kl, gamma=config.gamma,
        normalize=config.normalize_advantages, filter=config.advantage_filter,
        sigma=config.sigma, reward_norm=config.reward_norm, reward_clip=config.reward_clip)
    return batch


def policy_loss(logp_new, logp_old, adv: np.ndarray, mask: np.ndarray,
                config: TrainConfig) -> LossReport:
    if config.preclip:
        return stable_reinforce_loss(logp_new, logp_old, adv, mask, config.epsilon,
                                     config.delta_min, config.delta_max)
    return reinforce_pp_loss(logp_new, logp_old, adv, config.epsilon, mask)


def train_step(state: TrainerState, batch: RolloutBatch,
               config: TrainConfig) -> tuple[TrainerState, StepMetrics]:
    """Several passes of shuffled mini-batch updates against the fixed rollout log-probs.

    ``logp_old`` is the rollout's sampling-time log-prob and is never refreshed,
    so the ratio drifts further from 1 with every update.  A mini-batch whose
    loss overflows is counted as an overflow event and skipped.
    """
    if batch.advantages is None:
        raise ValueError("batch has no advantages; call attach_advantages first")
    ro = batch.rollout
    adv = batch.advantages
    logp_old = ro.logp
    flat = state.params.flat()
    losses, clipped, max_tok = [], [], 0.0
    overflow = 0
    finite = True
    for _ in range(config.updates_per_rollout):
        perm = state.rng.permutation(batch.size)
        for start in range(0, batch.size, config.train_batch):
            chosen = np.zeros(batch.size, dtype=bool)
            chosen[perm[start:start + config.train_batch]] = True
            sel = chosen[ro.traj]
            params = PolicyParams.from_flat(flat, state.params.dim, state.params.hard_mask)
            logp_new, probs = token_log_probs(params, ro.contexts, ro.traj[sel], ro.states[sel],
                                              ro.tokens[sel])
            rep = policy_loss(logp_new, logp_old[sel], adv.filtered[sel], adv.mask[sel], config)
            losses.append(rep.mean_loss)
            clipped.append(rep.clipped_fraction)
            max_tok = max(max_tok, rep.max_abs_token_loss)
            if rep.overflow_flag:
                overflow += 1
                continue
            n_live = rep.mask.sum()
            if n_live == 0:
                continue
            coef = rep.mask * rep.dlogp / n_live
            grad = weighted_grad(params, ro.contexts, ro.traj[sel], ro.states[sel],
                                 ro.tokens[sel], probs, coef)
            flat = state.optimizer.step(flat, grad)
            if not np.all(np.isfinite(flat)):
                finite = False
                break
        if not finite:
            break
    state.params = PolicyParams.from_flat(flat, state.params.dim, state.params.hard_mask)
    state.step += 1
    finals = batch.finals
    metrics = StepMetrics(
        step=state.step,
        mean_policy_loss=float(np.mean(losses)) if losses else 0.0,
        mean_final_reward=float(finals.mean()),
        mean_response_length=float(ro.lengths.mean()),
        eval_accuracy=None,
        overflow_events=overflow,
        filtered_fraction=adv.filtered_fraction,
        clipped_fraction=float(np.mean(clipped)) if clipped else 0.0,
        max_abs_token_loss=max_tok,
        format_rate=float(np.mean([r.formatting for r in batch.rewards])),
        result_rate=float(np.mean([r.result for r in batch.rewards])),
        consistency_rate=float(np.mean([r.consistency for r in batch.rewards])),
        params_finite=finite,
    )
    return state, metrics


def stress_batch(batch: RolloutBatch, gap: float = 9.9, advantage: float = -1.0,
                 index: int = 0) -> RolloutBatch:
    """Copy of ``batch`` where one token's old log-prob sits ``gap`` below its current value.

    Reproduces the large-ratio, negative-advantage situation that blows up the
    unclipped surrogate.
    """
    ro = batch.rollout
    logp = ro.logp.copy()
    logp[index] -= gap
    adv = batch.advantages
    filtered, mask = adv.filtered.copy(), adv.mask.copy()
    filtered[index] = advantage
    mask[index] = 1.0
    return replace(
        batch,
        rollout=replace(ro, logp=logp),
        advantages=replace(adv, filtered=filtered, mask=mask),
    )


def detect_collapse(history: Sequence, max_len: int = 32,
                    window: int = 10) -> tuple[bool, Optional[int]]:
    """Collapse = a non-finite loss or parameters, or length pinned near ``max_len``.

    Returns ``(collapsed, first_step)``; for the length rule the first step of
    the sustained window is reported.
    """
    run_start, run = None, 0
    for rec in history:
        rec = rec if isinstance(rec, dict) else rec.to_record()
        step = rec["step"]
        loss = rec.get("mean_policy_loss")
        if loss is None or not math.isfinite(loss) or not rec.get("params_finite", True):
            return True, step
        if rec["mean_response_length"] >= 0.95 * max_len:
            if run == 0:
                run_start = step
            run += 1
            if run >= window:
                return True, run_start
        else:
            run = 0
    return False, None


def warmup_sequence(task: Task, rng: np.random.Generator) -> list[int]:
    """A correct, well-formed demonstration with a random-length think body."""
    fillers = [int(f) for f in env.FILLERS]
    body = [fillers[i] for i in rng.integers(0, 4, size=rng.integers(0, 4))]
    body.append(int(env.verdict_token(task.ground_truth)))
    body += [fillers[i] for i in rng.integers(0, 4, size=rng.integers(0, 3))]
    return env.serialize(body, task.ground_truth)


def supervised_warmup(tasks: Sequence[Task], config: TrainConfig,
                      rng: np.random.Generator) -> PolicyParams:
    """Maximum-likelihood fit on demonstrations; yields the reference policy."""
    params = PolicyParams.zeros(config.dim, config.hard_mask)
    opt = Adam(params.size, config.warmup_lr, config.adam_beta1, config.adam_beta2,
               config.adam_eps)
    flat = params.flat()
    for _ in range(config.warmup_steps):
        idx = rng.integers(0, len(tasks), size=config.warmup_batch)
        seqs = [warmup_sequence(tasks[i], rng) for i in idx]
        tokens = np.concatenate(seqs)
        states = np.concatenate([state_sequence(s) for s in seqs])
        ctx_index = np.repeat(np.arange(len(seqs)), [len(s) for s in seqs])
        contexts = np.stack([tasks[i].context for i in idx])
        params = PolicyParams.from_flat(flat, config.dim, config.hard_mask)
        _, probs = token_log_probs(params, contexts, ctx_index, states, tokens)
        coef = np.full(len(tokens), -1.0 / len(tokens))
        flat = opt.step(flat, weighted_grad(params, contexts, ctx_index, states, tokens,
                                            probs, coef))
    return PolicyParams.from_flat(flat, config.dim, config.hard_mask)


def default_tasks(config: TrainConfig) -> tuple[list[Task], list[Task], list[Task]]:
    """(training pool, warm-up pool, held-out eval set) for a config."""
    base = config.seed * SEED_STRIDE
    pool = env.generate_tasks(TRAIN_SEED_BASE + base, config.pool_size, config.gap_scale,
                              config.dim)
    warm = env.generate_tasks(WARMUP_SEED_BASE + base, config.pool_size, config.gap_scale,
                              config.dim)
    held = env.generate_tasks(EVAL_SEED_BASE, config.eval_size, config.gap_scale, config.dim)
    return pool, warm, held


@dataclass
class TrainingResult:
    params: PolicyParams
    ref_params: PolicyParams
    history: list
    collapsed: bool
    collapse_step: Optional[int]
    train_tasks: list
    eval_tasks: list


def run_training(config: TrainConfig, task_source=None,
                 on_step: Optional[Callable[[StepMetrics], None]] = None,
                 on_checkpoint: Optional[Callable[[int, PolicyParams], None]] = None,
                 stress_step: Optional[int] = None) -> TrainingResult:
    """Warm-up, difficulty filtering, then ``total_steps`` of collect/advantage/update.

    ``task_source`` may override the default task streams with a
    ``(pool, warmup, held_out)`` triple.  ``stress_step`` replaces that step's
    rollout with :func:`stress_batch` of it.

    Raises:
        CollapseError: stable mode produced a collapse signature.
    """
    config.validate()
    pool, warm, held = task_source if task_source is not None else default_tasks(config)
    seeds = np.random.SeedSequence(config.seed).spawn(4)
    warm_rng, filter_rng, roll_rng, shuffle_rng = (np.random.default_rng(s) for s in seeds)

    ref = supervised_warmup(warm, config, warm_rng)
    if config.total_steps == 0:
        return TrainingResult(ref, ref, [], False, None, list(pool), list(held))

    train_tasks = list(pool)
    if config.difficulty_filter:
        filtered = difficulty_filter(pool, ref, config.max_attempts,
                                     int(filter_rng.integers(2**31)))
        if filtered:
            train_tasks = filtered
        else:
            log.warning("difficulty filter removed every task; training on the full pool")
    log.info("training on %d of %d tasks", len(train_tasks), len(pool))

    state = TrainerState.create(ref, ref, config, shuffle_rng)
    order = roll_rng.permutation(len(train_tasks))
    cursor = 0
    collapsed, collapse_step = False, None
    for step in range(1, config.total_steps + 1):
        picked = []
        while len(picked) < config.rollout_batch:
            if cursor == len(order):
                order = roll_rng.permutation(len(train_tasks))
                cursor = 0
            take = order[cursor:cursor + config.rollout_batch - len(picked)]
            picked.extend(train_tasks[i] for i in take)
            cursor += len(take)
        batch = attach_advantages(
            collect_rollouts(state.params, state.ref_params, picked, config, roll_rng), config)
        if stress_step == step:
            batch = stress_batch(batch)
        state, metrics = train_step(state, batch, config)
        periodic = config.eval_every > 0 and step % config.eval_every == 0
        if periodic or step == config.total_steps:
            metrics.eval_accuracy = greedy_accuracy(state.params, held, config.max_len)
        state.history.append(metrics)
        if on_step is not None:
            on_step(metrics)
        if on_checkpoint is not None and config.checkpoint_every and step % config.checkpoint_every == 0:
            on_checkpoint(step, state.params)
        if not collapsed:
            collapsed, collapse_step = detect_collapse(state.history, config.max_len)
            if collapsed:
                if config.mode == "stable":
                    raise CollapseError(f"stable mode collapsed at step {collapse_step}")
                log.warning("%s collapsed at step %s", config.mode, collapse_step)
        if not metrics.params_finite:
            break
    return TrainingResult(state.params, state.ref_params, state.history, collapsed,
                          collapse_step, train_tasks, list(held))
