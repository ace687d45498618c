"""Greedy accuracy and test-time scaling (Voting@K, Any@K)."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .env import Task, referee_parse
from .policy import DEFAULT_MAX_LEN, PolicyParams, greedy_decode_batch, sample_batch


def greedy_accuracy(params: PolicyParams, tasks: Sequence[Task],
                    max_len: int = DEFAULT_MAX_LEN) -> float:
    """Fraction of tasks whose greedy final answer matches the ground truth.

    A missing answer (malformed output) counts as wrong.
    """
    if not tasks:
        raise ValueError("tasks must be non-empty")
    seqs = greedy_decode_batch(params, np.stack([t.context for t in tasks]), max_len)
    hits = sum(referee_parse(s).final_answer == t.ground_truth for s, t in zip(seqs, tasks))
    return hits / len(tasks)


def vote_at_k(answers: Sequence[Optional[int]]) -> Optional[int]:
    """Majority over present answers; ties go to whichever tied choice appeared first."""
    present = [a for a in answers if a is not None]
    if not present:
        return None
    counts = Counter(present)
    top = max(counts.values())
    for a in present:
        if counts[a] == top:
            return a
    raise AssertionError("unreachable")


def any_at_k(answers: Sequence[Optional[int]], ground_truth: int) -> bool:
    return any(a is not None and a == ground_truth for a in answers)


@dataclass
class ScalingCurve:
    ks: list
    vote_accuracy: list
    any_accuracy: list
    n: int
    seed: Optional[int]
    answers: Optional[list] = None  # per-task sample answers, kept for auditing

    def records(self) -> list[dict]:
        return [
            {"k": k, "vote_acc": v, "any_acc": a, "n": self.n}
            for k, v, a in zip(self.ks, self.vote_accuracy, self.any_accuracy)
        ]


def sample_answers(params: PolicyParams, tasks: Sequence[Task], k: int,
                   rng: np.random.Generator, max_len: int = DEFAULT_MAX_LEN) -> list[list]:
    """``k`` temperature-1 final answers per task, in sampling order."""
    contexts = np.stack([t.context for t in tasks])
    per_task: list[list] = [[] for _ in tasks]
    for _ in range(k):
        ro = sample_batch(params, contexts, rng, temperature=1.0, max_len=max_len)
        for i, seq in enumerate(ro.sequences()):
            per_task[i].append(referee_parse(seq).final_answer)
    return per_task


def evaluate_scaling(params: PolicyParams, tasks: Sequence[Task], ks: Sequence[int],
                     rng: np.random.Generator, max_len: int = DEFAULT_MAX_LEN,
                     seed: Optional[int] = None) -> ScalingCurve:
    """Draw ``max(ks)`` samples per task once and score every k on its prefix."""
    if not tasks:
        raise ValueError("tasks must be non-empty")
    ks = [int(k) for k in ks]
    if not ks or min(ks) < 1:
        raise ValueError("ks must be positive integers")
    answers = sample_answers(params, tasks, max(ks), rng, max_len)
    vote, anyc = [], []
    for k in ks:
        v = sum(vote_at_k(a[:k]) == t.ground_truth for a, t in zip(answers, tasks))
        c = sum(any_at_k(a[:k], t.ground_truth) for a, t in zip(answers, tasks))
        vote.append(v / len(tasks))
        anyc.append(c / len(tasks))
    return ScalingCurve(ks, vote, anyc, len(tasks), seed, answers)
