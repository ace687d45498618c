"""Synthetic preference-judgment tasks, the output token grammar and its referee.

A task asks the policy to decide which of two hidden responses is better.
The only observable is a context vector whose first coordinate is a noisy
reading of the latent quality gap; the remaining coordinates are distractors.

Output grammar (one token per step)::

    THINK_OPEN  body...  THINK_CLOSE  ANSWER_OPEN  V1|V2  ANSWER_CLOSE  EOS

where ``body`` holds at least one token, only FILLER/verdict tokens, and at
least one verdict.  The last verdict in the body is the reasoning verdict.

Task serialization is JSON lines, one task per line with keys in this order::

    {"id": int, "context": [float, ...], "gap": float,
     "ground_truth": 1 | 2, "attempts_to_correct": 1 | 2 | 3 | "FAILED" | null}
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

FAILED = "FAILED"

# Absolute std of the observation noise on context[0].
CONTEXT_NOISE = 0.1


class Vocab(enum.IntEnum):
    THINK_OPEN = 0
    THINK_CLOSE = 1
    ANSWER_OPEN = 2
    ANSWER_CLOSE = 3
    V1 = 4
    V2 = 5
    FILLER_0 = 6
    FILLER_1 = 7
    FILLER_2 = 8
    FILLER_3 = 9
    EOS = 10

    @classmethod
    def from_name(cls, name: str) -> "Vocab":
        return cls[name]


VOCAB_SIZE = len(Vocab)
VERDICTS = (Vocab.V1, Vocab.V2)
FILLERS = (Vocab.FILLER_0, Vocab.FILLER_1, Vocab.FILLER_2, Vocab.FILLER_3)
STRUCTURAL = frozenset(
    {Vocab.THINK_OPEN, Vocab.THINK_CLOSE, Vocab.ANSWER_OPEN, Vocab.ANSWER_CLOSE, Vocab.EOS}
)


def verdict_token(choice: int) -> Vocab:
    if choice not in (1, 2):
        raise ValueError(f"choice must be 1 or 2, got {choice!r}")
    return Vocab.V1 if choice == 1 else Vocab.V2


def token_choice(token: int) -> Optional[int]:
    """Map a verdict token id to its choice, anything else to None."""
    if token == Vocab.V1:
        return 1
    if token == Vocab.V2:
        return 2
    return None


def encode(names: Iterable[str]) -> list[int]:
    return [int(Vocab[n]) for n in names]


def decode(tokens: Iterable[int]) -> list[str]:
    return [Vocab(int(t)).name for t in tokens]


@dataclass(frozen=True, eq=False)
class Task:
    id: int
    context: np.ndarray
    gap: float
    ground_truth: int
    attempts_to_correct: Optional[Union[int, str]] = None

    def __post_init__(self):
        if self.gap == 0:
            raise ValueError("gap must be nonzero")
        if self.ground_truth != (1 if self.gap > 0 else 2):
            raise ValueError("ground_truth inconsistent with sign of gap")
        if not np.all(np.isfinite(self.context)):
            raise ValueError("context must be finite")

    @property
    def dim(self) -> int:
        return int(self.context.shape[0])

    def __eq__(self, other):
        if not isinstance(other, Task):
            return NotImplemented
        return (
            self.id == other.id
            and self.gap == other.gap
            and self.ground_truth == other.ground_truth
            and self.attempts_to_correct == other.attempts_to_correct
            and np.array_equal(self.context, other.context)
        )

    __hash__ = None

    def to_record(self) -> dict:
        return {
            "id": int(self.id),
            "context": [float(v) for v in self.context],
            "gap": float(self.gap),
            "ground_truth": int(self.ground_truth),
            "attempts_to_correct": self.attempts_to_correct,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Task":
        attempts = rec.get("attempts_to_correct")
        if attempts is not None and attempts != FAILED:
            attempts = int(attempts)
        return cls(
            id=int(rec["id"]),
            context=np.asarray(rec["context"], dtype=np.float64),
            gap=float(rec["gap"]),
            ground_truth=int(rec["ground_truth"]),
            attempts_to_correct=attempts,
        )


def generate_task(rng_seed: int, gap_scale: float = 1.0, dim: int = 4) -> Task:
    """Draw one task deterministically from ``rng_seed``.

    The gap is ``gap_scale * N(0, 1)``; ``context[0] = gap + N(0, 0.1**2)`` and the
    other coordinates are standard-normal distractors.  The Bayes-optimal
    decision is ``sign(context[0])``.
    """
    if not gap_scale > 0:
        raise ValueError(f"gap_scale must be positive, got {gap_scale}")
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    rng = np.random.default_rng(rng_seed)
    gap = 0.0
    while gap == 0.0:
        gap = float(gap_scale * rng.standard_normal())
    context = rng.standard_normal(dim)
    context[0] = gap + CONTEXT_NOISE * context[0]
    return Task(id=int(rng_seed), context=context, gap=gap, ground_truth=1 if gap > 0 else 2)


def generate_tasks(start_seed: int, n: int, gap_scale: float = 1.0, dim: int = 4) -> list[Task]:
    return [generate_task(start_seed + i, gap_scale, dim) for i in range(n)]


def save_tasks(tasks: Sequence[Task], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for task in tasks:
            fh.write(json.dumps(task.to_record()) + "\n")


def load_tasks(path: Union[str, Path]) -> list[Task]:
    with open(path, encoding="utf-8") as fh:
        return [Task.from_record(json.loads(line)) for line in fh if line.strip()]


@dataclass(frozen=True)
class ParseResult:
    format_ok: bool
    reasoning_verdict: Optional[int]
    final_answer: Optional[int]
    length: int


def referee_parse(tokens: Sequence[int]) -> ParseResult:
    """Judge a token sequence: exact format, reasoning verdict and final answer.

    Never raises on malformed input; fields that cannot be recovered are None.
    """
    toks = [int(t) for t in tokens]
    if not toks:
        raise ValueError("tokens must be non-empty")
    for t in toks:
        if not 0 <= t < VOCAB_SIZE:
            raise ValueError(f"invalid token id {t}")

    reasoning = None
    body: Optional[list[int]] = None
    if Vocab.THINK_OPEN in toks:
        start = toks.index(Vocab.THINK_OPEN) + 1
        if Vocab.THINK_CLOSE in toks[start:]:
            end = toks.index(Vocab.THINK_CLOSE, start)
            body = toks[start:end]
            for t in body:
                if t in VERDICTS:
                    reasoning = token_choice(t)

    answer = None
    if Vocab.ANSWER_OPEN in toks:
        start = toks.index(Vocab.ANSWER_OPEN) + 1
        if Vocab.ANSWER_CLOSE in toks[start:]:
            end = toks.index(Vocab.ANSWER_CLOSE, start)
            verdicts = [t for t in toks[start:end] if t in VERDICTS]
            if len(verdicts) == 1:
                answer = token_choice(verdicts[0])

    format_ok = _matches_grammar(toks)
    return ParseResult(format_ok, reasoning, answer, len(toks))


def _matches_grammar(toks: list[int]) -> bool:
    n = len(toks)
    if n < 7 or toks[0] != Vocab.THINK_OPEN:
        return False
    tail = toks[-5:]
    if not (
        tail[0] == Vocab.THINK_CLOSE
        and tail[1] == Vocab.ANSWER_OPEN
        and tail[2] in VERDICTS
        and tail[3] == Vocab.ANSWER_CLOSE
        and tail[4] == Vocab.EOS
    ):
        return False
    body = toks[1:-5]
    if not body or any(t in STRUCTURAL for t in body):
        return False
    return any(t in VERDICTS for t in body)


def serialize(body: Sequence[int], answer: int) -> list[int]:
    """Build a well-formed sequence from a think body and an answer choice."""
    return [
        int(Vocab.THINK_OPEN),
        *(int(t) for t in body),
        int(Vocab.THINK_CLOSE),
        int(Vocab.ANSWER_OPEN),
        int(verdict_token(answer)),
        int(Vocab.ANSWER_CLOSE),
        int(Vocab.EOS),
    ]


def difficulty_filter(tasks: Sequence[Task], reference_policy, max_attempts: int = 3,
                      rng_seed: int = 0) -> list[Task]:
    """Keep tasks the reference policy needs >= 2 attempts for, or never solves.

    Each kept task is returned with ``attempts_to_correct`` set to the index of
    the first correct sample (2..max_attempts) or ``FAILED``.
    """
    from .policy import sample_batch

    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    if not tasks:
        return []
    rng = np.random.default_rng(rng_seed)
    contexts = np.stack([t.context for t in tasks])
    gts = np.array([t.ground_truth for t in tasks])
    first_correct = np.zeros(len(tasks), dtype=int)
    for attempt in range(1, max_attempts + 1):
        rollout = sample_batch(reference_policy, contexts, rng, temperature=1.0)
        answers = np.array([referee_parse(seq).final_answer or 0 for seq in rollout.sequences()])
        hit = (first_correct == 0) & (answers == gts)
        first_correct[hit] = attempt
    kept = []
    for task, k in zip(tasks, first_correct):
        if k == 1:
            continue
        kept.append(replace(task, attempts_to_correct=int(k) if k else FAILED))
    return kept
