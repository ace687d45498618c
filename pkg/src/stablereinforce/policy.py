"""Autoregressive log-linear sequence policy with exact analytic gradients.

Logits at each step are ``b[s, v] + w[s, v] . context`` where ``s`` is the
grammar-automaton state reached by the prefix.  The automaton state is a
total function of the prefix, so any token sequence can be scored.

Parameter file layout (text, UTF-8)::

    # stablereinforce-params states=<S> vocab=<V> dim=<d> hard_mask=<0|1>
    <S*V*(d+1) lines, one float each, repr precision>

The flat order is ``theta[s, v, j]`` in C order, with ``j = 0`` the bias and
``j = 1..d`` the context weights.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .env import VOCAB_SIZE, ParseResult, Vocab, referee_parse

DEFAULT_MAX_LEN = 32
MIN_MAX_LEN = 8


class InvalidTrajectoryError(ValueError):
    """A token is illegal for its automaton state under the hard mask."""


class State(enum.IntEnum):
    PRE_THINK = 0
    IN_BODY = 1
    BODY_CONCLUDED = 2  # inside the think span, at least one verdict seen
    POST_THINK = 3
    IN_ANSWER = 4
    ANSWER_GIVEN = 5  # inside the answer span, verdict emitted
    POST_ANSWER = 6


NUM_STATES = len(State)


def _transition_table() -> np.ndarray:
    nxt = np.tile(np.arange(NUM_STATES)[:, None], (1, VOCAB_SIZE))
    nxt[:, Vocab.THINK_OPEN] = State.IN_BODY
    nxt[:, Vocab.THINK_CLOSE] = State.POST_THINK
    nxt[:, Vocab.ANSWER_OPEN] = State.IN_ANSWER
    nxt[:, Vocab.ANSWER_CLOSE] = State.POST_ANSWER
    for v in (Vocab.V1, Vocab.V2):
        nxt[State.IN_BODY, v] = State.BODY_CONCLUDED
        nxt[State.IN_ANSWER, v] = State.ANSWER_GIVEN
    return nxt


def _legal_table() -> np.ndarray:
    legal = np.zeros((NUM_STATES, VOCAB_SIZE), dtype=bool)
    body = [Vocab.V1, Vocab.V2, Vocab.FILLER_0, Vocab.FILLER_1, Vocab.FILLER_2, Vocab.FILLER_3]
    legal[State.PRE_THINK, Vocab.THINK_OPEN] = True
    legal[State.IN_BODY, body] = True
    legal[State.BODY_CONCLUDED, body] = True
    legal[State.BODY_CONCLUDED, Vocab.THINK_CLOSE] = True
    legal[State.POST_THINK, Vocab.ANSWER_OPEN] = True
    legal[State.IN_ANSWER, [Vocab.V1, Vocab.V2]] = True
    legal[State.ANSWER_GIVEN, Vocab.ANSWER_CLOSE] = True
    legal[State.POST_ANSWER, Vocab.EOS] = True
    return legal


NEXT_STATE = _transition_table()
LEGAL = _legal_table()


def state_sequence(tokens) -> np.ndarray:
    """Automaton state *before* each token is emitted."""
    states = np.empty(len(tokens), dtype=np.int64)
    s = State.PRE_THINK
    for i, t in enumerate(tokens):
        states[i] = s
        s = NEXT_STATE[s, int(t)]
    return states


@dataclass
class PolicyParams:
    """Per-state, per-token bias and context weights, stored as ``theta[s, v, :]``."""

    theta: np.ndarray
    hard_mask: bool = False

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 3 or self.theta.shape[:2] != (NUM_STATES, VOCAB_SIZE):
            raise ValueError(f"theta must have shape ({NUM_STATES}, {VOCAB_SIZE}, d+1)")

    @property
    def dim(self) -> int:
        return self.theta.shape[2] - 1

    @property
    def bias(self) -> np.ndarray:
        return self.theta[..., 0]

    @property
    def weight(self) -> np.ndarray:
        return self.theta[..., 1:]

    @property
    def size(self) -> int:
        return self.theta.size

    @classmethod
    def zeros(cls, dim: int, hard_mask: bool = False) -> "PolicyParams":
        return cls(np.zeros((NUM_STATES, VOCAB_SIZE, dim + 1)), hard_mask)

    @classmethod
    def random(cls, rng: np.random.Generator, dim: int, scale: float = 1.0,
               hard_mask: bool = False) -> "PolicyParams":
        return cls(scale * rng.standard_normal((NUM_STATES, VOCAB_SIZE, dim + 1)), hard_mask)

    def flat(self) -> np.ndarray:
        return self.theta.ravel().copy()

    @classmethod
    def from_flat(cls, vec: np.ndarray, dim: int, hard_mask: bool = False) -> "PolicyParams":
        vec = np.asarray(vec, dtype=np.float64)
        expected = NUM_STATES * VOCAB_SIZE * (dim + 1)
        if vec.shape != (expected,):
            raise ValueError(f"flat vector must have length {expected}, got {vec.shape}")
        return cls(vec.reshape(NUM_STATES, VOCAB_SIZE, dim + 1).copy(), hard_mask)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.theta.copy(), self.hard_mask)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.theta)))

    def save(self, path: Union[str, Path]) -> None:
        header = (f"# stablereinforce-params states={NUM_STATES} vocab={VOCAB_SIZE} "
                  f"dim={self.dim} hard_mask={int(self.hard_mask)}\n")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(header)
            for v in self.theta.ravel():
                fh.write(repr(float(v)) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PolicyParams":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) < 2 or header[:2] != ["#", "stablereinforce-params"]:
                raise ValueError(f"{path}: not a parameter file")
            fields = dict(item.split("=", 1) for item in header[2:])
            if int(fields["states"]) != NUM_STATES or int(fields["vocab"]) != VOCAB_SIZE:
                raise ValueError(f"{path}: layout mismatch {fields}")
            values = np.array([float(line) for line in fh if line.strip()])
        return cls.from_flat(values, int(fields["dim"]), bool(int(fields["hard_mask"])))


def _check_context(params: PolicyParams, context: np.ndarray) -> np.ndarray:
    context = np.asarray(context, dtype=np.float64)
    if context.shape[-1] != params.dim:
        raise ValueError(f"context dimension {context.shape[-1]} != policy dimension {params.dim}")
    return context


def token_logits(params: PolicyParams, context: np.ndarray, state: int) -> np.ndarray:
    """Logits over the vocabulary; illegal tokens are -inf under the hard mask."""
    context = _check_context(params, context)
    if not np.all(np.isfinite(context)):
        raise ValueError("context must be finite")
    row = params.theta[int(state)]
    logits = row[:, 0] + row[:, 1:] @ context
    if params.hard_mask:
        logits = np.where(LEGAL[int(state)], logits, -np.inf)
    return logits


def _batched_logits(params: PolicyParams, contexts: np.ndarray, states: np.ndarray) -> np.ndarray:
    rows = params.theta[states]  # (N, V, d+1)
    logits = rows[..., 0] + np.einsum("nvd,nd->nv", rows[..., 1:], contexts)
    if params.hard_mask:
        logits = np.where(LEGAL[states], logits, -np.inf)
    return logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = np.max(logits, axis=-1, keepdims=True)
    z = logits - m
    with np.errstate(divide="ignore"):
        return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


@dataclass
class Rollout:
    """Flat token storage for a batch of sampled sequences.

    ``tokens[offsets[i]:offsets[i+1]]`` is sequence ``i``.
    """

    contexts: np.ndarray
    tokens: np.ndarray
    states: np.ndarray
    traj: np.ndarray
    offsets: np.ndarray
    logp: np.ndarray
    truncated: np.ndarray

    @property
    def batch_size(self) -> int:
        return len(self.offsets) - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def sequences(self) -> list[list[int]]:
        return [self.tokens[a:b].tolist() for a, b in zip(self.offsets[:-1], self.offsets[1:])]


def sample_batch(params: PolicyParams, contexts: np.ndarray, rng: np.random.Generator,
                 temperature: float = 1.0, max_len: int = DEFAULT_MAX_LEN) -> Rollout:
    """Sample one sequence per context row, vectorised across the batch.

    Each step draws one uniform per row (including finished rows) so the
    random stream is consumed identically regardless of termination pattern.
    Recorded log-probs are under the temperature-1 distribution.
    """
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    if max_len < MIN_MAX_LEN:
        raise ValueError(f"max_len must be >= {MIN_MAX_LEN}")
    contexts = _check_context(params, np.atleast_2d(contexts))
    B = contexts.shape[0]
    toks = np.full((B, max_len), -1, dtype=np.int64)
    sts = np.zeros((B, max_len), dtype=np.int64)
    lps = np.zeros((B, max_len))
    state = np.full(B, State.PRE_THINK, dtype=np.int64)
    alive = np.ones(B, dtype=bool)
    lengths = np.zeros(B, dtype=np.int64)
    for t in range(max_len):
        u = rng.random(B)
        if not alive.any():
            continue
        idx = np.flatnonzero(alive)
        logits = _batched_logits(params, contexts[idx], state[idx])
        logp1 = _log_softmax(logits)
        scaled = _log_softmax(logits / temperature)
        cum = np.cumsum(np.exp(scaled), axis=1)
        cum /= cum[:, -1:]
        chosen = np.argmax(cum > u[idx, None], axis=1)
        toks[idx, t] = chosen
        sts[idx, t] = state[idx]
        lps[idx, t] = logp1[np.arange(len(idx)), chosen]
        lengths[idx] += 1
        state[idx] = NEXT_STATE[state[idx], chosen]
        alive[idx[chosen == Vocab.EOS]] = False
    keep = toks >= 0
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    return Rollout(
        contexts=contexts,
        tokens=toks[keep],
        states=sts[keep],
        traj=np.repeat(np.arange(B), lengths),
        offsets=offsets,
        logp=lps[keep],
        truncated=alive.copy(),
    )


@dataclass
class Trajectory:
    task_id: int
    tokens: list
    logp_actor: np.ndarray
    logp_ref: Optional[np.ndarray] = None
    parse: Optional[ParseResult] = None
    reward: Optional[object] = None
    truncated: bool = False


def sample_sequence(params: PolicyParams, context: np.ndarray, temperature: float = 1.0,
                    max_len: int = DEFAULT_MAX_LEN, rng: Optional[np.random.Generator] = None,
                    task_id: int = -1) -> Trajectory:
    if rng is None:
        rng = np.random.default_rng()
    ro = sample_batch(params, np.asarray(context)[None, :], rng, temperature, max_len)
    tokens = ro.tokens.tolist()
    return Trajectory(task_id, tokens, ro.logp.copy(), parse=referee_parse(tokens),
                      truncated=bool(ro.truncated[0]))


def _check_legal(params: PolicyParams, states: np.ndarray, tokens: np.ndarray) -> None:
    if np.any((tokens < 0) | (tokens >= VOCAB_SIZE)):
        raise InvalidTrajectoryError("token id out of range")
    if params.hard_mask:
        bad = ~LEGAL[states, tokens]
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise InvalidTrajectoryError(
                f"token {Vocab(int(tokens[i])).name} at position {i} is illegal in state "
                f"{State(int(states[i])).name}")


def token_log_probs(params: PolicyParams, contexts: np.ndarray, ctx_index: np.ndarray,
                    states: np.ndarray, tokens: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flat-batch log pi(token | state, context) and full probability rows."""
    _check_legal(params, states, tokens)
    logits = _batched_logits(params, contexts[ctx_index], states)
    logp_all = _log_softmax(logits)
    return logp_all[np.arange(len(tokens)), tokens], np.exp(logp_all)


def weighted_grad(params: PolicyParams, contexts: np.ndarray, ctx_index: np.ndarray,
                  states: np.ndarray, tokens: np.ndarray, probs: np.ndarray,
                  coef: np.ndarray) -> np.ndarray:
    """Flat gradient of ``sum_t coef[t] * log pi(tokens[t])``.

    ``d log pi / d logits = onehot(token) - softmax``; masked tokens have zero
    probability and hence zero gradient.
    """
    n = len(tokens)
    g_logits = -probs * coef[:, None]
    g_logits[np.arange(n), tokens] += coef
    x = np.concatenate([np.ones((n, 1)), contexts[ctx_index]], axis=1)
    grad = np.zeros_like(params.theta)
    for s in range(NUM_STATES):
        sel = states == s
        if sel.any():
            grad[s] = g_logits[sel].T @ x[sel]
    return grad.ravel()


def log_prob(params: PolicyParams, context: np.ndarray, tokens) -> np.ndarray:
    """Per-token log-probabilities at temperature 1."""
    context = _check_context(params, context)
    tokens = np.asarray(tokens, dtype=np.int64)
    states = state_sequence(tokens)
    lp, _ = token_log_probs(params, context[None, :], np.zeros(len(tokens), dtype=np.int64),
                            states, tokens)
    return lp


def grad_log_prob(params: PolicyParams, context: np.ndarray, tokens,
                  per_token: bool = False) -> np.ndarray:
    """Gradient of the sequence log-likelihood w.r.t. the flat parameter vector.

    With ``per_token=True`` returns a ``(T, P)`` array whose row ``t`` is the
    gradient of ``log pi(tokens[t])`` alone; rows sum to the sequence gradient.
    """
    context = _check_context(params, context)
    tokens = np.asarray(tokens, dtype=np.int64)
    states = state_sequence(tokens)
    ctx_index = np.zeros(len(tokens), dtype=np.int64)
    _, probs = token_log_probs(params, context[None, :], ctx_index, states, tokens)
    if not per_token:
        return weighted_grad(params, context[None, :], ctx_index, states, tokens, probs,
                             np.ones(len(tokens)))
    rows = []
    for t in range(len(tokens)):
        coef = np.zeros(len(tokens))
        coef[t] = 1.0
        rows.append(weighted_grad(params, context[None, :], ctx_index, states, tokens, probs, coef))
    return np.stack(rows)


def greedy_decode(params: PolicyParams, context: np.ndarray,
                  max_len: int = DEFAULT_MAX_LEN) -> list[int]:
    """Argmax decoding; ties go to the lowest token id (``np.argmax`` semantics)."""
    context = _check_context(params, context)
    out: list[int] = []
    state = State.PRE_THINK
    for _ in range(max_len):
        tok = int(np.argmax(token_logits(params, context, state)))
        out.append(tok)
        if tok == Vocab.EOS:
            break
        state = NEXT_STATE[state, tok]
    return out


def greedy_decode_batch(params: PolicyParams, contexts: np.ndarray,
                        max_len: int = DEFAULT_MAX_LEN) -> list[list[int]]:
    contexts = _check_context(params, np.atleast_2d(contexts))
    B = contexts.shape[0]
    state = np.full(B, State.PRE_THINK, dtype=np.int64)
    alive = np.ones(B, dtype=bool)
    out: list[list[int]] = [[] for _ in range(B)]
    for _ in range(max_len):
        idx = np.flatnonzero(alive)
        if len(idx) == 0:
            break
        chosen = np.argmax(_batched_logits(params, contexts[idx], state[idx]), axis=1)
        for i, tok in zip(idx, chosen):
            out[i].append(int(tok))
        state[idx] = NEXT_STATE[state[idx], chosen]
        alive[idx[chosen == Vocab.EOS]] = False
    return out
