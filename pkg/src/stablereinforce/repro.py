"""Reference cases for the loss and normalization pathologies and the reward table.

Each case returns a :class:`CaseResult` listing expected vs computed values.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .advantage import advantage_filter, z_normalize
from .losses import DELTA_MAX, DELTA_MIN, ppo_clip_loss, ratio_preclip, ratio_raw
from .rewards import composite_reward

# Float slack for comparisons that sit exactly on a tolerance boundary.
FLOAT_SLACK = 1e-9

PPO_LOGP_NEW = [-0.1, -0.1, -0.1, -0.1]
PPO_LOGP_OLD = [-10.0, -0.2, -0.2, -5.0]
PPO_ADVANTAGES = [-1.0, -1.0, 0.5, -0.5]
PPO_EPSILON = 0.1
PPO_EXPECTED = [19930.4, 1.1, -0.5, 67.1]


@dataclass
class CaseResult:
    name: str
    rows: list  # (label, expected, computed, ok)

    @property
    def ok(self) -> bool:
        return all(r[3] for r in self.rows)

    def lines(self) -> list[str]:
        out = [f"{label}: expected {exp} computed {got} {'PASS' if ok else 'FAIL'}"
               for label, exp, got, ok in self.rows]
        out.append(f"{self.name}: {'PASS' if self.ok else 'FAIL'}")
        return out


def _close(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol + FLOAT_SLACK


def ppo_loss_example(tol: float = 0.05) -> CaseResult:
    rep = ppo_clip_loss(ratio_raw(PPO_LOGP_NEW, PPO_LOGP_OLD), PPO_ADVANTAGES, PPO_EPSILON)
    rows = [(f"loss[{i}]", exp, round(float(got), 4), _close(float(got), exp, tol))
            for i, (exp, got) in enumerate(zip(PPO_EXPECTED, rep.per_token_loss))]
    return CaseResult("ppo_loss_example", rows)


def znorm_example(tol: float = 0.01) -> CaseResult:
    values = np.array([1.0] * 255 + [0.0])
    z = z_normalize(values)
    filtered, mask = advantage_filter(z)
    rows = [
        ("z[zero reward]", -15.96, round(float(z[-1]), 4), _close(float(z[-1]), -15.96, tol)),
        ("filtered[zero reward]", 0.0, float(filtered[-1]), filtered[-1] == 0.0 and mask[-1] == 0),
        ("kept count", 255, int(mask.sum()), int(mask.sum()) == 255),
    ]
    return CaseResult("znorm_example", rows)


def preclip_bounds(n: int = 10_000, seed: int = 0) -> CaseResult:
    rng = np.random.default_rng(seed)
    diffs = np.concatenate([rng.uniform(-50, 50, n - 4), [1e6, -1e6, 9.9, -50.0]])
    r = ratio_preclip(diffs, np.zeros_like(diffs))
    rows = [
        ("all finite", True, bool(np.all(np.isfinite(r))), bool(np.all(np.isfinite(r)))),
        ("min ratio >= 1e-3", DELTA_MIN, float(r.min()), float(r.min()) >= DELTA_MIN),
        ("max ratio <= 1e3", DELTA_MAX, float(r.max()), float(r.max()) <= DELTA_MAX),
        ("log-diff 9.9", 1000.0, float(r[-2]), _close(float(r[-2]), 1000.0, 1e-6)),
    ]
    return CaseResult("preclip_bounds", rows)


def reward_table() -> CaseResult:
    rows = []
    for r, c, f in itertools.product((0, 1), repeat=3):
        expected = r * (1 + 0.5 * c) + 0.5 * f
        got = composite_reward(r, c, f)
        rows.append((f"result={r} consistency={c} formatting={f}", expected, got, got == expected))
    return CaseResult("reward_table", rows)


CASES = {
    "ppo_loss_example": ppo_loss_example,
    "znorm_example": znorm_example,
    "preclip_bounds": preclip_bounds,
    "reward_table": reward_table,
}
