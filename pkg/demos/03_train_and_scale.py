"""
Training a toy reward model and sampling it more than once
==========================================================

A short stable-mode run on easy tasks, then greedy accuracy and the
Voting@K / Any@K curve on the held-out set.  Takes about ten seconds.
"""

import numpy as np

from stablereinforce.evaluation import evaluate_scaling, greedy_accuracy
from stablereinforce.trainer import TrainConfig, run_training

cfg = TrainConfig(mode="stable", gap_scale=2.0, total_steps=500, seed=0)
res = run_training(cfg)

h = res.history
print("reference accuracy:", greedy_accuracy(res.ref_params, res.eval_tasks))
print("trained accuracy:  ", greedy_accuracy(res.params, res.eval_tasks))

# responses get shorter as the policy stops padding its reasoning
first = np.mean([m.mean_response_length for m in h[:50]])
last = np.mean([m.mean_response_length for m in h[-50:]])
print(f"mean length {first:.2f} -> {last:.2f}")

curve = evaluate_scaling(res.params, res.eval_tasks, [1, 5, 15], np.random.default_rng(0))
for row in curve.records():
    print(row)
