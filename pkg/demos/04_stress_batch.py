"""
A crafted bad batch, with and without the clamp
===============================================

Take a real rollout, push one token's sampling log-prob 9.9 nats below its
current value and give it advantage -1.  Reinforce++ sees a ~2e4 token loss;
StableReinforce caps it at 1e3.
"""

from stablereinforce.experiments import stress_check
from stablereinforce.trainer import TrainConfig

cfg = TrainConfig(rollout_batch=64, train_batch=32, warmup_steps=100)
for mode, loss in stress_check(cfg).items():
    print(f"{mode:>13}: max |token loss| = {loss:.1f}")
