"""
Why an unclipped ratio overflows
================================

Four tokens, one of which was very unlikely when it was sampled.  The clipped
surrogate only caps the ratio on one side, so a negative advantage lets the
raw ratio through.
"""

import numpy as np

np.set_printoptions(suppress=True)

from stablereinforce.losses import ppo_clip_loss, ratio_preclip, ratio_raw, stable_reinforce_loss

logp_new = np.array([-0.1, -0.1, -0.1, -0.1])
logp_old = np.array([-10.0, -0.2, -0.2, -5.0])
adv = np.array([-1.0, -1.0, 0.5, -0.5])

# raw ratios: the first one is exp(9.9)
r = ratio_raw(logp_new, logp_old)
print("raw ratio       ", np.round(r, 4))
print("clipped loss    ", np.round(ppo_clip_loss(r, adv, 0.1).per_token_loss, 4))

# clamping the log-difference first keeps every ratio inside [1e-3, 1e3]
print("pre-clip ratio  ", np.round(ratio_preclip(logp_new, logp_old), 4))
rep = stable_reinforce_loss(logp_new, logp_old, adv, np.ones(4), 0.1)
print("pre-clip loss   ", np.round(rep.per_token_loss, 4))

# a log-difference of 800 is past float64 range for exp
print("overflow flag   ", ppo_clip_loss(ratio_raw([800.0], [0.0]), [-1.0], 0.1).overflow_flag)
