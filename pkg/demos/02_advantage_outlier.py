"""
One failure in a batch of successes
===================================

Z-scoring a batch where 255 rollouts earned reward 1 and one earned 0 turns the
lone failure into a -16 sigma advantage.  The 3-sigma filter drops it.
"""

import numpy as np

from stablereinforce.advantage import advantage_filter, compute_advantages, z_normalize

rewards = np.array([1.0] * 255 + [0.0])
z = z_normalize(rewards)
print("z of the failure:", round(float(z[-1]), 4))
print("z of a success:  ", round(float(z[0]), 6))

filtered, mask = advantage_filter(z)
print("after filtering: ", filtered[-1], "mask", mask[-1], "kept", int(mask.sum()))

# the same thing through the full pipeline, one token per rollout
offsets = np.arange(257)
zeros = np.zeros(256)
batch = compute_advantages(rewards, zeros, zeros, offsets)
print("filtered fraction:", batch.filtered_fraction)
