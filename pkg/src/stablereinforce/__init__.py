"""Policy-gradient toolkit for a synthetic preference-judgment task.

Implements the PPO clipped surrogate, Reinforce++ and StableReinforce
(pre-clipped ratios, 3-sigma advantage filter, consistency-gated reward).
"""

__version__ = "0.1.0"
