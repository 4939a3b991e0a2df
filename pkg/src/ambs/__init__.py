"""Decomposed behavioral-similarity representation learning for pixel RL.

Two state encoders (reward-relevant and dynamics-relevant), similarity
meta-learners regressing behavioral distances, an adaptive weight balancing
the two branches learned jointly with an off-policy actor-critic, and an
exact tabular fixed-point solver for ground-truth behavioral metrics.
"""

__version__ = "0.1.0"
