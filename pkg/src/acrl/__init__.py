"""Adaptive-clarification RL lab: a synthetic captioner/reasoner world,
a tiered-reward clipped policy-gradient trainer, exact-gradient oracles and
an evaluation harness for clarification behaviour."""

__version__ = "0.1.0"
