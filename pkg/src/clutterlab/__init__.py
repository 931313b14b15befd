"""Physically compliant cluttered tabletop scene generation with reinforcement learning."""

__version__ = "0.1.0"
