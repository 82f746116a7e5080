"""Desk-scale tactile RL workbench: PPO with self-supervised auxiliary objectives."""

__version__ = "0.1.0"
