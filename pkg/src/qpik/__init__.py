"""Collision-aware inverse kinematics by one small QP per control tick."""

__version__ = "0.1.0"
