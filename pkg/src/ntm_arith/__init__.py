"""Trainable differentiable-memory network for little-endian binary arithmetic."""

__version__ = "0.1.0"
