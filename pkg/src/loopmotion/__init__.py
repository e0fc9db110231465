"""Closed-loop text-driven motion planning and physics-based tracking."""

__version__ = "0.1.0"
