"""Tripwire-based deception deployment and multi-step attack reconstruction."""

__version__ = "0.1.0"
