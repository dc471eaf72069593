"""Toy-scale joint generation of egocentric video and human motion."""

__version__ = "0.1.0"
