"""Hybrid supervised / physics-informed value learning for a two-player intersection game."""
__version__ = "0.1.0"
