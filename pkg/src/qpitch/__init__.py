"""Tabular Q-learning pitch-attitude control of a truss-braced-wing airliner."""

__version__ = "0.1.0"
