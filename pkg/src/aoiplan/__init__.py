"""AoI-aware radio resource management for connected vehicles and its effect on path planning."""

__version__ = "0.1.0"
