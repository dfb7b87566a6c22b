"""Risk-aware traversability: learned speed distributions, risk maps and min-time planners."""

__version__ = "0.1.0"
