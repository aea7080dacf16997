"""Adaptive ramp metering with a dead-beat parameter observer."""
__version__ = "0.1.0"
