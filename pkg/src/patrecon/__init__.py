"""Model-based photoacoustic reconstruction and sensor-position robustness analysis."""

__version__ = "0.1.0"
