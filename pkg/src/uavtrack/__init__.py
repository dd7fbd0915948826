"""Multi-sensor quadcopter detection, tracking and localization."""

__version__ = "0.1.0"
