"""Learning multi-objective default forecasting-model configurations from offline evaluations."""

__version__ = "0.1.0"
