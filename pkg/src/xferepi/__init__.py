"""Transfer learning for epidemic forecasting on simulated SIRD data."""

__version__ = "0.1.0"
