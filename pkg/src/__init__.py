"""Path-integral Monte Carlo simulator for the massless Nelson model."""

__version__ = "0.1.0"
