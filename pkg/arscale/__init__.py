"""Learning autoregressive systems from trajectories: simulation, operators, estimators and sweeps."""

__version__ = "0.1.0"
