"""Discrete-event simulation and KPI analysis of ITS-G5 CAM beaconing networks."""

__version__ = "0.1.0"
