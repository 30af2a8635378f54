"""Sparse-array sensing and channel estimation for backscatter UAV swarms."""

__version__ = "0.1.0"
