"""Simulator for centralized, synchronous and asynchronous federated learning on non-IID HAR data."""

__version__ = "0.1.0"
