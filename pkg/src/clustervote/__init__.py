"""Cluster-based multi-party computation voting: protocol, attacks, risk analytics, simulation."""

__version__ = "0.1.0"
