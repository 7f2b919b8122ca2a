"""Accelerated decentralized primal-dual methods for conic-constrained consensus problems."""

__version__ = "0.1.0"
