"""Probabilistic MLP forecasters, a learning-curve metadataset and the
analysis layers built on it (multi-fidelity HPO replay, grid fANOVA)."""

__version__ = "0.1.0"
