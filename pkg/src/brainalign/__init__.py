"""Functional alignment of brain responses with fused unbalanced
Gromov-Wasserstein transport, ridge decoding and retrieval evaluation."""

__version__ = "0.1.0"
