"""Coarse-to-fine hand mesh reconstruction with pixel-aligned spiral GCNs."""

__version__ = "0.1.0"
