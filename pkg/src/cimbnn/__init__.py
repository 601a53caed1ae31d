"""Variation-aware binary neural networks on SRAM compute-in-memory arrays."""

__version__ = "0.1.0"
