"""Quantum-feature graph kernels from simulated Rydberg-atom quench dynamics."""

__version__ = "0.1.0"
