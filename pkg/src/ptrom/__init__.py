"""Projection-tree reduced-order modeling for 2D Biot-Savart N-body dynamics."""

from .kernel import ParticleSystem, hamiltonian, kernel_pair, pairwise_velocity

__version__ = "0.1.0"

__all__ = ["ParticleSystem", "hamiltonian", "kernel_pair", "pairwise_velocity", "__version__"]
