"""Curvature-adapted anisotropic surface remeshing toolkit."""

__version__ = "0.1.0"
