"""Discovery of open-form PDEs from sparse, noisy field observations."""

__version__ = "0.1.0"
