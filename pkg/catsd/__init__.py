"""Top-level package for the synthetic continual segmentation lab."""

__version__ = "1.0.0"
