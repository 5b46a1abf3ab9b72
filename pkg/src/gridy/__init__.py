"""Group integrative dynamic factor (GRIDY) models."""

__version__ = "0.1.0"
