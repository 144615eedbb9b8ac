"""HyperTab - Hypernetwork-generated models for tabular data."""

__version__ = "0.1.0"
