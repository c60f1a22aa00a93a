"""Context-aware automated gating for flow cytometry data."""

__version__ = "0.1.0"
