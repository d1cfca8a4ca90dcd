"""Task-aware graph construction for relational and tabular learning."""

__version__ = "0.1.0"
