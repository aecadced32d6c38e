"""Query-based entity-object triple extraction, end to end on synthetic data."""

__version__ = "0.1.0"
