"""Grid path-planning benchmark with learned search-space pruning."""

__version__ = "0.1.0"
