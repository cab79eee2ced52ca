"""Medical report entity and negation tagging."""

__version__ = "0.1.0"
