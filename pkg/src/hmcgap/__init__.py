"""Missing-annotation detection for hierarchical multi-label classification."""

__version__ = "0.1.0"
