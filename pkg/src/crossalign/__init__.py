"""Cross-view contrastive alignment toolkit for open-vocabulary aerial detection."""

__version__ = "0.1.0"
