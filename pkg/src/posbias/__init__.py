"""Position-bias analysis for passage retrieval collections and TK-style term encoders."""

__version__ = "0.1.0"
