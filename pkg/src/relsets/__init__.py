"""Semantic relational set abstractions over labeled feature vectors."""

__version__ = "0.1.0"
