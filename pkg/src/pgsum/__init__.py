"""Pointer-generator summarizer with an out-of-vocabulary generation penalty."""

__version__ = "0.1.0"
