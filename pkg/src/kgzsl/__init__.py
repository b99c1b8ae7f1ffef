"""Inductive zero-shot learning over knowledge graphs."""

__version__ = "0.1.0"
