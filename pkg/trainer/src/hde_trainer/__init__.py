"""Toy-scale neural high-d embedding trainer."""

__version__ = "0.1.0"
