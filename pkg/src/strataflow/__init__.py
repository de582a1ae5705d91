"""Differential inclusions on stratified polyhedral domains."""

__version__ = "0.1.0"
