"""Approximate influence-based abstraction for factored POSGs."""

__version__ = "0.1.0"
