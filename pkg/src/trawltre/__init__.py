"""Trawl processes, telescoping ratio estimation and Chebyshev posterior sampling."""

__version__ = "0.1.0"
