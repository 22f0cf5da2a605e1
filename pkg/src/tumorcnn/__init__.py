"""Lightweight four-block CNN for MRI tumor classification, built on numpy."""

__version__ = "0.1.0"
