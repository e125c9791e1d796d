"""Adaptive experience selection and RSSM-based forward planning for planar mobile manipulation."""

__version__ = "0.1.0"
