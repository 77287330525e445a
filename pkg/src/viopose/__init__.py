"""Audiovisual violin-performance 4D pose estimation."""

__version__ = "0.1.0"
