"""Desk-scale adaptive-layout-refinement GAN and its supporting tensor engine."""

__version__ = "0.1.0"
