"""Multispectral (RGB + near-infrared) leaf-condition detection toolkit."""

__version__ = "0.1.0"
