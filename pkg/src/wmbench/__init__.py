"""Watermark-removal workbench: view-synthesis attack, reference schemes, baselines and evaluation."""

__version__ = "0.1.0"
