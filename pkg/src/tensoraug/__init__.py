"""Tensor algebra, low-rank decompositions and Tucker-compressed attention for forecasting."""

__version__ = "0.1.0"
