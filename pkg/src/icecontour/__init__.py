"""Mixture Contour Forecasting of sea-ice presence on gridded data."""
__version__ = "0.1.0"
