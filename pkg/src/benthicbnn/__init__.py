"""Probabilistic benthic habitat models from bathymetry with uncertainty-driven sampling."""

__version__ = "0.1.0"
