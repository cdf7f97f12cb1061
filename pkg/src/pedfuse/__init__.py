"""Multimodal spatio-temporal fusion models for pedestrian crossing-intention prediction."""

__version__ = "0.1.0"
