"""Multimodal dense retrieval that keeps image content the paired text does not mention."""

__version__ = "0.1.0"
