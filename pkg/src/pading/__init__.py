"""Primitive-based generative zero-shot learning on ingested features."""

__version__ = "0.1.0"
