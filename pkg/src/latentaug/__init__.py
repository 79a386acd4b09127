"""Latent-space augmentation and multi-teacher distillation toolkit with a
synthetic multi-domain forgery benchmark."""

__version__ = "0.1.0"
