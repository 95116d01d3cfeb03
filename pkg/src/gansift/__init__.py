"""Conditional GAN training, snapshot/sample sifting, and augmentation experiments."""

__version__ = "0.1.0"
