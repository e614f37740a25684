"""Unsupervised saliency from refined handcrafted pseudo-labels."""

__version__ = "0.1.0"
