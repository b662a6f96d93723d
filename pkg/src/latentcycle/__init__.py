"""Causal structure discovery with latent variables and cycles."""

__version__ = "0.1.0"
