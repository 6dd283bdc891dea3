"""Numerical lab for drift-free chunked latent generation."""
