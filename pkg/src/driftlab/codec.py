"""Lossy encode/decode surrogate for a video VAE.

The encoder is a fixed full-rank affine map. The decoder inverts it and then
applies the round-trip loss ``x -> mu + gamma (x - mu) + eta`` with
``eta ~ N(0, noise_sigma^2)``, so ``k`` noiseless round-trips contract the
deviation from ``mu`` by ``gamma**k``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._rng import stream
from ._validation import as_chunk
from .exceptions import ConfigError, DimensionError


class LossyCodec(TransformerMixin, BaseEstimator):
    """Affine codec with a contraction-plus-noise round-trip loss.

    Parameters
    ----------
    dim : int
        Pixel and latent dimension (the maps are square).
    gamma : float in (0, 1]
        Contraction toward ``mean`` applied on every decode.
    noise_sigma : float >= 0
        Std of the additive decode noise.
    mean : array of shape (dim,) or None
        Pixel-space point the round-trip contracts toward; zeros if None.
    seed : int
        Seeds the affine map and the per-round-trip noise streams.
    """

    def __init__(self, dim=32, gamma=0.97, noise_sigma=0.005, mean=None, seed=0):
        self.dim = dim
        self.gamma = gamma
        self.noise_sigma = noise_sigma
        self.mean = mean
        self.seed = seed

    def fit(self, X=None, y=None):
        """Draw the affine map. ``X`` is only used to infer ``dim`` when it is None."""
        dim = self.dim
        if dim is None:
            if X is None:
                raise ConfigError("dim is None and no data to infer it from")
            dim = as_chunk(X, "X").shape[1]
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.noise_sigma < 0.0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        dim = int(dim)
        rng = stream(self.seed, "codec", "affine")
        q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
        q *= np.sign(np.diag(r))
        scales = rng.uniform(0.8, 1.25, size=dim)
        self.matrix_ = q * scales
        self.inverse_ = (q / scales).T
        self.offset_ = rng.normal(scale=0.1, size=dim)
        mean = np.zeros(dim) if self.mean is None else np.asarray(self.mean, dtype=float)
        if mean.shape != (dim,):
            raise ConfigError(f"mean must have shape ({dim},), got {mean.shape}")
        self.mean_ = mean
        self.n_features_in_ = dim
        self.reset_counters()
        return self

    def reset_counters(self):
        self.n_encoded_ = 0
        self.n_decoded_ = 0

    @property
    def is_lossless(self):
        return self.gamma == 1.0 and self.noise_sigma == 0.0

    def _frames(self, x, name):
        check_is_fitted(self, "matrix_")
        arr = np.asarray(x, dtype=np.float64)
        if arr.shape[-1:] != (self.n_features_in_,):
            raise DimensionError(f"{name}: last axis must be {self.n_features_in_}, got shape {arr.shape}")
        as_chunk(arr.reshape(-1, self.n_features_in_), name)
        return arr

    def encode(self, frames):
        """Map pixel frames (..., dim) to latents (..., dim)."""
        x = self._frames(frames, "frames")
        self.n_encoded_ += x.size // self.n_features_in_
        return x @ self.matrix_.T + self.offset_

    def decode(self, latents, key=None):
        """Invert the affine map and apply one round-trip's worth of loss.

        ``key`` selects the noise stream. When None the running decode count is
        used, which is reproducible only for a fixed call sequence; pass an
        explicit key when outputs must not depend on call order.
        """
        z = self._frames(latents, "latents")
        if key is None:
            key = self.n_decoded_
        self.n_decoded_ += z.size // self.n_features_in_
        x = (z - self.offset_) @ self.inverse_.T
        if self.gamma != 1.0:
            x = self.mean_ + self.gamma * (x - self.mean_)
        if self.noise_sigma > 0.0:
            x = x + stream(self.seed, "codec", "decode", key).normal(scale=self.noise_sigma, size=x.shape)
        return x

    transform = encode

    def inverse_transform(self, X, key=None):
        return self.decode(X, key=key)

    def roundtrip(self, frames, key=None):
        """One decode(encode(.)) cycle."""
        return self.decode(self.encode(frames), key=key)

    def roundtrip_error_curve(self, frame, n):
        """L2 error of ``k`` successive round-trips against ``frame``, for k = 1..n."""
        n = int(n)
        if n < 1:
            raise ConfigError(f"n must be >= 1, got {n}")
        x0 = self._frames(frame, "frame").astype(float)
        x = x0
        errors = []
        for k in range(1, n + 1):
            x = self.roundtrip(x, key=("curve", k))
            errors.append(float(np.linalg.norm(x - x0)))
        return errors

    def closed_form_error_curve(self, frame, n):
        """Noiseless reference ``(1 - gamma^k) ||frame - mean||``."""
        check_is_fitted(self, "matrix_")
        dev = float(np.linalg.norm(np.asarray(frame, float) - self.mean_))
        return [(1.0 - self.gamma ** k) * dev for k in range(1, int(n) + 1)]
