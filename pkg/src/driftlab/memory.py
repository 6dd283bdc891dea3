"""Persistent latent propagation: memory construction and model input assembly.

Context layout along time is ``motion | identity | sink | pad`` with total
length ``T_z``; the sink slot is only present in the attention-sink rollout.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._rng import stream
from .exceptions import ConfigError, DimensionError


@dataclass(frozen=True, eq=False)
class ContextMemory:
    motion: np.ndarray
    identity: np.ndarray
    pad: np.ndarray
    sink: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    @property
    def r(self):
        return len(self.motion)

    @property
    def K(self):
        return len(self.identity)

    @property
    def length(self):
        return len(self.motion) + len(self.identity) + len(self.sink) + len(self.pad)

    def as_array(self):
        d = self.identity.shape[1]
        parts = [self.motion.reshape(-1, d), self.identity, self.sink.reshape(-1, d), self.pad]
        return np.concatenate(parts, axis=0)


@dataclass(frozen=True, eq=False)
class PoseAdapter:
    """Per-frame linear map from pose (p) to latent (d) coordinates."""

    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def zeros(cls, d, p):
        return cls(np.zeros((d, p)), np.zeros(d))

    def __call__(self, poses):
        return np.asarray(poses, float) @ self.weight.T + self.bias


@dataclass(frozen=True, eq=False)
class ModelInput:
    """Everything the vector field conditions on.

    ``state`` is the un-injected latent ``X_t``; the field applies its own pose
    adapter so that adapter parameters are trainable. Arrays may carry a leading
    batch axis, in which case ``t`` is a vector.
    """

    state: np.ndarray
    poses: np.ndarray
    context: np.ndarray
    t: float | np.ndarray
    chunk: int = 0

    def __post_init__(self):
        if self.state.shape != self.context.shape:
            raise DimensionError(f"state {self.state.shape} and context {self.context.shape} differ")
        if self.poses.shape[:-1] != self.state.shape[:-1]:
            raise DimensionError(f"poses {self.poses.shape} do not align with state {self.state.shape}")

    @property
    def batched(self):
        return self.state.ndim == 3

    @classmethod
    def stack(cls, inputs):
        return cls(np.stack([i.state for i in inputs]), np.stack([i.poses for i in inputs]),
                   np.stack([i.context for i in inputs]), np.array([float(i.t) for i in inputs]))


def build_motion_memory(prev_latents, r):
    """Last ``r`` latent slices of the previous chunk. No codec involvement."""
    prev = np.asarray(prev_latents, float)
    if not 0 <= r <= len(prev):
        raise ConfigError(f"r={r} outside [0, {len(prev)}]")
    return prev[len(prev) - r:].copy()


def augment_identity_frame(frame, rng, magnitude=1.0):
    """Mild identity-preserving augmentation: cyclic shift plus rescale about the mean.

    The shift is at most ``round(magnitude * (d // 16))`` coordinates and the
    scale lies in ``1 +/- 0.1 * magnitude``. Returns ``(frame, shift, scale)``.
    """
    frame = np.asarray(frame, float)
    if magnitude == 0.0:
        return frame.copy(), 0, 1.0
    max_shift = int(round(magnitude * (frame.shape[-1] // 16)))
    shift = int(rng.integers(-max_shift, max_shift + 1))
    scale = 1.0 + magnitude * float(rng.uniform(-0.1, 0.1))
    out = np.roll(frame, shift)
    mu = out.mean()
    return mu + scale * (out - mu), shift, scale


def build_identity_memory(chunk_frames, K, codec, augment=False, seed=0, magnitude=1.0, return_draw=False):
    """Encode ``K`` distinct frames sampled uniformly from ``chunk_frames``.

    With ``augment`` the frames pass through :func:`augment_identity_frame`
    before encoding. Frame indices and augmentation draws come from separate
    streams, so turning augmentation on does not change which frames are picked.
    """
    frames = np.asarray(chunk_frames, float)
    if not 1 <= K <= len(frames):
        raise ConfigError(f"K={K} outside [1, {len(frames)}]")
    idx = stream(seed, "identity", "indices").choice(len(frames), size=K, replace=False)
    picked = frames[idx]
    shifts, scales = [0] * K, [1.0] * K
    if augment:
        rng = stream(seed, "identity", "augment")
        out = []
        for k in range(K):
            f, shifts[k], scales[k] = augment_identity_frame(picked[k], rng, magnitude)
            out.append(f)
        picked = np.stack(out)
    latents = codec.encode(picked)
    if return_draw:
        return latents, {"indices": idx.tolist(), "shifts": shifts, "scales": scales}
    return latents


def assemble_context(motion, identity, T_z, sink=None):
    """Concatenate ``motion | identity | sink | zero pad`` to length ``T_z``."""
    identity = np.asarray(identity, float)
    d = identity.shape[1]
    motion = np.asarray(motion, float).reshape(-1, d)
    sink = np.empty((0, d)) if sink is None else np.asarray(sink, float).reshape(-1, d)
    n_pad = T_z - len(motion) - len(identity) - len(sink)
    if n_pad < 0:
        raise ConfigError(f"memory of length {T_z - n_pad} overflows T_z={T_z}")
    return ContextMemory(motion, identity, np.zeros((n_pad, d)), sink)


def inject_pose(xt, poses, adapter):
    xt = np.asarray(xt, float)
    poses = np.asarray(poses, float)
    if poses.shape[:-1] != xt.shape[:-1]:
        raise DimensionError(f"poses {poses.shape} do not map 1:1 onto latent slices {xt.shape}")
    return xt + adapter(poses)


def concat_channels(target, ctx):
    """Per-position channel concatenation: target in channels ``[0, d)``, context in ``[d, 2d)``."""
    target = np.asarray(target, float)
    ctx_arr = ctx.as_array() if isinstance(ctx, ContextMemory) else np.asarray(ctx, float)
    if ctx_arr.shape != target.shape:
        raise DimensionError(f"target {target.shape} and context {ctx_arr.shape} differ")
    return np.concatenate([target, ctx_arr], axis=-1)


def split_channels(h, d):
    return h[..., :d], h[..., d:]
