"""Euler sampling of one chunk and chunk-wise long-horizon rollout.

Rollout modes differ only in how chunk ``n - 1`` conditions chunk ``n``:

``image_carryover``
    decode the previous chunk, re-encode its last ``r`` frames (one codec
    round-trip per transition). No persistent memory: identity slots are empty
    from chunk 2 on.
``sink``
    as ``image_carryover`` plus a persistent slot holding ``E(I_ref)``.
``latent_plp`` / ``latent_plp_rfm``
    reuse the last ``r`` latent slices directly (no codec calls) and keep the
    completed identity memory for every chunk. The two names differ only in
    which field is expected to drive them.

All modes generate chunk 1 identically: zero motion memory and the encoded
references tiled over the identity slots.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._rng import stream
from .exceptions import ConfigError, NumericError
from .memory import ModelInput, assemble_context, build_identity_memory, build_motion_memory
from .synth_world import split_chunks

MODES = ("image_carryover", "sink", "latent_plp", "latent_plp_rfm")
LATENT_MODES = ("latent_plp", "latent_plp_rfm")


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")


@dataclass(frozen=True)
class RolloutConfig:
    mode: str = "latent_plp_rfm"
    chunks: int = 8
    frames_per_chunk: int = 6
    r: int = 1
    K: int = 4
    m: int = 1
    identity_seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown rollout mode {self.mode!r}; expected one of {MODES}")
        if self.chunks < 1:
            raise ConfigError("chunks must be >= 1")
        if not 1 <= self.m <= self.K:
            raise ConfigError(f"need 1 <= m <= K, got m={self.m}, K={self.K}")
        if self.r < 0 or self.r + self.K > self.frames_per_chunk:
            raise ConfigError(f"r + K = {self.r + self.K} exceeds chunk length {self.frames_per_chunk}")
        if self.mode != "latent_plp" and self.mode != "latent_plp_rfm" and self.r < 1:
            raise ConfigError("image carry-over modes need r >= 1")
        if self.mode == "sink" and self.r + self.K + 1 > self.frames_per_chunk:
            raise ConfigError("sink mode needs one free pad slot")


@dataclass
class RolloutTrace:
    mode: str
    latents: list = field(default_factory=list)
    codec_roundtrips: list = field(default_factory=list)
    identity_indices: list = field(default_factory=list)
    identity_latents: np.ndarray | None = None

    @property
    def inter_chunk_roundtrips(self):
        return int(sum(self.codec_roundtrips))


class ConstantField:
    """Returns the same velocity everywhere."""

    def __init__(self, velocity):
        self.velocity = np.asarray(velocity, float)

    def predict(self, inp):
        return np.broadcast_to(self.velocity, inp.state.shape).copy()


class CarryOverOracle:
    """Exact-velocity field that continues the previous chunk's content.

    For the first chunk it targets the clean latents of the scene. Afterwards
    it takes the last motion slot of the context and adds the known character
    change between that frame and each target frame, i.e. it introduces no
    error of its own on static content and predicts the true residuals. The
    velocity is the constant one reaching that endpoint from the current
    state, so Euler integration lands on it exactly.
    """

    def __init__(self, scene, codec, frames_per_chunk, r=1):
        if r < 1:
            raise ConfigError("the carry-over oracle needs r >= 1")
        self.scene, self.codec, self.L, self.r = scene, codec, frames_per_chunk, r

    def _linear(self, x):
        return np.asarray(x) @ self.codec.matrix_.T

    def endpoint(self, inp):
        n, L = inp.chunk, self.L
        char = self.scene.character_frames(inp.poses)
        if n == 0:
            return self._linear(self.scene.background + char) + self.codec.offset_
        prev_char = self.scene.character_frames(self.scene.pose_track[n * L - 1])
        return inp.context[self.r - 1] + self._linear(char - prev_char)

    def predict(self, inp):
        return (self.endpoint(inp) - inp.state) / (1.0 - float(inp.t))


def integrate(field, state, context, poses, t0=0.0, steps=20, chunk=0):
    """Euler integration of ``field`` from ``t0`` to 1 in ``steps`` uniform steps."""
    x = np.array(state, dtype=float)
    dt = (1.0 - t0) / steps
    for k in range(steps):
        t = t0 + k * dt
        x = x + dt * field.predict(ModelInput(x, poses, context, t, chunk))
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite sampler state at step {k} (t={t:.3f})")
    return x


def sample_chunk(field, ctx, poses, cfg: SamplerConfig, chunk=0, x0=None):
    """Draw ``X_0`` from the chunk's seeded stream and integrate to ``t = 1``.

    Pose injection happens inside the field on every evaluation, so the pose
    is re-applied at each Euler step.
    """
    ctx_arr = ctx.as_array() if hasattr(ctx, "as_array") else np.asarray(ctx, float)
    if x0 is None:
        x0 = stream(cfg.seed, "sampler", "x0", chunk).normal(size=ctx_arr.shape)
    return integrate(field, x0, ctx_arr, np.asarray(poses, float), 0.0, cfg.steps, chunk)


def complete_identity_memory(user_refs, first_chunk, K, m, codec, seed=0, return_draw=False, encoded_refs=None):
    """``m`` encoded user references followed by ``K - m`` frames sampled from the first chunk.

    ``encoded_refs`` skips re-encoding references the caller already holds.
    """
    if not 1 <= m <= K:
        raise ConfigError(f"need 1 <= m <= K, got m={m}, K={K}")
    if encoded_refs is not None:
        refs = np.asarray(encoded_refs, float)[:m]
    else:
        refs = codec.encode(np.asarray(user_refs, float)[:m])
    if m == K:
        return (refs, {"indices": []}) if return_draw else refs
    if first_chunk is None:
        raise ConfigError("first chunk required when m < K")
    extra, draw = build_identity_memory(first_chunk, K - m, codec, augment=False, seed=seed, return_draw=True)
    latents = np.concatenate([refs, extra])
    return (latents, draw) if return_draw else latents


def rollout(field, scene, codec, rcfg: RolloutConfig, scfg: SamplerConfig):
    """Generate ``rcfg.chunks`` chunks; returns ``(pixel_chunks, trace)``."""
    L, r, K, m = rcfg.frames_per_chunk, rcfg.r, rcfg.K, rcfg.m
    if scene.n_frames != rcfg.chunks * L:
        raise ConfigError(f"scene has {scene.n_frames} frames, rollout needs {rcfg.chunks * L}")
    if len(scene.reference_poses) < m:
        raise ConfigError(f"scene has {len(scene.reference_poses)} reference frames, m={m}")
    pose_chunks = [p for _, p in split_chunks(scene, L)]
    refs = scene.reference_frames(m)
    ref_latents = codec.encode(refs)
    d = ref_latents.shape[1]
    trace = RolloutTrace(rcfg.mode)

    # first chunk: zero motion memory, references tiled over the identity slots
    ctx = assemble_context(np.zeros((r, d)), ref_latents[np.arange(K) % m], L)
    latents = sample_chunk(field, ctx, pose_chunks[0], scfg, chunk=0)
    pixels = codec.decode(latents, key=("rollout", 0))
    latent_mode = rcfg.mode in LATENT_MODES
    if latent_mode:
        identity, draw = complete_identity_memory(refs, pixels, K, m, codec, seed=rcfg.identity_seed,
                                                  return_draw=True, encoded_refs=ref_latents)
        trace.identity_indices = draw["indices"]
    else:
        identity = np.zeros((K, d))
    trace.identity_latents = identity
    trace.latents.append(latents)
    trace.codec_roundtrips.append(0)
    out = [pixels]

    for n in range(1, rcfg.chunks):
        if latent_mode:
            motion = build_motion_memory(latents, r)
            trips = 0
        else:
            motion = codec.encode(pixels[L - r:])
            trips = 1
        sink = ref_latents[0] if rcfg.mode == "sink" else None
        ctx = assemble_context(motion, identity, L, sink=sink)
        latents = sample_chunk(field, ctx, pose_chunks[n], scfg, chunk=n)
        pixels = codec.decode(latents, key=("rollout", n))
        trace.latents.append(latents)
        trace.codec_roundtrips.append(trips)
        out.append(pixels)
    return out, trace
