"""Synthetic scenes: a static background plus a pose-driven character.

A frame is ``background + B(pose) @ identity`` where ``B(pose)`` is a
``(pixel_dim, identity_dim)`` matrix whose entries are fixed mixtures of
bounded sinusoidal pose features. The character term is smooth and
Lipschitz in the pose and linear in the identity code, which lets the
metrics recover identity by least squares.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import stream
from .exceptions import ConfigError, DimensionError

PERTURBATION_KINDS = ("gain", "offset", "smooth", "compose")


@dataclass(frozen=True)
class World:
    """Fixed render map shared by every scene of an experiment."""

    pixel_dim: int = 32
    pose_dim: int = 4
    identity_dim: int = 8
    n_pose_features: int = 8
    background_scale: float = 1.0
    # std (in coordinates) of the circular Gaussian smoothing of the background; 0 gives white noise
    background_correlation: float = 3.0
    character_scale: float = 1.0
    pose_step: float = 0.3
    pose_limit: float = np.pi
    seed: int = 0
    _freq: np.ndarray = field(init=False, repr=False, compare=False)
    _phase: np.ndarray = field(init=False, repr=False, compare=False)
    _mix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if min(self.pixel_dim, self.pose_dim, self.identity_dim, self.n_pose_features) < 1:
            raise ConfigError("world dimensions must be >= 1")
        if self.background_correlation < 0:
            raise ConfigError("background_correlation must be >= 0")
        rng = stream(self.seed, "world", "render")
        F, q = self.n_pose_features, self.identity_dim
        object.__setattr__(self, "_freq", rng.normal(size=(F, self.pose_dim)))
        object.__setattr__(self, "_phase", rng.uniform(0, 2 * np.pi, size=F))
        mix = rng.normal(size=(self.pixel_dim, F, q)) * (self.character_scale * np.sqrt(2.0 / (F * q)))
        object.__setattr__(self, "_mix", mix)

    def pose_features(self, poses):
        poses = np.asarray(poses, dtype=float)
        return np.sin(poses @ self._freq.T + self._phase)

    def character_basis(self, poses):
        """``B(pose)``: shape ``(..., pixel_dim, identity_dim)``."""
        return np.einsum("...f,dfq->...dq", self.pose_features(poses), self._mix)

    def character(self, identity, poses):
        return np.einsum("...dq,q->...d", self.character_basis(poses), np.asarray(identity, float))

    def sample_poses(self, rng, n):
        p = np.empty((n, self.pose_dim))
        p[0] = rng.uniform(-1.0, 1.0, size=self.pose_dim)
        steps = rng.normal(scale=self.pose_step, size=(n - 1, self.pose_dim))
        for i in range(1, n):
            p[i] = np.clip(p[i - 1] + steps[i - 1], -self.pose_limit, self.pose_limit)
        return p

    def smooth_background(self, noise):
        """Circularly smooth white noise along the pixel axis, keeping unit marginal variance."""
        noise = np.asarray(noise, float)
        if self.background_correlation == 0:
            return noise
        D = self.pixel_dim
        lag = np.minimum(np.arange(D), D - np.arange(D))
        kernel = np.exp(-0.5 * (lag / self.background_correlation) ** 2)
        kernel /= np.sqrt(np.sum(kernel ** 2))
        return np.real(np.fft.ifft(np.fft.fft(noise) * np.fft.fft(kernel)))

    def sample_scene(self, seed, n_frames, n_refs=4):
        """Draw a scene with ``n_frames`` poses and ``n_refs`` reference poses."""
        if n_frames < 1:
            raise ConfigError("n_frames must be >= 1")
        rng = stream(self.seed, "scene", seed)
        background = self.background_scale * self.smooth_background(rng.normal(size=self.pixel_dim))
        identity = rng.normal(size=self.identity_dim)
        poses = self.sample_poses(rng, n_frames)
        refs = rng.uniform(-1.0, 1.0, size=(n_refs, self.pose_dim))
        return Scene(self, background, identity, poses, refs)

    def to_dict(self):
        keys = ("pixel_dim", "pose_dim", "identity_dim", "n_pose_features", "background_scale",
                "background_correlation", "character_scale", "pose_step", "pose_limit", "seed")
        return {k: getattr(self, k) for k in keys}


@dataclass(frozen=True, eq=False)
class Scene:
    world: World
    background: np.ndarray
    identity: np.ndarray
    pose_track: np.ndarray
    reference_poses: np.ndarray

    @property
    def n_frames(self):
        return len(self.pose_track)

    def character_frames(self, poses=None):
        return self.world.character(self.identity, self.pose_track if poses is None else poses)

    def frames(self):
        return self.background + self.character_frames()

    def reference_frames(self, m=None):
        refs = self.reference_poses if m is None else self.reference_poses[:m]
        return self.background + self.world.character(self.identity, refs)

    def with_identity(self, identity):
        return Scene(self.world, self.background, np.asarray(identity, float), self.pose_track,
                     self.reference_poses)


def render_frame(scene, ell):
    """Frame at 0-based index ``ell``."""
    if not 0 <= ell < scene.n_frames:
        raise IndexError(f"frame index {ell} outside [0, {scene.n_frames})")
    return scene.background + scene.world.character(scene.identity, scene.pose_track[ell])


def split_chunks(scene, L):
    """Non-overlapping ``(frames, poses)`` chunks of length ``L``."""
    T = scene.n_frames
    if L < 1 or T % L:
        raise ConfigError(f"{T} frames cannot be split into chunks of {L}")
    frames = scene.frames()
    return [(frames[i:i + L], scene.pose_track[i:i + L]) for i in range(0, T, L)]


@dataclass(frozen=True, eq=False)
class PerturbationSpec:
    """Perturbation operator parameters. ``direction`` overrides the random offset axis."""

    kind: str = "compose"
    magnitude: float = 0.0
    seed: int = 0
    direction: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ConfigError(f"unknown perturbation kind {self.kind!r}; expected one of {PERTURBATION_KINDS}")


def _unit(rng, dim):
    u = rng.normal(size=dim)
    return u / np.linalg.norm(u)


def _temporal_blur(x):
    padded = np.concatenate([x[:1], x, x[-1:]], axis=0)
    return (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0


def perturb(chunk, spec):
    """Apply a gain, offset, smoothing or composed perturbation to a ``(L, D)`` chunk."""
    x = np.asarray(chunk, dtype=float)
    if x.ndim != 2:
        raise DimensionError(f"chunk must be 2-d, got shape {x.shape}")
    if spec.kind not in PERTURBATION_KINDS:
        raise ConfigError(f"unknown perturbation kind {spec.kind!r}")
    m = float(spec.magnitude)
    if m == 0.0:
        return x.copy()
    if spec.kind == "gain":
        mu = x.mean(axis=1, keepdims=True)
        return (1.0 + m) * (x - mu) + mu
    if spec.kind == "offset":
        if spec.direction is not None:
            u = np.asarray(spec.direction, float)
        else:
            u = _unit(stream(spec.seed, "perturb", "offset"), x.shape[1])
        return x + m * u
    if spec.kind == "smooth":
        return (1.0 - m) * x + m * _temporal_blur(x)
    rng = stream(spec.seed, "perturb", "compose")
    families = ["gain", "offset", "smooth"]
    order = rng.permutation(len(families))
    chosen = rng.random(len(families)) < 0.5
    if not chosen.any():
        chosen[rng.integers(len(families))] = True
    for i in order:
        if not chosen[i]:
            continue
        kind = families[i]
        if kind == "gain":
            sub = PerturbationSpec("gain", m * rng.choice([-1.0, 1.0]))
        elif kind == "offset":
            sub = PerturbationSpec("offset", m, direction=_unit(rng, x.shape[1]))
        else:
            sub = PerturbationSpec("smooth", m)
        x = perturb(x, sub)
    return x


_DUMP_HEADER = """\
# driftlab scene v1
# line 1 after this header: JSON world parameters
# then one labelled numeric array per line: 'name[index]: v0 v1 ...'
#   background            pixel_dim values
#   identity              identity_dim values
#   pose[i]               pose_dim values, i = 0..T-1
#   ref_pose[j]           pose_dim values
"""


def dump_scene(scene, path):
    buf = io.StringIO()
    buf.write(_DUMP_HEADER)
    buf.write(json.dumps(scene.world.to_dict(), sort_keys=True) + "\n")

    def row(name, values):
        buf.write(name + ": " + " ".join(repr(float(v)) for v in values) + "\n")

    row("background", scene.background)
    row("identity", scene.identity)
    for i, p in enumerate(scene.pose_track):
        row(f"pose[{i}]", p)
    for j, p in enumerate(scene.reference_poses):
        row(f"ref_pose[{j}]", p)
    Path(path).write_text(buf.getvalue())


def load_scene(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    world = World(**json.loads(lines[0]))
    rows = {}
    for ln in lines[1:]:
        name, _, values = ln.partition(":")
        rows[name.strip()] = np.array([float(v) for v in values.split()])
    poses = np.array([rows[k] for k in sorted((k for k in rows if k.startswith("pose[")),
                                              key=lambda k: int(k[5:-1]))])
    refs = [rows[k] for k in sorted((k for k in rows if k.startswith("ref_pose[")), key=lambda k: int(k[9:-1]))]
    refs = np.array(refs) if refs else np.empty((0, world.pose_dim))
    return Scene(world, rows["background"], rows["identity"], poses, refs)
