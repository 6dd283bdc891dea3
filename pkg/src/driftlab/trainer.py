"""Two-stage training of the velocity field on adjacent chunk pairs.

Stage 1 adapts the field to its memory: motion latents are perturbed on the
input side and the target is the plain flow-matching velocity. Stage 2 keeps
the motion memory clean and instead perturbs the target chunk's endpoint,
regressing onto the rescheduled restorative velocity.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import flow_core as fc
from ._rng import derive_seed, stream
from .exceptions import ConfigError, DimensionError, DomainError, NumericError, TrainingError
from .memory import ModelInput, assemble_context, build_identity_memory
from .synth_world import PerturbationSpec, perturb
from .vector_field import AdamState, adam_step

OBJECTIVES = ("rfm", "fm")
RESTORATIONS = ("lambda", "exact")


@dataclass(frozen=True)
class TrainConfig:
    stage1_iters: int = 400
    stage2_iters: int = 100
    batch_size: int = 16
    lr: float = 1e-3
    beta: float = fc.DEFAULT_BETA
    # magnitudes are upper bounds; each sample draws uniformly below them
    perturb_spec: PerturbationSpec = field(default_factory=lambda: PerturbationSpec("compose", 0.15))
    motion_perturb_spec: PerturbationSpec = field(default_factory=lambda: PerturbationSpec("compose", 0.15))
    stage2_objective: str = "rfm"
    restoration: str = "lambda"
    augment_identity: bool = True
    augment_magnitude: float = 1.0
    frames_per_chunk: int = 6
    r: int = 1
    K: int = 4
    first_chunk_prob: float = 0.1
    # carry-over-only contexts (empty identity slots), optionally with a reference sink slot
    memory_dropout: float = 0.25
    sink_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.stage1_iters < 0 or self.stage2_iters < 0:
            raise ConfigError("iteration counts must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.stage2_objective not in OBJECTIVES:
            raise ConfigError(f"stage2_objective must be one of {OBJECTIVES}")
        if self.restoration not in RESTORATIONS:
            raise ConfigError(f"restoration must be one of {RESTORATIONS}")
        for name in ("first_chunk_prob", "memory_dropout", "sink_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.r < 0 or self.K < 1 or self.r + self.K > self.frames_per_chunk:
            raise ConfigError(f"r={self.r}, K={self.K} do not fit a chunk of {self.frames_per_chunk}")
        try:
            fc.RestorationSchedule(self.beta)
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True, eq=False)
class TrainSample:
    """One training draw plus flags recording how it was built."""

    inp: ModelInput
    target: np.ndarray
    stage: int
    objective: str
    motion_perturbed: bool
    endpoint_perturbed: bool
    start: int
    t: float
    xi_magnitude: float
    memory: str = "persistent"


@dataclass
class TrainResult:
    losses: np.ndarray
    stages: np.ndarray
    stability: dict
    optimizer_state: AdamState | None = None

    def rows(self):
        return [(i, int(s), float(v)) for i, (s, v) in enumerate(zip(self.stages, self.losses))]


def _clean_latents(scene, codec, cache):
    key = id(scene)
    if key not in cache:
        cache[key] = codec.encode(scene.frames())
    return cache[key]


def _draw_pair(scene, L, rng):
    T = scene.n_frames
    if T < 2 * L:
        raise ConfigError(f"scene has {T} frames; training needs two chunks of {L}")
    return int(rng.integers(0, T - 2 * L + 1))


def _context(scene, codec, cfg, start, motion, rng):
    """Context array and its memory kind: persistent, carryover or sink."""
    L, K, d = cfg.frames_per_chunk, cfg.K, motion.shape[1]
    id_seed = int(rng.integers(2 ** 63))
    dropped = rng.random() < cfg.memory_dropout
    use_sink = rng.random() < cfg.sink_prob and cfg.r + K + 1 <= L
    if dropped:
        sink = codec.encode(scene.reference_frames(1))[0] if use_sink else None
        ctx = assemble_context(motion, np.zeros((K, d)), L, sink=sink)
        return ctx.as_array(), "sink" if use_sink else "carryover"
    frames = scene.frames()
    identity = build_identity_memory(frames[start:start + L], K, codec, augment=cfg.augment_identity,
                                     seed=id_seed, magnitude=cfg.augment_magnitude)
    return assemble_context(motion, identity, L).as_array(), "persistent"


def make_stage1_sample(scene, codec, cfg: TrainConfig, seed, _cache=None):
    """Clean FM target with input-side perturbation of the motion memory."""
    cache = {} if _cache is None else _cache
    L, r = cfg.frames_per_chunk, cfg.r
    rng = stream(seed, "trainer", "stage1")
    start = _draw_pair(scene, L, rng)
    lat = _clean_latents(scene, codec, cache)
    x1 = lat[start + L:start + 2 * L]
    motion = lat[start + L - r:start + L].copy()
    mag = float(rng.uniform(0.0, cfg.motion_perturb_spec.magnitude))
    perturbed = False
    if rng.random() < cfg.first_chunk_prob:
        motion = np.zeros_like(motion)
    elif mag > 0.0 and r > 0:
        spec = PerturbationSpec(cfg.motion_perturb_spec.kind, mag, seed=int(rng.integers(2 ** 63)))
        motion = perturb(motion, spec)
        perturbed = True
    ctx, kind = _context(scene, codec, cfg, start, motion, rng)
    t = float(rng.uniform())
    x0 = rng.normal(size=x1.shape)
    s = fc.FlowSample.build(x0, x1, t)
    poses = scene.pose_track[start + L:start + 2 * L]
    return TrainSample(ModelInput(s.xt, poses, ctx, t), s.u, 1, "fm", perturbed, False, start, t, mag, kind)


def restorative_target(x0, x1, x1_tilde, t, beta=fc.DEFAULT_BETA, restoration="lambda"):
    """``U + c(t) (X_t - X~_t)`` with ``c`` either the bounded weight or the guarded ``1/(1-t)``."""
    u = fc.fm_velocity(x0, x1)
    gap = fc.interpolate(x0, x1, t) - fc.interpolate(x0, x1_tilde, t)
    return u + fc.restoration_coefficient(t, beta, kind=restoration) * gap


def make_stage2_sample(scene, codec, cfg: TrainConfig, seed, _cache=None, t=None):
    """Clean motion memory, perturbed endpoint, restorative (or plain FM) target."""
    cache = {} if _cache is None else _cache
    L, r = cfg.frames_per_chunk, cfg.r
    rng = stream(seed, "trainer", "stage2")
    start = _draw_pair(scene, L, rng)
    lat = _clean_latents(scene, codec, cache)
    x1 = lat[start + L:start + 2 * L]
    motion = lat[start + L - r:start + L].copy()
    ctx, kind = _context(scene, codec, cfg, start, motion, rng)
    t_draw = float(rng.uniform())
    t = t_draw if t is None else float(t)
    x0 = rng.normal(size=x1.shape)
    poses = scene.pose_track[start + L:start + 2 * L]
    mag = float(rng.uniform(0.0, cfg.perturb_spec.magnitude))
    xi_seed = int(rng.integers(2 ** 63))
    if cfg.stage2_objective == "fm":
        s = fc.FlowSample.build(x0, x1, t)
        return TrainSample(ModelInput(s.xt, poses, ctx, t), s.u, 2, "fm", False, False, start, t, 0.0, kind)
    frames = scene.frames()[start + L:start + 2 * L]
    x1_tilde = codec.encode(perturb(frames, PerturbationSpec(cfg.perturb_spec.kind, mag, seed=xi_seed)))
    state = fc.interpolate(x0, x1_tilde, t)
    target = restorative_target(x0, x1, x1_tilde, t, cfg.beta, cfg.restoration)
    return TrainSample(ModelInput(state, poses, ctx, t), target, 2, "rfm", False, mag > 0.0, start, t, mag, kind)


def stability_report(losses, stages):
    """Per stage: finite, and last-decile mean below first-decile mean."""
    out = {}
    for s in (1, 2):
        seg = np.asarray(losses)[np.asarray(stages) == s]
        if len(seg) == 0:
            continue
        k = max(1, len(seg) // 10)
        first, last = float(np.mean(seg[:k])), float(np.mean(seg[-k:]))
        finite = bool(np.all(np.isfinite(seg)))
        out[f"stage{s}"] = {"first_decile": first, "last_decile": last, "finite": finite,
                            "stable": finite and last < first, "iterations": int(len(seg))}
    return out


def train(field, scenes, codec, cfg: TrainConfig, progress=None, optimizer_state=None):
    """Stage 1 then stage 2; updates ``field`` in place and returns a :class:`TrainResult`.

    Passing the ``optimizer_state`` of an earlier result continues that run, e.g.
    two stage-2 variants branching from one shared stage 1.
    """
    scenes = list(scenes)
    if not scenes:
        raise ConfigError("training needs at least one scene")
    d = codec.n_features_in_
    if not hasattr(field, "params_"):
        field.initialize(d, scenes[0].world.pose_dim)
    elif field.latent_dim_ != d:
        raise DimensionError(f"field latent dim {field.latent_dim_} != codec dim {d}")
    cache, losses, stages = {}, [], []
    state = AdamState.zeros(field.n_params) if optimizer_state is None else optimizer_state
    schedule = [(1, i) for i in range(cfg.stage1_iters)] + [(2, i) for i in range(cfg.stage2_iters)]
    for it, (stage, i) in enumerate(schedule):
        make = make_stage1_sample if stage == 1 else make_stage2_sample
        batch = []
        for b in range(cfg.batch_size):
            seed = derive_seed(cfg.seed, "trainer", "sample", stage, i, b)
            scene = scenes[int(stream(seed, "scene").integers(len(scenes)))]
            batch.append(make(scene, codec, cfg, seed, _cache=cache))
        inp = ModelInput.stack([s.inp for s in batch])
        target = np.stack([s.target for s in batch])
        try:
            rec = field.loss_and_grad(inp, target)
            if not np.isfinite(rec.loss):
                raise NumericError("non-finite loss")
            state = adam_step(field, rec, state, cfg.lr)
        except NumericError as exc:
            raise TrainingError(f"training diverged at iteration {it} (stage {stage}): {exc}", iteration=it) from exc
        losses.append(float(rec.loss))
        stages.append(stage)
        if progress is not None:
            progress(it, stage, rec.loss)
    field.n_iter_ = getattr(field, "n_iter_", 0) + len(schedule)
    losses, stages = np.array(losses), np.array(stages, dtype=int)
    result = TrainResult(losses, stages, stability_report(losses, stages), state)
    field.train_result_ = result
    return result


def write_loss_csv(result: TrainResult, path, header_comment=None):
    buf = io.StringIO()
    if header_comment:
        for line in header_comment.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("iteration", "stage", "loss"))
    for i, s, v in result.rows():
        w.writerow((i, s, repr(v)))
    Path(path).write_text(buf.getvalue())
