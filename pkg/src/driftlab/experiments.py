"""Trained-model experiments: ablation table, endpoint probe and context bias.

Training scenes use scene seeds ``0 .. n-1``; held-out scenes start at
``HELDOUT_OFFSET`` so the two sets never overlap for realistic sizes.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import clone

from . import flow_core as fc
from ._rng import stream
from .codec import LossyCodec
from .memory import assemble_context, build_identity_memory
from .metrics import ablation_suite
from .sampler import integrate, rollout
from .synth_world import PerturbationSpec, perturb
from .trainer import train
from .vector_field import VelocityField

HELDOUT_OFFSET = 1_000_000


def make_codec(cfg):
    return LossyCodec(**cfg.codec_params()).fit()


def make_scenes(cfg, split="train", n=None):
    world = cfg.world()
    if split == "train":
        n = cfg["train"]["n_scenes"] if n is None else n
        return [world.sample_scene(seed=i, n_frames=cfg["train"]["scene_frames"]) for i in range(n)]
    n = cfg["eval"]["n_scenes"] if n is None else n
    T = cfg["rollout"]["N"] * cfg["rollout"]["L"]
    return [world.sample_scene(seed=HELDOUT_OFFSET + i, n_frames=T) for i in range(n)]


def make_field(cfg):
    f = cfg["field"]
    field_ = VelocityField(hidden_width=f["hidden_width"], time_pairs=f["time_pairs"],
                           random_state=cfg.seeds()["field"])
    return field_.initialize(cfg["world"]["d"], cfg["world"]["p"])


def train_pair(cfg, scenes=None, codec=None, progress=None):
    """FM- and RFM-finished fields branching from one shared stage 1.

    Returns ``(fields, results)`` keyed by stage-2 objective.
    """
    scenes = make_scenes(cfg) if scenes is None else scenes
    codec = make_codec(cfg) if codec is None else codec
    base = make_field(cfg)
    first = train(base, scenes, codec, cfg.train_config(stage2_iters=0), progress=progress)
    fields, results = {}, {}
    for objective in ("fm", "rfm"):
        f = copy.deepcopy(base)
        tcfg = cfg.train_config(objective, stage1_iters=0)
        results[objective] = train(f, scenes, codec, tcfg, progress=progress,
                                   optimizer_state=copy.deepcopy(first.optimizer_state))
        results[objective].stability.update(first.stability)
        fields[objective] = f
    return fields, results


def endpoint_probe(fields, scenes, codec, cfg):
    """Mean endpoint MSE when sampling starts from a perturbed mid-trajectory state.

    For each scene and draw: pick an adjacent chunk pair, perturb the target
    chunk in pixel space, form ``X~_t`` at ``t = probe_t`` and integrate every
    field from there with clean memory. Returns ``{name: per-scene errors}``.
    """
    ev, L = cfg["eval"], cfg["rollout"]["L"]
    r, K = cfg["memory"]["r"], cfg["memory"]["K"]
    t = cfg["train"]
    mag = t["perturb_magnitude"] if ev["probe_magnitude"] is None else ev["probe_magnitude"]
    out = {name: [] for name in fields}
    for i, scene in enumerate(scenes):
        frames = scene.frames()
        lat = codec.encode(frames)
        errs = {name: [] for name in fields}
        for j in range(ev["probe_draws"]):
            rng = stream(cfg["seed"], "probe", i, j)
            start = int(rng.integers(0, scene.n_frames - 2 * L + 1))
            x1 = lat[start + L:start + 2 * L]
            ident = build_identity_memory(frames[start:start + L], K, codec, seed=j)
            ctx = assemble_context(lat[start + L - r:start + L], ident, L).as_array()
            spec = PerturbationSpec(t["perturb_kind"], mag, seed=int(rng.integers(2 ** 63)))
            x1_tilde = codec.encode(perturb(frames[start + L:start + 2 * L], spec))
            state = fc.interpolate(rng.normal(size=x1.shape), x1_tilde, ev["probe_t"])
            poses = scene.pose_track[start + L:start + 2 * L]
            for name, f in fields.items():
                end = integrate(f, state, ctx, poses, ev["probe_t"], ev["probe_steps"])
                errs[name].append(float(np.mean((end - x1) ** 2)))
        for name in fields:
            out[name].append(float(np.mean(errs[name])))
    return {name: np.array(v) for name, v in out.items()}


def context_bias(field_, scenes, codec, cfg):
    """Correlation between identity memory and the generated frames at the same slots.

    The identity latents and the generated latents at context positions
    ``r .. r+K-1`` are both centred over those slots; the statistic is the
    Pearson correlation of the two, averaged over chunks 2..N of latent rollouts.
    A field that copies memory content into the matching output positions
    scores high. Returns the per-scene means.
    """
    r, K = cfg["memory"]["r"], cfg["memory"]["K"]
    rcfg, scfg = cfg.rollout_config("latent_plp_rfm"), cfg.sampler_config()
    per_scene = []
    for scene in scenes:
        _, trace = rollout(field_, scene, clone(codec).fit(), rcfg, scfg)
        a = trace.identity_latents - trace.identity_latents.mean(axis=0)
        vals = []
        for lat in trace.latents[1:]:
            b = lat[r:r + K] - lat[r:r + K].mean(axis=0)
            vals.append(float(np.sum(a * b) / np.sqrt(np.sum(a * a) * np.sum(b * b))))
        per_scene.append(np.mean(vals))
    return np.array(per_scene)


@dataclass
class TrendResult:
    table: object
    probe: dict
    train_stability: dict = field(default_factory=dict)

    @property
    def slope_wins(self):
        return self.table.wins()

    @property
    def probe_wins(self):
        return int(np.sum(self.probe["rfm"] < self.probe["fm"]))

    def passed(self, majority):
        return all(v >= majority for v in self.slope_wins.values()) and self.probe_wins >= majority

    def summary(self):
        out = self.table.summary()
        out["probe_endpoint_mse"] = {k: v.tolist() for k, v in self.probe.items()}
        out["probe_rfm_wins"] = self.probe_wins
        out["train_stability"] = self.train_stability
        return out


def ablation_trend(cfg, progress=None, parallel=False):
    """Train the FM/RFM pair, run the four presets and the endpoint probe on held-out scenes."""
    codec = make_codec(cfg)
    fields, results = train_pair(cfg, codec=codec, progress=progress)
    held = make_scenes(cfg, "heldout")
    table = ablation_suite(fields, held, codec, cfg.rollout_config(), cfg.sampler_config(), parallel=parallel)
    probe = endpoint_probe(fields, held, codec, cfg)
    return TrendResult(table, probe, {k: r.stability for k, r in results.items()})


def augmentation_effect(cfg, progress=None):
    """Per-scene context-bias statistic for fields trained with identity augmentation on and off."""
    codec = make_codec(cfg)
    scenes = make_scenes(cfg)
    held = make_scenes(cfg, "heldout", n=cfg["eval"]["bias_scenes"])
    out = {}
    for aug in (True, False):
        f = make_field(cfg)
        train(f, scenes, codec, cfg.train_config(augment_identity=aug), progress=progress)
        out["on" if aug else "off"] = context_bias(f, held, codec, cfg)
    return out
