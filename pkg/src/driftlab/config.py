"""Versioned experiment configuration.

One YAML document holds every module parameter. Loading validates it against
the module constructors before anything runs, and the canonical dump (sorted
keys, block style) is what gets hashed and stamped on every artifact.

Seeds: a single master ``seed``; each module draws from
``derive_seed(seed, module, purpose)`` (BLAKE2b over the label path), so a
module's randomness never depends on what other modules consumed.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from ._rng import derive_seed
from .exceptions import ConfigError
from .sampler import MODES, RolloutConfig, SamplerConfig
from .synth_world import PERTURBATION_KINDS, PerturbationSpec, World
from .trainer import OBJECTIVES, RESTORATIONS, TrainConfig

CONFIG_VERSION = 1

DEFAULTS = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "world": {
        "d": 32,
        "p": 4,
        "identity_dim": 8,
        "n_pose_features": 8,
        "background_scale": 1.0,
        "background_correlation": 3.0,
        "character_scale": 1.0,
        "pose_step": 0.3,
    },
    "codec": {"gamma": 0.97, "sigma": 0.005},
    "memory": {"T_z": 6, "r": 1, "K": 4, "m": 1, "augment_identity": True, "augment_magnitude": 1.0},
    "rollout": {"L": 6, "N": 8, "S": 20, "mode": "latent_plp_rfm"},
    "field": {"hidden_width": 64, "time_pairs": 4},
    "train": {
        "stage1_iters": 400,
        "stage2_iters": 100,
        "batch_size": 16,
        "lr": 1e-3,
        "beta": 16.0,
        "objective": "rfm",
        "restoration": "lambda",
        "perturb_kind": "compose",
        "perturb_magnitude": 0.15,
        "motion_perturb_kind": "compose",
        "motion_perturb_magnitude": 0.15,
        "first_chunk_prob": 0.1,
        "memory_dropout": 0.25,
        "sink_prob": 0.5,
        "n_scenes": 64,
        "scene_frames": 48,
    },
    "eval": {
        "n_scenes": 8,
        # context-bias estimate: per-scene noise is several times the on/off gap at 8 scenes
        "bias_scenes": 64,
        "probe_t": 0.5,
        "probe_steps": 10,
        "probe_draws": 8,
        "probe_magnitude": None,
    },
    "bench": {"n": 20, "gammas": [1.0, 0.97, 0.9], "sigmas": [0.0, 0.005]},
}

# Settings used for the trained-model trends: smaller character amplitude, larger
# batches and stage-2 perturbations, and ten times the desk-scale budget.
TREND_OVERRIDES = {
    "world": {"character_scale": 0.2},
    "train": {
        "stage1_iters": 1500,
        "stage2_iters": 500,
        "batch_size": 64,
        "lr": 3e-3,
        "perturb_magnitude": 1.0,
        "n_scenes": 512,
    },
}


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{path + k!r} must be a mapping")
            out[k] = _merge(base[k], v, path + k + ".")
        elif isinstance(base[k], float) and isinstance(v, str):
            # YAML 1.1 reads "1e-3" as a string
            try:
                out[k] = float(v)
            except ValueError as exc:
                raise ConfigError(f"{path + k!r} must be a number, got {v!r}") from exc
        else:
            out[k] = v
    return out


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Validated configuration document; ``data`` is the full nested mapping."""

    data: dict

    def __post_init__(self):
        self.validate()

    # construction -------------------------------------------------------

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a mapping")
        if "version" not in doc:
            raise ConfigError("config document has no version tag")
        if doc["version"] != CONFIG_VERSION:
            raise ConfigError(f"config version {doc['version']!r} unsupported (expected {CONFIG_VERSION})")
        return cls(_merge(DEFAULTS, doc))

    @classmethod
    def default(cls, trend=False, **overrides):
        doc = _merge(DEFAULTS, TREND_OVERRIDES) if trend else copy.deepcopy(DEFAULTS)
        return cls(_merge(doc, overrides))

    @classmethod
    def load(cls, path):
        try:
            doc = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)

    def replace(self, **overrides):
        return ExperimentConfig(_merge(self.data, overrides))

    def with_seed(self, seed):
        return self.replace(seed=int(seed))

    # serialization ------------------------------------------------------

    def dumps(self):
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=False)

    def save(self, path):
        Path(path).write_text(self.dumps())

    @property
    def hash(self):
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def stamp(self):
        """Header lines written at the top of every artifact."""
        seeds = " ".join(f"{k}={v}" for k, v in sorted(self.seeds().items()))
        return f"config_hash: {self.hash}\nseed: {self.data['seed']}\nmodule_seeds: {seeds}"

    def __getitem__(self, key):
        return self.data[key]

    # seeds --------------------------------------------------------------

    def module_seed(self, module, purpose="main"):
        return derive_seed(self.data["seed"], module, purpose)

    def seeds(self):
        return {
            "world": self.module_seed("world", "render"),
            "codec": self.module_seed("codec", "affine"),
            "field": self.module_seed("field", "init"),
            "trainer": self.module_seed("trainer", "samples"),
            "sampler": self.module_seed("sampler", "x0"),
            "identity": self.module_seed("memory", "identity"),
        }

    # module configs -----------------------------------------------------

    def world(self):
        w = self.data["world"]
        return World(pixel_dim=w["d"], pose_dim=w["p"], identity_dim=w["identity_dim"],
                     n_pose_features=w["n_pose_features"], background_scale=w["background_scale"],
                     background_correlation=w["background_correlation"], character_scale=w["character_scale"],
                     pose_step=w["pose_step"], seed=self.seeds()["world"])

    def codec_params(self):
        c = self.data["codec"]
        return {"dim": self.data["world"]["d"], "gamma": c["gamma"], "noise_sigma": c["sigma"],
                "seed": self.seeds()["codec"]}

    def rollout_config(self, mode=None, chunks=None):
        mem, ro = self.data["memory"], self.data["rollout"]
        return RolloutConfig(mode or ro["mode"], ro["N"] if chunks is None else chunks, ro["L"],
                             mem["r"], mem["K"], mem["m"], self.seeds()["identity"])

    def sampler_config(self):
        return SamplerConfig(self.data["rollout"]["S"], self.seeds()["sampler"])

    def train_config(self, objective=None, **overrides):
        t, mem = self.data["train"], self.data["memory"]
        kw = dict(
            stage1_iters=t["stage1_iters"], stage2_iters=t["stage2_iters"], batch_size=t["batch_size"],
            lr=t["lr"], beta=t["beta"],
            perturb_spec=PerturbationSpec(t["perturb_kind"], t["perturb_magnitude"]),
            motion_perturb_spec=PerturbationSpec(t["motion_perturb_kind"], t["motion_perturb_magnitude"]),
            stage2_objective=objective or t["objective"], restoration=t["restoration"],
            augment_identity=mem["augment_identity"], augment_magnitude=mem["augment_magnitude"],
            frames_per_chunk=self.data["rollout"]["L"], r=mem["r"], K=mem["K"],
            first_chunk_prob=t["first_chunk_prob"], memory_dropout=t["memory_dropout"],
            sink_prob=t["sink_prob"], seed=self.seeds()["trainer"],
        )
        kw.update(overrides)
        return TrainConfig(**kw)

    # validation ---------------------------------------------------------

    def validate(self):
        d = self.data
        if d.get("version") != CONFIG_VERSION:
            raise ConfigError(f"config version {d.get('version')!r} unsupported (expected {CONFIG_VERSION})")
        if not isinstance(d["seed"], int) or not 0 <= d["seed"] < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        mem, ro, t, ev, b = d["memory"], d["rollout"], d["train"], d["eval"], d["bench"]
        if mem["T_z"] != ro["L"]:
            raise ConfigError(f"context length T_z={mem['T_z']} must equal chunk length L={ro['L']}")
        if ro["mode"] not in MODES:
            raise ConfigError(f"unknown rollout mode {ro['mode']!r}")
        if t["objective"] not in OBJECTIVES or t["restoration"] not in RESTORATIONS:
            raise ConfigError("train.objective / train.restoration out of range")
        for key in ("perturb_kind", "motion_perturb_kind"):
            if t[key] not in PERTURBATION_KINDS:
                raise ConfigError(f"train.{key} must be one of {PERTURBATION_KINDS}")
        if t["n_scenes"] < 1 or t["scene_frames"] < 2 * ro["L"]:
            raise ConfigError("training needs >= 1 scene of at least two chunks")
        if min(ev["n_scenes"], ev["bias_scenes"]) < 1 or ev["probe_draws"] < 1 or ev["probe_steps"] < 1:
            raise ConfigError("eval counts must be >= 1")
        if not 0.0 <= ev["probe_t"] < 1.0:
            raise ConfigError("eval.probe_t must lie in [0, 1)")
        if b["n"] < 1 or not b["gammas"] or not b["sigmas"]:
            raise ConfigError("bench needs n >= 1 and nonempty gamma/sigma lists")
        if any(not 0.0 < g <= 1.0 for g in b["gammas"]) or any(s < 0.0 for s in b["sigmas"]):
            raise ConfigError("bench gammas must lie in (0, 1] and sigmas be >= 0")
        if d["field"]["hidden_width"] < 1 or d["field"]["time_pairs"] < 0:
            raise ConfigError("field sizes out of range")
        try:
            self.world()
            self.rollout_config()
            self.sampler_config()
            self.train_config()
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        from .codec import LossyCodec

        LossyCodec(**self.codec_params()).fit()
