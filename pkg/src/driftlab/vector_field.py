"""Trainable velocity field with hand-written reverse-mode gradients.

The field is a two-hidden-layer tanh perceptron applied independently at
every temporal position (a 1x1 map shared across positions). Per position
it sees the pose-injected state, the same-position context slice, the mean
of all context slices, and a sinusoidal embedding of ``t``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._rng import stream
from .exceptions import ConfigError, DimensionError, NumericError
from .memory import ModelInput, PoseAdapter

CHECKPOINT_VERSION = 1
PARAM_ORDER = ("pose_w", "pose_b", "w1", "b1", "w2", "b2", "w3", "b3")


def time_embedding(t, n_pairs=4):
    """Sine/cosine pairs at frequencies ``pi * 2**k``; shape ``(..., 2 * n_pairs)``."""
    t = np.asarray(t, dtype=float)[..., None]
    freqs = np.pi * 2.0 ** np.arange(n_pairs)
    return np.concatenate([np.sin(freqs * t), np.cos(freqs * t)], axis=-1)


@dataclass
class GradientRecord:
    loss: float
    grad: np.ndarray


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))


class VelocityField(BaseEstimator):
    """Per-position MLP velocity model ``v(H_t, t | C)``.

    Parameters
    ----------
    hidden_width : int
        Width of both hidden layers.
    time_pairs : int
        Number of sine/cosine pairs in the time embedding.
    pool_context : bool
        Feed the mean over context slices as an extra input block.
    train_config : TrainConfig or None
        Used by :meth:`fit`; defaults to ``TrainConfig()``.
    random_state : int
        Seeds initialisation and training streams.
    """

    def __init__(self, hidden_width=64, time_pairs=4, pool_context=True, train_config=None, random_state=0):
        self.hidden_width = hidden_width
        self.time_pairs = time_pairs
        self.pool_context = pool_context
        self.train_config = train_config
        self.random_state = random_state

    # parameters ---------------------------------------------------------

    @property
    def input_width(self):
        blocks = 3 if self.pool_context else 2
        return blocks * self.latent_dim_ + 2 * self.time_pairs

    def initialize(self, latent_dim, pose_dim, zero=False):
        """Allocate parameters; ``zero`` gives the all-zero field."""
        self.latent_dim_, self.pose_dim_ = int(latent_dim), int(pose_dim)
        d, p, h, n_in = self.latent_dim_, self.pose_dim_, self.hidden_width, self.input_width
        shapes = {"pose_w": (d, p), "pose_b": (d,), "w1": (n_in, h), "b1": (h,),
                  "w2": (h, h), "b2": (h,), "w3": (h, d), "b3": (d,)}
        if zero:
            self.params_ = {k: np.zeros(s) for k, s in shapes.items()}
        else:
            rng = stream(self.random_state, "field", "init")
            self.params_ = {
                # small pose gain keeps the injected state close to X_t at init
                "pose_w": rng.normal(scale=0.1 / np.sqrt(p), size=(d, p)),
                "pose_b": np.zeros(d),
                "w1": rng.normal(scale=1.0 / np.sqrt(n_in), size=(n_in, h)),
                "b1": np.zeros(h),
                "w2": rng.normal(scale=1.0 / np.sqrt(h), size=(h, h)),
                "b2": np.zeros(h),
                "w3": rng.normal(scale=1.0 / np.sqrt(h), size=(h, d)),
                "b3": np.zeros(d),
            }
        self.n_iter_ = 0
        return self

    def get_flat_params(self):
        check_is_fitted(self, "params_")
        return np.concatenate([self.params_[k].ravel() for k in PARAM_ORDER])

    def set_flat_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_params:
            raise DimensionError(f"expected {self.n_params} parameters, got {theta.size}")
        offset = 0
        for k in PARAM_ORDER:
            shape = self.params_[k].shape
            n = int(np.prod(shape))
            self.params_[k] = theta[offset:offset + n].reshape(shape).copy()
            offset += n
        return self

    @property
    def n_params(self):
        return sum(v.size for v in self.params_.values())

    @property
    def pose_adapter(self):
        return PoseAdapter(self.params_["pose_w"], self.params_["pose_b"])

    def block_slices(self):
        """Flat-vector slice of each parameter block."""
        out, offset = {}, 0
        for k in PARAM_ORDER:
            n = self.params_[k].size
            out[k] = slice(offset, offset + n)
            offset += n
        return out

    # forward / backward -------------------------------------------------

    def _forward(self, inp):
        check_is_fitted(self, "params_")
        state, poses, ctx = inp.state, inp.poses, inp.context
        single = state.ndim == 2
        if single:
            state, poses, ctx = state[None], poses[None], ctx[None]
        B, T, d = state.shape
        if d != self.latent_dim_ or poses.shape[-1] != self.pose_dim_:
            raise DimensionError(f"field expects d={self.latent_dim_}, p={self.pose_dim_}; "
                                 f"got state {state.shape}, poses {poses.shape}")
        P = self.params_
        t = np.broadcast_to(np.asarray(inp.t, dtype=float), (B,))
        xhat = state + poses @ P["pose_w"].T + P["pose_b"]
        blocks = [xhat, ctx]
        if self.pool_context:
            blocks.append(np.broadcast_to(ctx.mean(axis=1, keepdims=True), ctx.shape))
        blocks.append(np.broadcast_to(time_embedding(t, self.time_pairs)[:, None, :], (B, T, 2 * self.time_pairs)))
        z = np.concatenate(blocks, axis=-1).reshape(B * T, -1)
        h1 = np.tanh(z @ P["w1"] + P["b1"])
        h2 = np.tanh(h1 @ P["w2"] + P["b2"])
        out = (h2 @ P["w3"] + P["b3"]).reshape(B, T, d)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"non-finite field output (max |state|={np.max(np.abs(state)):.3g}, "
                               f"max |param|={max(np.max(np.abs(v)) for v in P.values()):.3g})")
        cache = (z, h1, h2, poses, B, T, d)
        return (out[0] if single else out), cache

    def predict(self, inp: ModelInput):
        """Velocity for every target position; same shape as ``inp.state``."""
        return self._forward(inp)[0]

    evaluate = predict

    def loss_and_grad(self, inp: ModelInput, target_velocity):
        """Mean squared error against ``target_velocity`` and its gradient in flat-parameter order."""
        out, (z, h1, h2, poses, B, T, d) = self._forward(inp)
        target = np.asarray(target_velocity, dtype=float)
        if target.shape != out.shape:
            raise DimensionError(f"target {target.shape} does not match prediction {out.shape}")
        resid = (out - target).reshape(B * T, d)
        loss = float(np.mean(resid ** 2))
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss (max |residual|={np.max(np.abs(resid)):.3g})")
        P = self.params_
        dout = 2.0 * resid / resid.size
        g = {"w3": h2.T @ dout, "b3": dout.sum(axis=0)}
        da2 = (dout @ P["w3"].T) * (1.0 - h2 ** 2)
        g["w2"], g["b2"] = h1.T @ da2, da2.sum(axis=0)
        da1 = (da2 @ P["w2"].T) * (1.0 - h1 ** 2)
        g["w1"], g["b1"] = z.T @ da1, da1.sum(axis=0)
        dxhat = (da1 @ P["w1"][:d].T).reshape(B, T, d)
        g["pose_w"] = np.einsum("btd,btp->dp", dxhat, poses.reshape(B, T, -1))
        g["pose_b"] = dxhat.sum(axis=(0, 1))
        grad = np.concatenate([g[k].ravel() for k in PARAM_ORDER])
        return GradientRecord(loss, grad)

    # training -----------------------------------------------------------

    def fit(self, scenes, codec, y=None):
        """Two-stage training on ``scenes``; see :func:`driftlab.trainer.train`."""
        from .trainer import TrainConfig, train

        cfg = self.train_config if self.train_config is not None else TrainConfig()
        train(self, scenes, codec, cfg)
        return self


def adam_step(field, grad: GradientRecord, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update of ``field`` in place; returns the advanced state."""
    g = np.asarray(grad.grad, dtype=float)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient")
    k = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    update = lr * (m / (1.0 - beta1 ** k)) / (np.sqrt(v / (1.0 - beta2 ** k)) + eps)
    if not np.all(np.isfinite(update)):
        raise NumericError(f"non-finite Adam update at step {k}")
    if lr != 0.0:
        field.set_flat_params(field.get_flat_params() - update)
    return AdamState(m, v, k)


step = adam_step


def save_checkpoint(field, path, meta=None):
    """Versioned header line (JSON) followed by one parameter value per line."""
    header = {
        "format": "driftlab-checkpoint",
        "version": CHECKPOINT_VERSION,
        "latent_dim": field.latent_dim_,
        "pose_dim": field.pose_dim_,
        "hyperparameters": {k: v for k, v in field.get_params(deep=False).items() if k != "train_config"},
        "blocks": {k: list(field.params_[k].shape) for k in PARAM_ORDER},
        "iterations": int(getattr(field, "n_iter_", 0)),
        "meta": meta or {},
    }
    lines = [json.dumps(header, sort_keys=True)]
    lines.extend(repr(float(v)) for v in field.get_flat_params())
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Rebuild a field from :func:`save_checkpoint` output; returns ``(field, header)``."""
    text = Path(path).read_text().splitlines()
    header = json.loads(text[0])
    if header.get("format") != "driftlab-checkpoint" or header.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint header: {header.get('format')} v{header.get('version')}")
    field = VelocityField(**header["hyperparameters"]).initialize(header["latent_dim"], header["pose_dim"], zero=True)
    field.set_flat_params(np.array([float(v) for v in text[1:]]))
    field.n_iter_ = header["iterations"]
    return field, header
