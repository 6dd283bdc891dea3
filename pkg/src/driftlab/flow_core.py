"""Closed-form flow-matching and restorative flow-matching algebra.

All functions are elementwise over arrays of any shape (a single latent
frame, a chunk ``(T_z, d)``, or a batch of chunks) and are pure.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_unit_time, same_shape
from .exceptions import DomainError, NumericError, SingularityError

DEFAULT_BETA = 16.0
SINGULARITY_EPS = 1e-3


def _arr(x, name):
    a = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name}: non-finite entries")
    return a


def _check_beta(beta):
    beta = float(beta)
    if not beta > 0.0:
        raise DomainError(f"beta must be positive, got {beta}")
    return beta


def interpolate(x0, x1, t):
    """Linear interpolant ``(1 - t) x0 + t x1``."""
    x0, x1 = _arr(x0, "x0"), _arr(x1, "x1")
    same_shape(x0, x1, names=("x0", "x1"))
    t = check_unit_time(t)
    if t == 0.0:
        return x0.copy()
    if t == 1.0:
        return x1.copy()
    return (1.0 - t) * x0 + t * x1


def fm_velocity(x0, x1):
    """Constant target velocity of the linear interpolant, ``x1 - x0``."""
    x0, x1 = _arr(x0, "x0"), _arr(x1, "x1")
    same_shape(x0, x1, names=("x0", "x1"))
    return x1 - x0


def exact_restorative_velocity(x1, xt_tilde, t, eps=SINGULARITY_EPS):
    """Constant velocity carrying ``xt_tilde`` at time ``t`` onto ``x1`` at time 1.

    Raises SingularityError for ``t > 1 - eps``; the coefficient ``1/(1-t)``
    is unbounded there.
    """
    x1, xt_tilde = _arr(x1, "x1"), _arr(xt_tilde, "xt_tilde")
    same_shape(x1, xt_tilde, names=("x1", "xt_tilde"))
    t = check_unit_time(t)
    if t > 1.0 - eps:
        raise SingularityError(f"t={t} closer than eps={eps} to the pole at t=1")
    return (x1 - xt_tilde) / (1.0 - t)


def lambda_weight(t, beta=DEFAULT_BETA):
    """Gaussian restoration weight, normalised to 0 at t in {0, 1} and 1 at t = 1/2.

    Accepts scalar or array ``t``.
    """
    beta = _check_beta(beta)
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any((t_arr < 0.0) | (t_arr > 1.0)) or not np.all(np.isfinite(t_arr)):
        raise DomainError("t outside [0, 1]")
    floor = np.exp(-beta / 4.0)
    # expm1 keeps the denominator accurate for small beta
    out = (np.exp(-beta * (t_arr - 0.5) ** 2) - floor) / -np.expm1(-beta / 4.0)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def restoration_coefficient(t, beta=DEFAULT_BETA, kind="lambda", eps=SINGULARITY_EPS):
    """Coefficient on ``x_t - x_t_tilde``: rescheduled ``lambda`` or the exact ``1/(1-t)``."""
    if kind == "lambda":
        return lambda_weight(t, beta)
    if kind == "exact":
        t = check_unit_time(t)
        if t > 1.0 - eps:
            raise SingularityError(f"t={t} closer than eps={eps} to the pole at t=1")
        return 1.0 / (1.0 - t)
    raise DomainError(f"unknown restoration coefficient kind {kind!r}")


def restorative_velocity(x0, x1, x1_tilde, t, beta=DEFAULT_BETA):
    """Rescheduled restorative target ``U + lambda(t) (x_t - x_t_tilde)``."""
    x0, x1, x1_tilde = _arr(x0, "x0"), _arr(x1, "x1"), _arr(x1_tilde, "x1_tilde")
    same_shape(x0, x1, x1_tilde, names=("x0", "x1", "x1_tilde"))
    t = check_unit_time(t)
    lam = lambda_weight(t, beta)
    return fm_velocity(x0, x1) + lam * (interpolate(x0, x1, t) - interpolate(x0, x1_tilde, t))


def decomposition_residual(x0, x1, x1_tilde, t, eps=SINGULARITY_EPS):
    """Max-norm gap between the exact restorative velocity and FM velocity plus correction.

    Zero up to rounding for every finite input; serves as a numerical check of
    the additive decomposition.
    """
    xt = interpolate(x0, x1, t)
    xt_tilde = interpolate(x0, x1_tilde, t)
    exact = exact_restorative_velocity(x1, xt_tilde, t, eps=eps)
    split = fm_velocity(x0, x1) + (xt - xt_tilde) / (1.0 - float(t))
    return float(np.max(np.abs(exact - split))) if exact.size else 0.0


@dataclass(frozen=True)
class RestorationSchedule:
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        _check_beta(self.beta)

    def __call__(self, t):
        return lambda_weight(t, self.beta)


@dataclass(frozen=True)
class FlowSample:
    """Endpoints, time, interpolated state and target velocity of one FM draw."""

    x0: np.ndarray
    x1: np.ndarray
    t: float
    xt: np.ndarray
    u: np.ndarray

    @classmethod
    def build(cls, x0, x1, t):
        return cls(np.asarray(x0, float), np.asarray(x1, float), float(t),
                   interpolate(x0, x1, t), fm_velocity(x0, x1))


@dataclass(frozen=True)
class PerturbedFlowSample:
    base: FlowSample
    x1_tilde: np.ndarray
    xt_tilde: np.ndarray
    u_tilde: np.ndarray
    beta: float

    @classmethod
    def build(cls, base: FlowSample, x1_tilde, beta=DEFAULT_BETA):
        x1_tilde = np.asarray(x1_tilde, float)
        xt_tilde = interpolate(base.x0, x1_tilde, base.t)
        u_tilde = base.u + lambda_weight(base.t, beta) * (base.xt - xt_tilde)
        return cls(base, x1_tilde, xt_tilde, u_tilde, float(beta))
