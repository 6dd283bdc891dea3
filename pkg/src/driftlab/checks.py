"""Self-contained invariant suite behind ``driftlab check``.

Every check looks up the functions it exercises through their module at call
time, so a patched or broken implementation is caught by name.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import codec as codec_mod
from . import flow_core as fc
from . import metrics as metrics_mod
from . import sampler as sampler_mod
from . import synth_world as sw
from . import trainer as trainer_mod
from . import vector_field as vf_mod
from ._rng import stream
from .memory import ModelInput

CHECKS = {}


def check(name):
    def register(fn):
        CHECKS[name] = fn
        return fn
    return register


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:32s} {self.detail}"


# flow identities ------------------------------------------------------------

@check("flow.additive_decomposition")
def _decomposition():
    rng = stream(0, "check", "decomposition")
    x0, x1, x1t = rng.normal(size=(3, 10_000, 8))
    t = rng.uniform(0.0, 0.99, size=10_000)
    worst = max(fc.decomposition_residual(x0[i], x1[i], x1t[i], float(t[i])) for i in range(10_000))
    return worst <= 1e-10, f"max residual {worst:.2e} over 10^4 draws (d=8)"


@check("flow.rfm_subsumes_fm")
def _subsumes():
    rng = stream(0, "check", "subsumes")
    worst = 0.0
    for t in rng.uniform(size=200):
        x0, x1 = rng.normal(size=(2, 6, 8))
        worst = max(worst, float(np.max(np.abs(fc.restorative_velocity(x0, x1, x1, t) - fc.fm_velocity(x0, x1)))))
    return worst <= 1e-12, f"max |U~ - U| at xi=0: {worst:.2e}"


@check("flow.one_step_endpoint")
def _one_step():
    rng = stream(0, "check", "one_step")
    x0, x1 = rng.normal(size=(2, 6, 8))
    err = float(np.max(np.abs(x0 + fc.fm_velocity(x0, x1) - x1)))
    return err <= 1e-12, f"|x0 + U - x1| = {err:.2e}"


# schedule -------------------------------------------------------------------

@check("schedule")
def _schedule():
    grid = np.linspace(0.0, 1.0, 1001)
    bad = []
    for beta in (4.0, 16.0, 64.0):
        lam = np.asarray(fc.lambda_weight(grid, beta))
        if abs(fc.lambda_weight(0.0, beta)) > 1e-12 or abs(fc.lambda_weight(1.0, beta)) > 1e-12:
            bad.append(f"endpoints beta={beta}")
        if abs(fc.lambda_weight(0.5, beta) - 1.0) > 1e-12:
            bad.append(f"peak beta={beta}")
        if np.max(np.abs(lam - lam[::-1])) > 1e-12:
            bad.append(f"symmetry beta={beta}")
        if np.any(np.diff(lam[:501]) < -1e-12):
            bad.append(f"monotone beta={beta}")
        if lam.min() < -1e-12 or lam.max() > 1.0 + 1e-12:
            bad.append(f"range beta={beta}")
    return not bad, "; ".join(bad) or "beta in {4, 16, 64} on a 1001-point grid"


@check("schedule.target_bound")
def _target_bound():
    rng = stream(0, "check", "bound")
    worst = -np.inf
    for t in np.linspace(0.0, 1.0, 101):
        x0, x1, x1t = rng.normal(size=(3, 6, 8))
        ut = trainer_mod.restorative_target(x0, x1, x1t, t)
        slack = (np.linalg.norm(ut) - np.linalg.norm(fc.fm_velocity(x0, x1))
                 - np.linalg.norm(fc.interpolate(x0, x1, t) - fc.interpolate(x0, x1t, t)))
        worst = max(worst, float(slack))
    return worst <= 1e-12, f"max ||U~|| - ||U|| - ||X_t - X~_t|| = {worst:.2e}"


@check("schedule.exact_coefficient_blowup")
def _blowup():
    rng = stream(0, "check", "blowup")
    x0, x1 = rng.normal(size=(2, 6, 8))
    x1t = x1 + 0.1 * rng.normal(size=x1.shape)
    t = 0.999
    base = fc.fm_velocity(x0, x1)
    corr_exact = trainer_mod.restorative_target(x0, x1, x1t, t, restoration="exact") - base
    corr_lam = trainer_mod.restorative_target(x0, x1, x1t, t, restoration="lambda") - base
    ratio = float(np.linalg.norm(corr_exact) / np.linalg.norm(corr_lam))
    return ratio >= 100.0, f"correction-norm ratio at t=0.999: {ratio:.3g}"


# gradients ------------------------------------------------------------------

def gradient_error(field, inp, target, n_coords=64, h=1e-5, seed=0):
    """Max relative error of the analytic gradient against central differences."""
    theta = field.get_flat_params()
    analytic = field.loss_and_grad(inp, target).grad
    coords = stream(seed, "check", "fd").choice(theta.size, size=min(n_coords, theta.size), replace=False)
    worst = 0.0
    try:
        for i in coords:
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            lp = field.set_flat_params(tp).loss_and_grad(inp, target).loss
            lm = field.set_flat_params(tm).loss_and_grad(inp, target).loss
            num = (lp - lm) / (2 * h)
            worst = max(worst, abs(num - analytic[i]) / max(abs(num), abs(analytic[i]), 1e-8))
    finally:
        field.set_flat_params(theta)
    return worst


def _grad_setup(purpose):
    rng = stream(0, "check", purpose)
    field = vf_mod.VelocityField(hidden_width=16, random_state=1).initialize(8, 3)
    inp = ModelInput(rng.normal(size=(4, 6, 8)), rng.normal(size=(4, 6, 3)),
                     rng.normal(size=(4, 6, 8)), rng.uniform(size=4))
    return field, inp, rng


@check("gradient.fm_loss")
def _grad_fm():
    field, inp, rng = _grad_setup("grad_fm")
    x0, x1 = rng.normal(size=(2, 4, 6, 8))
    err = gradient_error(field, inp, fc.fm_velocity(x0, x1))
    return err < 1e-4, f"max relative error {err:.2e} on 64 coordinates"


@check("gradient.rfm_loss")
def _grad_rfm():
    field, inp, rng = _grad_setup("grad_rfm")
    x0, x1, x1t = rng.normal(size=(3, 4, 6, 8))
    target = np.stack([trainer_mod.restorative_target(x0[b], x1[b], x1t[b], inp.t[b]) for b in range(4)])
    err = gradient_error(field, inp, target, seed=1)
    return err < 1e-4, f"max relative error {err:.2e} on 64 coordinates"


# codec ----------------------------------------------------------------------

@check("codec.closed_form_curve")
def _codec_curve():
    c = codec_mod.LossyCodec(dim=16, gamma=0.9, noise_sigma=0.0, seed=2).fit()
    x = stream(0, "check", "codec").normal(size=16)
    got, ref = c.roundtrip_error_curve(x, 20), c.closed_form_error_curve(x, 20)
    err = float(np.max(np.abs(np.subtract(got, ref))))
    return err <= 1e-9, f"max deviation from (1-gamma^k)||x-mu||: {err:.2e}"


@check("codec.error_increasing")
def _codec_increasing():
    c = codec_mod.LossyCodec(dim=16, gamma=0.97, noise_sigma=0.0, seed=2).fit()
    curve = np.array(c.roundtrip_error_curve(stream(0, "check", "codec").normal(size=16), 20))
    return bool(np.all(np.diff(curve) > 0)), f"min increment {np.min(np.diff(curve)):.2e}"


@check("codec.lossless_identity")
def _codec_lossless():
    c = codec_mod.LossyCodec(dim=16, gamma=1.0, noise_sigma=0.0, seed=2).fit()
    x = stream(0, "check", "codec").normal(size=(5, 16))
    err = float(np.max(np.abs(c.roundtrip(x) - x)))
    return err <= 1e-12, f"max round-trip error {err:.2e}"


# rollout --------------------------------------------------------------------

def _rollout_scene(N, L=6):
    return sw.World(seed=5).sample_scene(seed=0, n_frames=N * L)


@check("rollout.roundtrip_accounting")
def _accounting():
    N, bad = 5, []
    scene = _rollout_scene(N)
    for mode in sampler_mod.MODES:
        c = codec_mod.LossyCodec(dim=32, gamma=1.0, noise_sigma=0.0, seed=3).fit()
        oracle = sampler_mod.CarryOverOracle(scene, c, 6)
        _, trace = sampler_mod.rollout(oracle, scene, c, sampler_mod.RolloutConfig(mode, N, 6),
                                       sampler_mod.SamplerConfig())
        want = 0 if mode in sampler_mod.LATENT_MODES else N - 1
        if trace.inter_chunk_roundtrips != want:
            bad.append(f"{mode}: {trace.inter_chunk_roundtrips} != {want}")
    return not bad, "; ".join(bad) or f"N-1={N - 1} image-mode round-trips, 0 in latent modes"


@check("rollout.oracle_end_to_end")
def _oracle():
    scene = _rollout_scene(4)
    worst = 0.0
    for mode in sampler_mod.MODES:
        c = codec_mod.LossyCodec(dim=32, gamma=1.0, noise_sigma=0.0, seed=3).fit()
        _, trace = sampler_mod.rollout(sampler_mod.CarryOverOracle(scene, c, 6), scene, c,
                                       sampler_mod.RolloutConfig(mode, 4, 6), sampler_mod.SamplerConfig())
        truth = c.encode(scene.frames())
        worst = max(worst, float(np.max(np.abs(np.concatenate(trace.latents) - truth))))
    return worst <= 1e-8, f"max latent error over all modes {worst:.2e}"


# trainer --------------------------------------------------------------------

@check("trainer.stage_separation")
def _stages():
    world = sw.World(seed=5)
    scene = world.sample_scene(seed=1, n_frames=24)
    c = codec_mod.LossyCodec(dim=32, seed=3).fit()
    cfg = trainer_mod.TrainConfig(perturb_spec=sw.PerturbationSpec("compose", 0.5))
    lat = c.encode(scene.frames())
    bad = 0
    for s in range(20):
        a = trainer_mod.make_stage1_sample(scene, c, cfg, s)
        b = trainer_mod.make_stage2_sample(scene, c, cfg, s)
        clean = lat[b.start + 5:b.start + 6]
        bad += a.objective != "fm" or a.endpoint_perturbed
        bad += b.motion_perturbed or not np.array_equal(b.inp.context[:1], clean)
    return bad == 0, f"{bad} provenance violations in 20 draws per stage"


# metrics --------------------------------------------------------------------

@check("metrics.offset_decomposition")
def _metrics_offset():
    scene = sw.World(seed=5).sample_scene(seed=2, n_frames=24)
    c = stream(0, "check", "metrics").normal(size=32)
    chunks = [f + c for f, _ in sw.split_chunks(scene, 6)]
    rep = metrics_mod.drift_report(chunks, scene)
    err = float(np.max(np.abs(rep.background_mse - np.sum(c ** 2) / 32)))
    ok = err <= 1e-12 and float(np.max(rep.character_mse)) <= 1e-20 and abs(rep.slopes["background_mse"]) <= 1e-12
    return ok, f"background_mse off by {err:.2e}"


@check("metrics.ols_slope")
def _ols():
    x = np.arange(1, 11, dtype=float)
    err = abs(metrics_mod.ols_slope(-0.7 * x + 3.0) + 0.7)
    return err <= 1e-9, f"slope error {err:.2e}"


def run_checks(names=None):
    results = []
    for name, fn in CHECKS.items():
        if names is not None and name not in names:
            continue
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return results
