"""Drift metrics separating static-content degradation from identity drift.

For a generated chunk with error ``e_l = gen_l - gt_l`` over its ``L`` frames:

* ``background_mse`` is the mean square of the temporal mean ``mean_l e_l``,
  i.e. the error on the static component of the chunk;
* ``character_mse`` is the mean square of ``e_l - mean_l e_l``, the error on
  the time-varying component;
* ``identity_mse`` compares the ground-truth identity code with the one
  recovered by least squares from ``gen_l - background`` through the known
  render map.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import clone

from .exceptions import ConfigError, DimensionError
from .sampler import RolloutConfig, rollout

CSV_COLUMNS = ("run_id", "mode", "chunk_index", "background_mse", "character_mse", "identity_mse", "psnr_analog")
METRICS = ("background_mse", "character_mse", "identity_mse", "frame_mse")

# ablation rows: preset -> (rollout mode, training objective of the field driving it)
ABLATION_PRESETS = {
    "baseline": ("image_carryover", "fm"),
    "wo_rfm": ("latent_plp", "fm"),
    "wo_plp": ("image_carryover", "rfm"),
    "full": ("latent_plp_rfm", "rfm"),
}


def ols_slope(y, x=None):
    """Least-squares slope of ``y`` against ``x`` (default 1..n); 0 for fewer than two points."""
    y = np.asarray(y, dtype=float)
    if len(y) < 2:
        return 0.0
    x = np.arange(1, len(y) + 1, dtype=float) if x is None else np.asarray(x, float)
    xc = x - x.mean()
    return float(xc @ (y - y.mean()) / (xc @ xc))


@dataclass
class DriftReport:
    background_mse: np.ndarray
    character_mse: np.ndarray
    identity_mse: np.ndarray
    frame_mse: np.ndarray
    psnr_analog: np.ndarray
    psnr_is_max: np.ndarray
    slopes: dict = field(default_factory=dict)

    @property
    def n_chunks(self):
        return len(self.background_mse)

    def rows(self, run_id, mode):
        out = []
        for n in range(self.n_chunks):
            out.append({
                "run_id": run_id, "mode": mode, "chunk_index": n + 1,
                "background_mse": float(self.background_mse[n]),
                "character_mse": float(self.character_mse[n]),
                "identity_mse": float(self.identity_mse[n]),
                "psnr_analog": float(self.psnr_analog[n]),
            })
        return out

    def summary(self):
        return {
            "slopes": dict(self.slopes),
            "mean": {k: float(np.mean(getattr(self, k))) for k in METRICS},
            "psnr_capped_chunks": [int(i) + 1 for i in np.flatnonzero(self.psnr_is_max)],
        }


def _identity_mse(gen, poses, scene):
    basis = scene.world.character_basis(poses)
    resid = gen - scene.background
    A = basis.reshape(-1, basis.shape[-1])
    est, *_ = np.linalg.lstsq(A, resid.reshape(-1), rcond=None)
    return float(np.mean((est - scene.identity) ** 2))


def drift_report(generated, scene):
    """Per-chunk metrics of ``generated`` pixel chunks against ``scene``."""
    generated = [np.asarray(g, float) for g in generated]
    if not generated:
        raise DimensionError("no generated chunks")
    L = generated[0].shape[0]
    if any(g.shape != generated[0].shape for g in generated) or len(generated) * L != scene.n_frames:
        raise DimensionError(f"{len(generated)} chunks of {L} frames do not cover a {scene.n_frames}-frame scene")
    truth = scene.frames()
    bg, ch, ident, fr, psnr, capped = [], [], [], [], [], []
    for n, gen in enumerate(generated):
        sl = slice(n * L, (n + 1) * L)
        err = gen - truth[sl]
        static = err.mean(axis=0)
        bg.append(float(np.mean(static ** 2)))
        ch.append(float(np.mean((err - static) ** 2)))
        ident.append(_identity_mse(gen, scene.pose_track[sl], scene))
        mse = float(np.mean(err ** 2))
        fr.append(mse)
        capped.append(mse == 0.0)
        psnr.append(math.inf if mse == 0.0 else -10.0 * math.log10(mse))
    report = DriftReport(*(np.array(v) for v in (bg, ch, ident, fr, psnr)), np.array(capped))
    report.slopes = {k: ols_slope(getattr(report, k)) for k in METRICS}
    report.slopes["psnr_analog"] = ols_slope(report.psnr_analog) if not any(capped) else None
    return report


def _fmt(v):
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def write_report_csv(rows, path, header_comment=None):
    """Write metric rows with exact float reprs so reruns are byte-identical."""
    buf = io.StringIO()
    if header_comment:
        for line in header_comment.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    Path(path).write_text(buf.getvalue())


def write_summary_json(summary, path):
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True, allow_nan=False,
                                     default=lambda o: None) + "\n")


@dataclass
class AblationTable:
    reports: dict  # preset -> list of DriftReport, one per scene
    presets: dict

    def slope_table(self, metric="background_mse"):
        return {name: [r.slopes[metric] for r in reps] for name, reps in self.reports.items()}

    def wins(self, reference="full", metric="background_mse"):
        """Per ablation: number of scenes where ``reference`` slope <= ablation slope."""
        slopes = self.slope_table(metric)
        ref = np.array(slopes[reference])
        return {name: int(np.sum(ref <= np.array(s))) for name, s in slopes.items() if name != reference}

    def rows(self):
        out = []
        for name, reps in self.reports.items():
            mode = self.presets[name][0]
            for i, rep in enumerate(reps):
                out.extend(rep.rows(f"{name}/scene{i}", mode))
        return out

    def summary(self):
        return {
            "presets": {k: {"mode": m, "objective": o} for k, (m, o) in self.presets.items()},
            "background_mse_slopes": self.slope_table(),
            "mean_background_mse_slope": {k: float(np.mean(v)) for k, v in self.slope_table().items()},
            "full_wins": self.wins(),
            "n_scenes": len(next(iter(self.reports.values()))),
        }


def ablation_suite(fields, scenes, codec, rcfg: RolloutConfig, scfg, presets=None, parallel=False):
    """Roll out every preset on the same scenes and seeds.

    ``fields`` maps a training objective (``"fm"``/``"rfm"``) to a fitted field.
    """
    presets = dict(ABLATION_PRESETS if presets is None else presets)
    for name, (mode, objective) in presets.items():
        if fields.get(objective) is None:
            raise ConfigError(f"preset {name!r} needs a field trained with objective {objective!r}")

    def run(item):
        name, (mode, objective) = item
        local_codec = clone(codec).set_params(dim=codec.n_features_in_).fit()
        cfg = RolloutConfig(mode, rcfg.chunks, rcfg.frames_per_chunk, rcfg.r, rcfg.K, rcfg.m, rcfg.identity_seed)
        reps = []
        for scene in scenes:
            chunks, _ = rollout(fields[objective], scene, local_codec, cfg, scfg)
            reps.append(drift_report(chunks, scene))
        return name, reps

    items = list(presets.items())
    if parallel:
        with ThreadPoolExecutor(max_workers=len(items)) as pool:
            results = dict(pool.map(run, items))
    else:
        results = dict(map(run, items))
    return AblationTable({name: results[name] for name, _ in items}, presets)
