"""Command-line entry point: ``driftlab {check,roundtrip-bench,train,rollout,ablate}``.

Exit codes: 0 ok, 2 configuration error, 3 numeric error, 4 failed check.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .checks import run_checks
from .codec import LossyCodec
from .config import ExperimentConfig
from .exceptions import ConfigError, DimensionError, NumericError
from .metrics import drift_report, write_report_csv, write_summary_json
from .sampler import rollout
from .trainer import train, write_loss_csv
from .vector_field import load_checkpoint, save_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4

log = logging.getLogger("driftlab")


def _write_csv(path, header, rows, stamp):
    buf = io.StringIO()
    for line in stamp.splitlines():
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def _load_config(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.default()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _progress(every=100):
    def report(it, stage, loss):
        if it % every == 0:
            log.info("iteration %d stage %d loss %.5f", it, stage, loss)
    return report


def cmd_check(args):
    results = run_checks()
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_CHECK
    return EXIT_OK


def cmd_roundtrip_bench(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    b = cfg["bench"]
    frame = ex.make_scenes(cfg, "heldout", n=1)[0].frames()[0]
    params = cfg.codec_params()
    header, columns = ["k"], []
    for gamma in b["gammas"]:
        for sigma in b["sigmas"]:
            c = LossyCodec(dim=params["dim"], gamma=gamma, noise_sigma=sigma, seed=params["seed"]).fit()
            header.append(f"error_gamma{gamma}_sigma{sigma}")
            columns.append(c.roundtrip_error_curve(frame, b["n"]))
        ref = LossyCodec(dim=params["dim"], gamma=gamma, noise_sigma=0.0, seed=params["seed"]).fit()
        header.append(f"closed_form_gamma{gamma}")
        columns.append(ref.closed_form_error_curve(frame, b["n"]))
    rows = [[k + 1] + [repr(float(col[k])) for col in columns] for k in range(b["n"])]
    path = out / "roundtrip.csv"
    _write_csv(path, header, rows, cfg.stamp())
    print(f"wrote {path} ({len(rows)} rows)")
    return EXIT_OK


def cmd_train(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    codec = ex.make_codec(cfg)
    field = ex.make_field(cfg)
    result = train(field, ex.make_scenes(cfg), codec, cfg.train_config(), progress=_progress())
    meta = {"config_hash": cfg.hash, "seed": cfg["seed"], "module_seeds": cfg.seeds(),
            "objective": cfg["train"]["objective"]}
    save_checkpoint(field, out / "field.ckpt", meta=meta)
    write_loss_csv(result, out / "loss.csv", header_comment=cfg.stamp())
    cfg.save(out / "config.yaml")
    for stage, rep in result.stability.items():
        print(f"{stage}: first-decile {rep['first_decile']:.5f} last-decile {rep['last_decile']:.5f} "
              f"stable={rep['stable']}")
    print(f"wrote {out / 'field.ckpt'} and {out / 'loss.csv'}")
    return EXIT_OK


def _checkpoint_for(cfg, path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint {path} not found; run 'driftlab train' first")
    field, header = load_checkpoint(path)
    if (header["latent_dim"], header["pose_dim"]) != (cfg["world"]["d"], cfg["world"]["p"]):
        raise ConfigError(f"checkpoint dims (d={header['latent_dim']}, p={header['pose_dim']}) "
                          f"do not match config (d={cfg['world']['d']}, p={cfg['world']['p']})")
    return field


def cmd_rollout(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    field = _checkpoint_for(cfg, args.checkpoint or out / "field.ckpt")
    rcfg, scfg = cfg.rollout_config(), cfg.sampler_config()
    rows, frames, summary = [], [], {"config_hash": cfg.hash, "mode": rcfg.mode, "scenes": {}}
    for i, scene in enumerate(ex.make_scenes(cfg, "heldout")):
        codec = ex.make_codec(cfg)
        chunks, trace = rollout(field, scene, codec, rcfg, scfg)
        rep = drift_report(chunks, scene)
        rows.extend(rep.rows(f"scene{i}", rcfg.mode))
        summary["scenes"][f"scene{i}"] = {**rep.summary(), "inter_chunk_roundtrips": trace.inter_chunk_roundtrips}
        for ell, f in enumerate(np.concatenate(chunks)):
            frames.append([f"scene{i}", ell] + [repr(float(v)) for v in f])
    write_report_csv(rows, out / "drift.csv", header_comment=cfg.stamp())
    d = cfg["world"]["d"]
    _write_csv(out / "frames.csv", ["run_id", "frame"] + [f"v{j}" for j in range(d)], frames, cfg.stamp())
    write_summary_json(summary, out / "drift_summary.json")
    for name, s in summary["scenes"].items():
        print(f"{name}: background_mse slope {s['slopes']['background_mse']:.6f}")
    print(f"wrote {out / 'drift.csv'}")
    return EXIT_OK


def cmd_ablate(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    result = ex.ablation_trend(cfg, progress=_progress(), parallel=args.parallel)
    write_report_csv(result.table.rows(), out / "ablation.csv", header_comment=cfg.stamp())
    summary = {"config_hash": cfg.hash, **result.summary()}
    write_summary_json(summary, out / "ablation_summary.json")
    for name, v in result.table.summary()["mean_background_mse_slope"].items():
        print(f"{name:9s} mean background_mse slope {v:.6f}")
    print(f"full <= ablation (scenes): {result.slope_wins}; RFM probe wins: {result.probe_wins}")
    return EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "roundtrip-bench": cmd_roundtrip_bench,
    "train": cmd_train,
    "rollout": cmd_rollout,
    "ablate": cmd_ablate,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="driftlab", description="Drift experiments on a synthetic video world.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="YAML experiment config (defaults built in)")
    parser.add_argument("--out", default="runs", help="output directory")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--parallel", action="store_true", help="run ablation presets concurrently")
    parser.add_argument("--checkpoint", help="field checkpoint for rollout (default OUT/field.ckpt)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DimensionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
