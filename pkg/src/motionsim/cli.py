"""Batch command-line front end.

Subcommands: corrupt, dataset, score, analyze, train-toy, predict.
Exit codes: 0 success, 1 usage or I/O error, 2 algorithmic failure
(sampler exhaustion, divergent training). Every run writes a JSON
manifest next to its outputs recording the resolved configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from motionsim import __version__
from motionsim.augment import AugmentPolicy, apply_training_pipeline, elastic_deform
from motionsim.kspace import KSpaceConfig, simulate_motion
from motionsim.rigid import MetricConfig, MotionTrajectory, trajectory_score
from motionsim.sampler import SamplerConfig, SamplerExhaustedError, sample_target, sample_trajectory
from motionsim.softlabel import BinGrid
from motionsim.stats import analyze_dataset
from motionsim.volume import NiftiFormatError, Volume3D, minmax_scale, read_nifti, write_nifti
from motionsim.net import (
    LabeledDataset,
    MotionNet,
    TrainConfig,
    TrainingDivergedError,
    load_checkpoint,
    predict,
    save_checkpoint,
    toy_config,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ALGORITHM = 2


def _write_manifest(out_dir, command, config, items=None):
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "items": items or [],
    }
    path = Path(out_dir) / f"manifest_{command}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2))


def _metric_for(volume: Volume3D, radius: float) -> MetricConfig:
    return MetricConfig(center=tuple(volume.center_world()), brain_radius=radius)


def cmd_corrupt(args) -> int:
    cfg = SamplerConfig(tolerance=args.tolerance, n_events=args.n_events)
    if not cfg.motion_low <= args.target_score <= cfg.motion_high:
        print(
            f"error: target score {args.target_score} outside range "
            f"[{cfg.motion_low}, {cfg.motion_high}]",
            file=sys.stderr,
        )
        return EXIT_USAGE
    try:
        vol = read_nifti(args.input)
    except (OSError, NiftiFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    rng = np.random.default_rng(args.seed)
    metric = _metric_for(vol, args.radius)
    try:
        traj, achieved = sample_trajectory(args.target_score, cfg, rng, metric)
    except SamplerExhaustedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALGORITHM
    corrupted = simulate_motion(vol, traj, KSpaceConfig(args.phase_axis))
    try:
        write_nifti(corrupted, args.output)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.save_trajectory:
        Path(args.save_trajectory).write_text(traj.to_json())
    _write_manifest(
        Path(args.output).parent,
        "corrupt",
        {
            "input": str(args.input),
            "output": str(args.output),
            "target_score": args.target_score,
            "seed": args.seed,
            "n_events": args.n_events,
            "tolerance": args.tolerance,
            "phase_axis": args.phase_axis,
            "radius": args.radius,
        },
    )
    print(f"achieved_score={achieved:.6f}")
    return EXIT_OK


def cmd_dataset(args) -> int:
    in_dir = Path(args.input_dir)
    inputs = sorted(p for p in in_dir.glob("*.nii*") if p.is_file())
    if not inputs:
        print(f"error: no NIfTI files in {in_dir}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = SamplerConfig(tolerance=args.tolerance, n_events=args.n_events)
    policy = AugmentPolicy()

    rows = []
    failures = 0
    n_total = len(inputs) * args.per_volume
    split_rng = np.random.default_rng(args.seed)
    perm = split_rng.permutation(n_total)
    split_names = np.empty(n_total, dtype=object)
    n_train = int(round(0.6 * n_total))
    n_val = int(round(0.2 * n_total))
    split_names[perm[:n_train]] = "train"
    split_names[perm[n_train : n_train + n_val]] = "val"
    split_names[perm[n_train + n_val :]] = "test"

    for vol_idx, src in enumerate(inputs):
        try:
            base = read_nifti(src)
        except (OSError, NiftiFormatError) as exc:
            print(f"error reading {src}: {exc}", file=sys.stderr)
            failures += args.per_volume
            continue
        for k in range(args.per_volume):
            item = vol_idx * args.per_volume + k
            # independent stream per output volume: reproducible under any worker split
            rng = np.random.default_rng([args.seed, item])
            target = sample_target(rng, cfg)
            anat = base
            if args.anatomy_augment:
                rng_flip = rng.uniform() < 0.5
                anat = elastic_deform(base, policy, rng)
                if rng_flip:
                    anat = anat.with_data(anat.data[::-1].copy())
            metric = _metric_for(anat, args.radius)
            out_path = out_dir / f"{src.name.split('.')[0]}_motion{k:04d}.nii.gz"
            try:
                traj, achieved = sample_trajectory(target, cfg, rng, metric)
                corrupted = simulate_motion(anat, traj, KSpaceConfig(args.phase_axis))
                write_nifti(corrupted, out_path)
                rows.append(
                    {
                        "source_path": str(src),
                        "output_path": str(out_path),
                        "target_score": f"{target:.6f}",
                        "achieved_score": f"{achieved:.6f}",
                        "n_events": len(traj),
                        "seed": f"{args.seed}:{item}",
                        "split": split_names[item],
                    }
                )
            except (SamplerExhaustedError, OSError) as exc:
                print(f"error generating {out_path}: {exc}", file=sys.stderr)
                failures += 1

    manifest_csv = out_dir / "manifest.csv"
    with open(manifest_csv, "w", newline="") as f:
        writer = csv.DictWriter(
            f,
            fieldnames=[
                "source_path",
                "output_path",
                "target_score",
                "achieved_score",
                "n_events",
                "seed",
                "split",
            ],
        )
        writer.writeheader()
        writer.writerows(rows)
    _write_manifest(
        out_dir,
        "dataset",
        {
            "input_dir": str(in_dir),
            "output_dir": str(out_dir),
            "per_volume": args.per_volume,
            "seed": args.seed,
            "n_events": args.n_events,
            "tolerance": args.tolerance,
            "phase_axis": args.phase_axis,
            "radius": args.radius,
            "anatomy_augment": args.anatomy_augment,
        },
    )
    print(f"wrote {len(rows)} volumes, {failures} failures, manifest at {manifest_csv}")
    return EXIT_OK if failures == 0 else EXIT_ALGORITHM


def cmd_score(args) -> int:
    try:
        traj = MotionTrajectory.from_json(Path(args.trajectory).read_text())
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: invalid trajectory file: {exc}", file=sys.stderr)
        return EXIT_USAGE
    metric = MetricConfig(brain_radius=args.radius)
    print(f"{trajectory_score(traj, metric):.6f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    import pandas as pd

    try:
        table = pd.read_csv(args.table)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        report = analyze_dataset(table, thickness_columns=args.columns or None)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.output:
        report.to_csv(args.output, index=False)
        _write_manifest(
            Path(args.output).parent,
            "analyze",
            {"table": str(args.table), "output": str(args.output), "columns": args.columns},
        )
    with_fmt = report.copy()
    with_fmt["motion_coef"] = with_fmt["motion_coef"].map("{:+.4f}".format)
    with_fmt["p_raw"] = with_fmt["p_raw"].map("{:.3e}".format)
    with_fmt["p_fdr"] = with_fmt["p_fdr"].map("{:.3e}".format)
    print(with_fmt[["structure", "motion_coef", "p_raw", "p_fdr", "significant"]].to_string(index=False))
    print(f"percent significant structures: {report.attrs['percent_significant']:.2f}%")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    try:
        cfg_doc = json.loads(Path(args.config).read_text())
    except (OSError, ValueError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    n_volumes = int(cfg_doc.get("n_volumes", 200))
    dim = int(cfg_doc.get("input_dim", 32))
    seed = int(cfg_doc.get("seed", 0))
    train_cfg = TrainConfig(
        learning_rate=float(cfg_doc.get("learning_rate", 1e-3)),
        weight_decay=float(cfg_doc.get("weight_decay", 0.1)),
        batch_size=int(cfg_doc.get("batch_size", 8)),
        total_steps=int(cfg_doc.get("total_steps", 2000)),
        eval_interval=int(cfg_doc.get("eval_interval", 200)),
        seed=seed,
    )
    from motionsim.phantom import make_toy_dataset

    dataset = make_toy_dataset(n_volumes, dim, seed=seed)
    net_cfg = toy_config(input_dim=dim, dropout=float(cfg_doc.get("dropout", 0.1)))
    try:
        best_state, history = train(net_cfg, train_cfg, dataset, split_seed=seed)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALGORITHM
    net = MotionNet(net_cfg)
    net.load_state_dict(best_state)
    ckpt = out_dir / "checkpoint.npz"
    save_checkpoint(ckpt, net)
    with open(out_dir / "history.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["step", "loss", "val_js", "val_r2", "val_rmse"])
        writer.writeheader()
        writer.writerows(history)
    _write_manifest(out_dir, "train_toy", {"config": cfg_doc, "checkpoint": str(ckpt)})
    print(f"checkpoint written to {ckpt}")
    return EXIT_OK


def cmd_predict(args) -> int:
    try:
        net = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot load checkpoint: {exc}", file=sys.stderr)
        return EXIT_USAGE
    grid = BinGrid()
    for path in args.inputs:
        try:
            vol = minmax_scale(read_nifti(path))
        except (OSError, NiftiFormatError) as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            return EXIT_USAGE
        score = predict(net, vol, grid)
        print(f"{path},{score:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motionsim", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corrupt", help="corrupt one volume with a target motion score")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--target-score", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-events", type=int, default=2)
    p.add_argument("--tolerance", type=float, default=0.02)
    p.add_argument("--phase-axis", type=int, default=1, choices=(0, 1, 2))
    p.add_argument("--radius", type=float, default=80.0)
    p.add_argument("--save-trajectory", default=None)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("dataset", help="generate a corrupted dataset with manifest")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--per-volume", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=int(os.environ.get("MOTIONSIM_WORKERS", "1")))
    p.add_argument("--n-events", type=int, default=2)
    p.add_argument("--tolerance", type=float, default=0.02)
    p.add_argument("--phase-axis", type=int, default=1, choices=(0, 1, 2))
    p.add_argument("--radius", type=float, default=80.0)
    p.add_argument("--anatomy-augment", action="store_true")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("score", help="evaluate the RMS deviation of a trajectory JSON")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--radius", type=float, default=80.0)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("analyze", help="per-structure GLM sweep with FDR correction")
    p.add_argument("--table", required=True)
    p.add_argument("--columns", nargs="*", default=None)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train-toy", help="train the toy network on synthetic phantoms")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("predict", help="predict motion scores for volumes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", dest="inputs", nargs="+", required=True)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
