"""Command-line frontend: synth, match, train-parts, learn-weights, eval.

Every command takes a single --seed, derives all sub-seeds deterministically,
and writes a manifest.json into the output directory recording the command,
its configuration, and SHA-256 digests of inputs and outputs. Reruns with
identical inputs and seed produce byte-identical outputs, digests included.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    FeatureMatrix,
    atomic_write_text,
    load_index,
    make_registry,
    read_features,
)
from .fusion import (
    FusionWeights,
    learn_weights,
    read_prob_table,
    read_weights,
    write_prob_table,
    write_weights,
)
from .matching import activations_per_instance, load_detections, match_detections
from .protocols import (
    DEFAULT_TRAIN_CFG,
    eval_ablation,
    eval_faces_split,
    eval_oneshot,
    eval_recognition,
    eval_recognition_no_fill,
    half_split_training,
    run_retrieval_protocol,
    write_report,
)
from .svm import TrainConfig, save_model
from .synth import SynthConfig, config_from_json, generate, write_synth

__all__ = ["main"]

_DEFAULT_C_GRID = tuple(2.0**k for k in range(-8, 9, 2))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(
    out_dir: Path,
    command: str,
    config: dict,
    inputs: list[Path],
    outputs: list[Path],
    seed: int,
) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in sorted(inputs)},
        "outputs": {p.relative_to(out_dir).as_posix(): _sha256(p) for p in sorted(outputs)},
        "seed": seed,
        "version": __version__,
    }
    path = out_dir / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_features_dir(features_dir: str | Path) -> dict[int, FeatureMatrix]:
    files = sorted(Path(features_dir).glob("part_*.pfv"))
    if not files:
        raise ValueError(f"no part_*.pfv files under {features_dir}")
    features = {}
    for f in files:
        fm = read_features(f)
        if fm.part_id in features:
            raise ValueError(f"duplicate part id {fm.part_id} in {features_dir}")
        features[fm.part_id] = fm
    if sorted(features) != list(range(len(features))):
        raise ValueError("feature files must cover contiguous part ids from 0")
    return features


def _registry_for(features: dict[int, FeatureMatrix], no_face: bool):
    n_parts = len(features)
    include_face = not no_face and n_parts >= 2
    return make_registry(n_parts - 1 - (1 if include_face else 0), include_face)


def _train_cfg(args) -> TrainConfig:
    return TrainConfig(C=args.svm_c, epochs=args.epochs)


def _weights_for(args, registry) -> tuple[FusionWeights, list[Path]]:
    if args.weights:
        return read_weights(args.weights), [Path(args.weights)]
    return FusionWeights(np.ones(len(registry.parts))), []


def _feature_inputs(features_dir: str | Path) -> list[Path]:
    return sorted(Path(features_dir).glob("part_*.pfv"))


def cmd_synth(args) -> int:
    out = _out_dir(args)
    cfg = config_from_json(args.config) if args.config else SynthConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    data = generate(cfg)
    outputs = write_synth(data, out)
    config = dataclasses.asdict(cfg)
    inputs = [Path(args.config)] if args.config else []
    _write_manifest(out, "synth", config, inputs, outputs, cfg.seed)
    return 0


def cmd_match(args) -> int:
    out = _out_dir(args)
    dataset = load_index(args.dataset)
    by_photo_dets = load_detections(args.detections)
    by_photo_truths: dict[int, list] = {}
    for inst in dataset.instances:
        by_photo_truths.setdefault(inst.photo_id, []).append(inst)

    lines = []
    for photo_id in sorted(by_photo_truths):
        truths = by_photo_truths[photo_id]
        dets = by_photo_dets.get(photo_id, [])
        assignment = match_detections(truths, dets, args.tau_iou, args.lambda_score)
        table = activations_per_instance(assignment, truths, dets)
        for iid in sorted(table):
            for part_id, patch, act in table[iid]:
                lines.append(
                    "\t".join(
                        [
                            str(iid),
                            str(part_id),
                            repr(float(patch.x)),
                            repr(float(patch.y)),
                            repr(float(patch.w)),
                            repr(float(patch.h)),
                            repr(float(act)),
                        ]
                    )
                )
    act_path = out / "activations.tsv"
    atomic_write_text(act_path, "\n".join(lines) + ("\n" if lines else ""))

    config = {
        "dataset": args.dataset,
        "detections": args.detections,
        "tau_iou": args.tau_iou,
        "lambda_score": args.lambda_score,
    }
    _write_manifest(
        out, "match", config, [Path(args.dataset), Path(args.detections)], [act_path], args.seed
    )
    return 0


def cmd_train_parts(args) -> int:
    out = _out_dir(args)
    dataset = load_index(args.dataset)
    features = _load_features_dir(args.features)
    registry = _registry_for(features, args.no_face)
    art = half_split_training(
        dataset, features, registry, args.split, args.seed, _train_cfg(args)
    )

    outputs: list[Path] = []
    tables_dir = out / "tables"
    tables_dir.mkdir(exist_ok=True)
    for pid, table in sorted(art.tables.items()):
        p = tables_dir / f"part_{pid:03d}.ppt"
        write_prob_table(p, table)
        outputs.append(p)
    for half, models in sorted(art.models.items()):
        mdir = out / "models" / f"half{half}"
        mdir.mkdir(parents=True, exist_ok=True)
        for pid, model in sorted(models.items()):
            if model is None:
                continue
            p = mdir / f"part_{pid:03d}.plm"
            save_model(p, model)
            outputs.append(p)

    labels_path = out / "labels.tsv"
    atomic_write_text(
        labels_path,
        "".join(f"{iid}\t{lab}\n" for iid, lab in sorted(art.labels_of.items())),
    )
    outputs.append(labels_path)
    halves_path = out / "halves.tsv"
    atomic_write_text(
        halves_path,
        "".join(f"{iid}\t{h}\n" for iid, h in sorted(art.halves.items())),
    )
    outputs.append(halves_path)

    config = {
        "dataset": args.dataset,
        "features": args.features,
        "split": args.split,
        "svm_c": args.svm_c,
        "epochs": args.epochs,
        "no_face": args.no_face,
        "n_identities": art.n_identities,
        "excluded_identities": art.excluded_identities,
        "excluded_instances": art.excluded_instances,
    }
    inputs = [Path(args.dataset)] + _feature_inputs(args.features)
    _write_manifest(out, "train-parts", config, inputs, outputs, args.seed)
    return 0


def cmd_learn_weights(args) -> int:
    out = _out_dir(args)
    tables_dir = Path(args.tables)
    table_files = sorted((tables_dir / "tables").glob("part_*.ppt"))
    if not table_files:
        raise ValueError(f"no tables/part_*.ppt under {tables_dir}")
    tables = {}
    for f in table_files:
        t = read_prob_table(f)
        tables[t.part_id] = t
    labels_of = {
        int(a): int(b)
        for a, b in (
            line.split("\t")
            for line in (tables_dir / "labels.tsv").read_text(encoding="utf-8").splitlines()
            if line
        )
    }
    halves = {
        int(a): int(b)
        for a, b in (
            line.split("\t")
            for line in (tables_dir / "halves.tsv").read_text(encoding="utf-8").splitlines()
            if line
        )
    }
    C_grid = tuple(float(c) for c in args.c_grid.split(",")) if args.c_grid else _DEFAULT_C_GRID
    fw, info = learn_weights(
        tables, labels_of, halves, C_grid=C_grid, seed=args.seed, clamp_nonnegative=args.clamp
    )

    weights_path = out / "weights.tsv"
    write_weights(weights_path, fw)
    grid_path = out / "gridsearch.csv"
    atomic_write_text(
        grid_path,
        "C,balanced_accuracy\n"
        + "".join(f"{c!r},{acc!r}\n" for c, acc in info.grid_scores),
    )

    config = {
        "tables": args.tables,
        "c_grid": [float(c) for c in C_grid],
        "clamp": args.clamp,
        "best_C": info.best_C,
        "n_pairs": info.n_pairs,
    }
    inputs = table_files + [tables_dir / "labels.tsv", tables_dir / "halves.tsv"]
    _write_manifest(out, "learn-weights", config, inputs, [weights_path, grid_path], args.seed)
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    dataset = load_index(args.dataset)
    features = _load_features_dir(args.features)
    registry = _registry_for(features, args.no_face)
    fw, weight_inputs = _weights_for(args, registry)
    cfg = _train_cfg(args)
    mask = args.mask if args.mask and args.mask != "all" else None

    outputs: list[Path] = []
    if args.protocol == "recognition":
        report = eval_recognition(dataset, features, registry, fw, args.split, args.seed, mask, cfg)
        write_report(report, out / "report.txt")
        outputs.append(out / "report.txt")
    elif args.protocol == "recognition-no-fill":
        report = eval_recognition_no_fill(
            dataset, features, registry, fw, args.split, args.seed, mask, cfg
        )
        write_report(report, out / "report.txt")
        outputs.append(out / "report.txt")
    elif args.protocol == "oneshot":
        shots = tuple(int(s) for s in args.shots.split(","))
        report = eval_oneshot(
            dataset, features, registry, fw, args.split, shots, args.repeats, args.seed, mask, cfg
        )
        write_report(report, out / "report.txt", out / "curve.csv")
        outputs += [out / "report.txt", out / "curve.csv"]
    elif args.protocol == "retrieval":
        K_list = tuple(int(k) for k in args.k_list.split(","))
        report = run_retrieval_protocol(
            dataset, features, registry, fw, args.val_split, args.split, args.seed, K_list, mask, cfg
        )
        write_report(report, out / "report.txt", out / "curve.csv")
        outputs += [out / "report.txt", out / "curve.csv"]
    elif args.protocol == "ablation":
        uniform = FusionWeights(np.ones(len(registry.parts)))
        reports = eval_ablation(
            dataset, features, registry, uniform, split=args.split, seed=args.seed, train_cfg=cfg
        )
        summary = []
        for mask_name, report in reports.items():
            p = out / f"report_{mask_name}.txt"
            write_report(report, p)
            outputs.append(p)
            summary.append(f"{mask_name}\t{report.accuracy!r}")
        summary_path = out / "summary.tsv"
        atomic_write_text(summary_path, "\n".join(summary) + "\n")
        outputs.append(summary_path)
    elif args.protocol == "faces-split":
        face_report, nonface_report = eval_faces_split(
            dataset, features, registry, fw, args.split, args.seed, mask, cfg
        )
        write_report(face_report, out / "report_faces.txt")
        write_report(nonface_report, out / "report_nonfaces.txt")
        outputs += [out / "report_faces.txt", out / "report_nonfaces.txt"]
    else:
        raise ValueError(f"unknown protocol {args.protocol!r}")

    config = {
        "protocol": args.protocol,
        "dataset": args.dataset,
        "features": args.features,
        "weights": args.weights,
        "split": args.split,
        "val_split": args.val_split,
        "mask": args.mask,
        "shots": args.shots,
        "repeats": args.repeats,
        "k_list": args.k_list,
        "svm_c": args.svm_c,
        "epochs": args.epochs,
        "no_face": args.no_face,
    }
    if args.protocol == "ablation":
        weight_inputs = []
    inputs = [Path(args.dataset)] + _feature_inputs(args.features) + weight_inputs
    _write_manifest(out, "eval", config, inputs, outputs, args.seed)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="partfusion",
        description="Pose-invariant identity recognition by part-classifier fusion.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    p.add_argument("--config", default=None, help="JSON config; defaults when omitted")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("match", help="assign detections to ground-truth instances")
    p.add_argument("--dataset", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--tau-iou", type=float, default=0.3)
    p.add_argument("--lambda-score", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("train-parts", help="train per-part SVMs on half splits")
    p.add_argument("--dataset", required=True)
    p.add_argument("--features", required=True, help="directory of part_*.pfv files")
    p.add_argument("--split", default="val")
    p.add_argument("--svm-c", type=float, default=DEFAULT_TRAIN_CFG.C)
    p.add_argument("--epochs", type=int, default=DEFAULT_TRAIN_CFG.epochs)
    p.add_argument("--no-face", action="store_true", help="treat the last part as a poselet")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_parts)

    p = sub.add_parser("learn-weights", help="learn fusion weights from tables")
    p.add_argument("--tables", required=True, help="train-parts output directory")
    p.add_argument("--c-grid", default=None, help="comma-separated C values")
    p.add_argument("--clamp", action="store_true", help="clamp weights at zero")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn_weights)

    p = sub.add_parser("eval", help="run an evaluation protocol")
    p.add_argument(
        "--protocol",
        required=True,
        choices=[
            "recognition",
            "recognition-no-fill",
            "oneshot",
            "retrieval",
            "ablation",
            "faces-split",
        ],
    )
    p.add_argument("--dataset", required=True)
    p.add_argument("--features", required=True)
    p.add_argument(
        "--weights",
        default=None,
        help="weights file; uniform when omitted; ablation always fuses uniformly",
    )
    p.add_argument("--split", default="test")
    p.add_argument("--val-split", default="val", help="reference split for retrieval")
    p.add_argument("--mask", default="all", help="component mask, e.g. global,face")
    p.add_argument("--shots", default="1,2,3")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--k-list", default="1,2,5,10,20")
    p.add_argument("--svm-c", type=float, default=DEFAULT_TRAIN_CFG.C)
    p.add_argument("--epochs", type=int, default=DEFAULT_TRAIN_CFG.epochs)
    p.add_argument("--no-face", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
