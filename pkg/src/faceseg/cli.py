"""Command-line interface for the whole pipeline.

Subcommands: gen, rgs, train, predict, lift, round, segment, eval, export.
Every stage reads and writes files, so stages can be run and inspected
independently. Exit codes: 0 ok, 1 pipeline error, 2 usage/IO error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import datagen, evaluation, matchlift, patching, predictor, rgs
from .geometry import OUTLIER, Clustering, PointCloud, normalize
from .pipeline import PipelineConfig, segment_cloud
from .ply import PlyError, read_ply, write_ply
from .rounding import clusters_to_points, round_clusters


class UsageError(Exception):
    """IO or argument problem; maps to exit code 2."""


# Distinct colors cycled by cluster id; outliers are black.
_PALETTE = [
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
    (128, 128, 0), (255, 215, 180), (0, 0, 128), (128, 128, 128),
]


def cluster_colors(labels: np.ndarray) -> np.ndarray:
    """(P, 3) uint8 RGB per label; OUTLIER (-1) is black."""
    labels = np.asarray(labels, dtype=np.int64)
    palette = np.asarray(_PALETTE, dtype=np.uint8)
    colors = palette[labels % len(palette)]
    colors[labels == OUTLIER] = 0
    return colors


def _require_file(path, what: str):
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _load_cloud(path) -> PointCloud:
    _require_file(path, "input cloud")
    try:
        return read_ply(path)
    except PlyError as exc:
        raise UsageError(str(exc)) from exc


def _load_config(args) -> PipelineConfig:
    overrides = {
        key: getattr(args, key, None)
        for key in PipelineConfig.__dataclass_fields__
        if hasattr(args, key)
    }
    if getattr(args, "config", None):
        _require_file(args.config, "config file")
        return PipelineConfig.from_file(args.config, **overrides)
    return PipelineConfig().replace(**overrides)


def _specs_by_name(names) -> list[datagen.PolyhedronSpec]:
    specs = []
    for name in names:
        if name not in datagen.BUILTIN_SPECS:
            raise UsageError(
                f"unknown polyhedron '{name}'; built-ins: {sorted(datagen.BUILTIN_SPECS)}"
            )
        specs.append(datagen.BUILTIN_SPECS[name])
    return specs


def cmd_gen(args) -> int:
    config = datagen.GeneratorConfig(
        num_points_range=(args.min_points, args.max_points),
        noise_sigma=args.sigma,
        rng_seed=args.seed,
    )
    trainval = _specs_by_name(args.trainval_specs.split(","))
    test = _specs_by_name(args.test_specs.split(","))
    bundle = datagen.generate_dataset(trainval, test, config, (args.train, args.val, args.test))
    os.makedirs(args.out, exist_ok=True)
    datagen.write_dataset(bundle, args.out, config)
    print(f"wrote {args.train}+{args.val}+{args.test} clouds to {args.out}")
    return 0


def cmd_rgs(args) -> int:
    cloud = normalize(_load_cloud(args.input))
    params = rgs.RgsParams(
        k=args.k,
        alpha_th=math.radians(args.alpha_deg),
        gamma_th=args.gamma,
        min_cluster_size=args.min_cluster,
    )
    clustering = rgs.rgs_segment(cloud, params)
    write_ply(PointCloud(cloud.points, clustering.assignments, cloud.name), args.out)
    print(
        f"{clustering.num_clusters} clusters, "
        f"{clustering.num_outliers()} outliers -> {args.out}"
    )
    return 0


def _patch_sets_from_dir(directory, config: PipelineConfig, seed_offset: int = 0):
    if not os.path.isdir(directory):
        raise UsageError(f"dataset directory not found: {directory}")
    names = sorted(f for f in os.listdir(directory) if f.endswith(".ply"))
    if not names:
        raise UsageError(f"no .ply files in {directory}")
    sets = []
    for i, name in enumerate(names):
        cloud = normalize(_load_cloud(os.path.join(directory, name)))
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, seed_offset + i]))
        k = max(1, int(round(len(cloud) / config.knn_divisor)))
        sets.append(patching.build_patch_set(cloud, k, config.patch_cube, rng))
    return sets


def cmd_train(args) -> int:
    config = _load_config(args)
    train_sets = _patch_sets_from_dir(os.path.join(args.data, "train"), config)
    val_dir = os.path.join(args.data, "val")
    val_sets = _patch_sets_from_dir(val_dir, config, seed_offset=10_000) if os.path.isdir(val_dir) else None
    model = predictor.MlpModel(
        patching.FEATURE_DIM, config.hidden, config.blocks, np.random.default_rng(config.seed)
    )
    train_config = predictor.TrainConfig(
        lr=config.lr,
        epochs=config.epochs,
        class_weight_ratio=config.class_weight_ratio,
        rounds=config.rounds,
        rng_seed=config.seed,
    )
    model, metrics = predictor.train(model, train_sets, train_config, val_sets)
    predictor.save_model(model, args.out)
    for entry in metrics:
        line = f"epoch {entry['epoch']:3d}  loss {entry['train_loss']:.4f}"
        if "val_accuracy" in entry:
            line += f"  val acc {entry['val_accuracy']:.4f}"
        print(line)
    print(f"model -> {args.out}")
    return 0


def cmd_predict(args) -> int:
    config = _load_config(args)
    model = predictor.load_model(_require_file(args.model, "model file"))
    cloud = normalize(_load_cloud(args.input))
    rng = np.random.default_rng(config.seed)
    k = max(1, int(round(len(cloud) / config.knn_divisor)))
    patch_set = patching.build_patch_set(cloud, k, config.patch_cube, rng)
    matrix = predictor.predict_matrix(model, patch_set)
    if args.out.endswith(".csv"):
        matchlift.write_matrix_csv(matrix, args.out)
    else:
        matchlift.write_matrix(matrix, args.out)
    if args.patches:
        patching.save_patches_json(patch_set, args.patches)
    print(f"{matrix.n}x{matrix.n} matrix -> {args.out}")
    return 0


def cmd_lift(args) -> int:
    matrix = matchlift.read_matrix(_require_file(args.input, "matrix file"))
    if args.hard:
        matrix = matchlift.harden(matrix)
    m = matchlift.estimate_m(matrix) if args.estimate_m else args.m
    params = matchlift.SolverParams(tol=args.tol, max_iter=args.max_iter)
    solution = matchlift.solve_matchlift(matrix, m, params)
    lifted = matchlift.PairMatrix(np.clip(solution.x, 0.0, 1.0), matchlift.SOFT)
    matchlift.write_matrix(lifted, args.out)
    status = "converged" if solution.converged else "NOT converged"
    print(
        f"m={m} iterations={solution.iterations} ({status}), "
        f"objective={solution.objective:.6f} -> {args.out}"
    )
    return 0 if solution.converged else 1


def cmd_round(args) -> int:
    matrix = matchlift.read_matrix(_require_file(args.input, "matrix file"))
    payload = patching.load_patches_json(_require_file(args.patches, "patch sidecar"))
    cloud = _load_cloud(args.cloud)
    patch_clustering = round_clusters(matrix.values, args.m)
    point_clustering = clusters_to_points(
        patch_clustering, [p["point_indices"] for p in payload["patches"]]
    )
    write_ply(PointCloud(cloud.points, point_clustering.assignments, cloud.name), args.out)
    print(f"{patch_clustering.num_clusters} clusters -> {args.out}")
    return 0


def cmd_segment(args) -> int:
    config = _load_config(args)
    model = None
    if not args.analytic:
        if not args.model:
            raise UsageError("either --model PATH or --analytic is required")
        model = predictor.load_model(_require_file(args.model, "model file"))
    cloud = _load_cloud(args.input)
    result = segment_cloud(cloud, config, model)
    base, _ = os.path.splitext(args.out)
    write_ply(
        PointCloud(normalize(cloud).points, result.point_clustering.assignments, cloud.name),
        args.out,
    )
    matchlift.write_matrix(result.soft, base + ".soft.mat")
    if result.solution is not None:
        lifted = matchlift.PairMatrix(np.clip(result.solution.x, 0.0, 1.0), matchlift.SOFT)
        matchlift.write_matrix(lifted, base + ".lifted.mat")
    with open(base + ".report.json", "w", encoding="utf-8") as handle:
        json.dump(result.report(config), handle, indent=2, sort_keys=True)
        handle.write("\n")
    print(
        f"{result.patch_clustering.num_clusters} clusters over "
        f"{len(result.patch_set)} patches -> {args.out}"
    )
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args)
    model = None
    if args.model:
        model = predictor.load_model(_require_file(args.model, "model file"))
    directory = args.data
    if not os.path.isdir(directory):
        raise UsageError(f"dataset directory not found: {directory}")
    names = sorted(f for f in os.listdir(directory) if f.endswith(".ply"))
    if not names:
        raise UsageError(f"no .ply files in {directory}")
    clouds = [_load_cloud(os.path.join(directory, n)) for n in names]
    spec = evaluation.ExperimentSpec(
        clouds=clouds,
        dataset_label=args.label or os.path.basename(os.path.normpath(directory)),
        m_fixed=config.m,
        knn_divisor=config.knn_divisor,
        patch_cube=config.patch_cube,
        seed=config.seed,
        model=model,
        solver=config.solver_params(),
    )
    results = evaluation.run_experiment(spec)
    print(evaluation.render_table([results]))
    if args.out:
        evaluation.save_results(results, args.out)
        print(f"results -> {args.out}")
    return 0


def cmd_export(args) -> int:
    cloud = _load_cloud(args.input)
    if cloud.labels is None:
        raise UsageError(f"{args.input}: no face labels to color")
    write_ply(cloud, args.out, colors=cluster_colors(cloud.labels))
    print(f"colored cloud -> {args.out}")
    return 0


def _add_config_flags(sub):
    sub.add_argument("--config", help="JSON pipeline config; flags override")
    sub.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faceseg", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen", help="generate a labeled polyhedra dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=500)
    p.add_argument("--val", type=int, default=50)
    p.add_argument("--test", type=int, default=50)
    p.add_argument("--min-points", type=int, default=5000)
    p.add_argument("--max-points", type=int, default=50000)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trainval-specs", default=",".join(datagen.TRAINVAL_SPEC_NAMES))
    p.add_argument("--test-specs", default=",".join(datagen.TEST_SPEC_NAMES))
    p.set_defaults(func=cmd_gen)

    p = subs.add_parser("rgs", help="region-growing-segmentation baseline")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--alpha-deg", type=float, default=3.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--min-cluster", type=int, default=None)
    p.set_defaults(func=cmd_rgs)

    p = subs.add_parser("train", help="train the pairwise predictor")
    p.add_argument("--data", required=True, help="dataset dir with train/ (and val/)")
    p.add_argument("--out", required=True, help="output model path")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("predict", help="pairwise matrix for one cloud")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help=".mat (binary) or .csv")
    p.add_argument("--patches", help="optional patch sidecar JSON output")
    _add_config_flags(p)
    p.set_defaults(func=cmd_predict)

    p = subs.add_parser("lift", help="solve the consistency relaxation")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--m", type=int, default=14)
    p.add_argument("--estimate-m", action="store_true")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=5000)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--soft", action="store_true", default=True)
    group.add_argument("--hard", action="store_true", default=False)
    p.set_defaults(func=cmd_lift)

    p = subs.add_parser("round", help="round a matrix into a labeled cloud")
    p.add_argument("--input", required=True, help="matrix file")
    p.add_argument("--patches", required=True, help="patch sidecar JSON")
    p.add_argument("--cloud", required=True, help="the cloud the patches index")
    p.add_argument("--m", type=int, default=14)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_round)

    p = subs.add_parser("segment", help="full pipeline on one cloud")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="trained model path")
    p.add_argument("--analytic", action="store_true", help="use the analytic predictor")
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--use-hard", action="store_true", default=None)
    p.add_argument("--skip-lift", action="store_true", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_segment)

    p = subs.add_parser("eval", help="variant accuracy table over a dataset dir")
    p.add_argument("--data", required=True)
    p.add_argument("--model", help="trained model (default: analytic predictor)")
    p.add_argument("--label", help="column label for the table")
    p.add_argument("--out", help="JSON results path")
    p.add_argument("--m", type=int, default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("export", help="colorize a labeled cloud for viewing")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pipeline-stage failures
        print(f"error in {args.command}: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
