"""Command line entry points.

Subcommands: synth (write a benchmark dataset), train (run a configured
training job), report (diagnostics from a checkpoint), ablate (hard vs soft
boundary comparison).  Training and ablation read one JSON config document;
command line flags shadow values from the file.  Exit codes: 0 success,
2 configuration error, 3 numeric abort, 4 I/O or file format error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .ansatz import load_checkpoint
from .errors import ConfigError, ContractError, FileFormatError, NumericAbort
from .losses import TrainingData
from .report import (
    cross_sections,
    det_histogram,
    loss_table,
    warp_image,
    write_histogram_csv,
    write_point_cloud_csv,
    write_summary_json,
)
from .synth import (
    appendix_dataset,
    read_landmarks,
    rotated_sphere,
    translating_disk,
    twisted_pairs,
    write_landmarks,
)
from .trainer import TrainConfig, ablate_boundary, read_history_csv, train
from .volume import read_volume, write_volume

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

DATA_KEYS = ("landmarks", "source_image", "target_image")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cubemorph",
        description="Mesh-free diffeomorphic mapping of the unit cube.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="write a synthetic benchmark dataset")
    p_synth.add_argument(
        "task", choices=["twisted", "sphere", "disk", "appendix"],
        help="which benchmark to generate",
    )
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--n", type=int, default=None, help="landmark count (sphere/disk)")
    p_synth.add_argument(
        "--image-dims", type=int, default=64, help="cubic image resolution (appendix)"
    )
    p_synth.add_argument(
        "--grid-n", type=int, default=8, help="landmark lattice per axis (appendix)"
    )

    p_train = sub.add_parser("train", help="train a map from a JSON config")
    p_train.add_argument("config", help="path to the JSON config document")
    _add_run_flags(p_train)

    p_report = sub.add_parser("report", help="diagnostics from a checkpoint")
    p_report.add_argument("checkpoint", help="checkpoint file")
    p_report.add_argument("--out", required=True, help="output directory")
    p_report.add_argument("--seed", type=int, default=0)
    p_report.add_argument("--hist-samples", type=int, default=100000)
    p_report.add_argument("--bins", type=int, default=100)
    p_report.add_argument(
        "--slices",
        default=None,
        help="comma-separated plane specs like x=0.2,z=0.5",
    )
    p_report.add_argument("--slice-grid", type=int, default=40)
    p_report.add_argument("--warp-source", default=None, help="source image to resample")
    p_report.add_argument("--warp-dims", type=int, default=None)
    p_report.add_argument("--history", default=None, help="history.csv for the loss table")

    p_ablate = sub.add_parser("ablate", help="hard vs soft boundary comparison")
    p_ablate.add_argument("config", help="path to the JSON config document")
    p_ablate.add_argument(
        "--soft-weights", default="50,500",
        help="comma-separated soft boundary weights",
    )
    _add_run_flags(p_ablate)
    return parser


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument(
        "--formulation", choices=["landmark", "intensity", "hybrid"], default=None
    )
    p.add_argument("--boundary", choices=["hard", "soft"], default=None)
    p.add_argument("--progress-every", type=int, default=0)


def load_run_config(path, args) -> tuple[TrainConfig, dict, str | None]:
    """Read the JSON config document; flags shadow file values.  Returns the
    config, the data file paths, and the output directory."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise FileFormatError(f"{path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    data_paths = {k: doc.pop(k, None) for k in DATA_KEYS}
    out_dir = doc.pop("out", None)
    config = TrainConfig.from_dict(doc)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.epochs is not None:
        config = replace(config, epochs=args.epochs)
    if args.formulation is not None:
        config = replace(config, formulation=args.formulation)
    if args.boundary is not None:
        config = replace(config, boundary_mode=args.boundary)
    if args.out is not None:
        out_dir = args.out
    return config, data_paths, out_dir


def load_data(config: TrainConfig, data_paths: dict) -> TrainingData:
    landmarks = source = target = None
    if config.formulation in ("landmark", "hybrid"):
        if not data_paths.get("landmarks"):
            raise ConfigError(
                f"formulation {config.formulation!r} needs config key 'landmarks'"
            )
        landmarks = read_landmarks(data_paths["landmarks"])
    if config.formulation in ("intensity", "hybrid"):
        for key in ("source_image", "target_image"):
            if not data_paths.get(key):
                raise ConfigError(
                    f"formulation {config.formulation!r} needs config key {key!r}"
                )
        source = read_volume(data_paths["source_image"])
        target = read_volume(data_paths["target_image"])
    return TrainingData(landmarks=landmarks, source=source, target=target)


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"task": args.task, "seed": args.seed}
    if args.task == "twisted":
        lms = twisted_pairs()
        write_landmarks(lms, out / "landmarks.txt")
        manifest["landmark_count"] = lms.count
    elif args.task == "sphere":
        lms = rotated_sphere(args.n or 200, seed=args.seed)
        write_landmarks(lms, out / "landmarks.txt")
        manifest["landmark_count"] = lms.count
    elif args.task == "disk":
        lms = translating_disk(args.n or 400, seed=args.seed)
        write_landmarks(lms, out / "landmarks.txt")
        manifest["landmark_count"] = lms.count
    else:
        dims = (args.image_dims,) * 3
        source, target, lms = appendix_dataset(dims, grid_n=args.grid_n)
        write_volume(source, out / "source.vol")
        write_volume(target, out / "target.vol")
        write_landmarks(lms, out / "landmarks.txt")
        manifest["image_dims"] = list(dims)
        manifest["grid_n"] = args.grid_n
        manifest["landmark_count"] = lms.count
    with open(out / "manifest.json", "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {args.task} dataset to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config, data_paths, out_dir = load_run_config(args.config, args)
    data = load_data(config, data_paths)
    result = train(config, data, out_dir=out_dir, progress_every=args.progress_every)
    final = result.history[-1].breakdown
    print(
        f"trained {config.epochs} epochs: total {final.total:.6g}, "
        f"landmark {final.landmark:.6g}, intensity {final.intensity:.6g}, "
        f"omega+ {final.omega_plus_fraction:.4f}"
    )
    if out_dir is not None:
        print(f"outputs in {out_dir}")
    return EXIT_OK


def _parse_slices(spec: str) -> list[tuple[int, float]]:
    axes = {"x": 0, "y": 1, "z": 2}
    out = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"bad slice spec {part!r}; expected like x=0.2")
        name, _, val = part.partition("=")
        if name.strip() not in axes:
            raise ConfigError(f"bad slice axis {name!r}; use x, y or z")
        try:
            level = float(val)
        except ValueError:
            raise ConfigError(f"bad slice level {val!r}") from None
        out.append((axes[name.strip()], level))
    if not out:
        raise ConfigError(f"no slices in spec {spec!r}")
    return out


def cmd_report(args) -> int:
    params = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hist = det_histogram(
        params, n_samples=args.hist_samples, bins=args.bins, seed=args.seed
    )
    write_histogram_csv(hist, out / "det_histogram.csv")
    print(
        f"det over {hist.sample_count} samples: range [{hist.min_det:.4g}, "
        f"{hist.max_det:.4g}], negative fraction {hist.negative_fraction:.6g}"
    )
    if args.slices:
        for axis, level in _parse_slices(args.slices):
            sections = cross_sections(params, axis, [level], grid_n=args.slice_grid)
            name = f"slice_{'xyz'[axis]}_{level:g}.csv"
            write_point_cloud_csv(sections, out / name)
            print(f"wrote {name}")
    if args.warp_source:
        source = read_volume(args.warp_source)
        dims = (args.warp_dims,) * 3 if args.warp_dims else source.dims
        warped = warp_image(params, source, dims)
        write_volume(warped, out / "warped.vol")
        print(f"wrote warped.vol at dims {tuple(dims)}")
    if args.history:
        table = loss_table(read_history_csv(args.history))
        write_summary_json(table, out / "loss_table.json")
        print(f"final losses: {json.dumps(table, sort_keys=True)}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    config, data_paths, out_dir = load_run_config(args.config, args)
    data = load_data(config, data_paths)
    try:
        soft_weights = tuple(float(v) for v in args.soft_weights.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad --soft-weights {args.soft_weights!r}") from None
    if not soft_weights:
        raise ConfigError("need at least one soft weight")
    comparison = ablate_boundary(
        config,
        data,
        soft_weights=soft_weights,
        out_dir=out_dir,
        progress_every=args.progress_every,
    )
    for name, row in comparison["runs"].items():
        print(
            f"{name:>10s}: boundary error {row['boundary_error_max']:.3e}, "
            f"landmark {row['landmark_loss']:.3e}, "
            f"conformality {row['conformality_loss']:.6g}"
        )
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "report":
            return cmd_report(args)
        if args.command == "ablate":
            return cmd_ablate(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileFormatError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
