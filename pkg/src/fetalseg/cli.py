"""Command-line interface.

Subcommands: phantom, train, segment, evaluate, ablation, sweep,
augment preview, gradcheck.  Global flags (--config/--seed/--jobs/--out)
may appear before or after the subcommand.  Exit codes: 0 success,
2 configuration or input error, 3 numeric divergence, 4 no ICV found.
Timestamps appear only in <outdir>/run.log; every other output file is a
pure function of (config, seed).
"""

from __future__ import annotations

import argparse
import sys
from datetime import datetime
from pathlib import Path

from .augment import ARM_NAMES, apply_iia, make_multiplier_field
from .config import load_config
from .errors import ConfigError, FetalsegError, NoIcvError, TrainingDivergedError
from .experiments import (
    ARM_SLUGS,
    build_dataset,
    evaluate_predictions,
    paths_for,
    run_ablation,
    run_sweep,
    train_stage,
)
from .nnet import (
    UNetConfig,
    check_unet_gradients,
    init_unet,
    layer_gradient_report,
    load_checkpoint,
)
from .phantom import generate_case
from .pipeline import segment_volume
from .rng import substream
from .volume import (
    ensure_dir,
    get_slice,
    load_volume,
    save_volume,
    write_label_ppm,
    write_pgm,
)

FULL_NET_TOL = 1e-4
PER_LAYER_TOL = 1e-6


def _add_global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    jobs_default = argparse.SUPPRESS if suppress else 1
    parser.add_argument("--config", default=d, metavar="PATH", help="flat key = value config file")
    parser.add_argument("--seed", type=int, default=d, help="root random seed (overrides config)")
    parser.add_argument("--jobs", type=int, default=jobs_default, metavar="N", help="parallel jobs for ablation/sweep")
    parser.add_argument("--out", default=d, metavar="DIR", help="output directory (overrides config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fetalseg",
        description="Two-stage fetal brain tissue segmentation with "
        "intensity-inhomogeneity augmentation, on synthetic phantoms.",
    )
    _add_global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("phantom", help="generate the phantom dataset and manifest")
    _add_global_flags(p, suppress=True)

    p = sub.add_parser("train", help="train one pipeline stage")
    _add_global_flags(p, suppress=True)
    p.add_argument("stage", choices=("icv", "tissue"))
    p.add_argument("--arm", choices=ARM_NAMES, default="flip+rot+IIA", help="augmentation arm")
    p.add_argument(
        "--proportion",
        type=float,
        default=None,
        help="IIA slice proportion per batch (default: iia_proportion from config)",
    )
    p.add_argument(
        "--roi",
        choices=("reference", "predicted"),
        default="reference",
        help="tissue-stage crop source: reference labels or a predicted ICV mask",
    )
    p.add_argument("--icv-checkpoint", metavar="PATH", help="required for --roi predicted")

    p = sub.add_parser("segment", help="run the two-stage pipeline on one volume")
    _add_global_flags(p, suppress=True)
    p.add_argument("volume", help="input intensity .mvol")
    p.add_argument("icv_checkpoint")
    p.add_argument("tissue_checkpoint")
    p.add_argument("--output", metavar="PATH", help="output label .mvol path")

    p = sub.add_parser("evaluate", help="score predictions against reference labels")
    _add_global_flags(p, suppress=True)
    p.add_argument("--pred-dir", required=True, help="directory of <case>_pred.mvol files")
    p.add_argument("--manifest", required=True, help="dataset manifest path")
    p.add_argument("--data-dir", help="reference data directory (default: manifest's)")
    p.add_argument("--split", default="test", choices=("train", "test", "all"))

    p = sub.add_parser("ablation", help="train and compare the four augmentation arms")
    _add_global_flags(p, suppress=True)

    p = sub.add_parser("sweep", help="sweep the IIA proportion grid")
    _add_global_flags(p, suppress=True)
    p.add_argument("--proportions", metavar="P1,P2,...", help="override the config grid")

    p = sub.add_parser("augment", help="augmentation utilities")
    _add_global_flags(p, suppress=True)
    p.add_argument("action", choices=("preview",))
    p.add_argument("--case", type=int, default=0, help="phantom case index")
    p.add_argument("--slice", type=int, default=-1, dest="slice_index", help="slice (default: middle)")
    p.add_argument("--count", type=int, default=4, help="number of random shading draws")

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    _add_global_flags(p, suppress=True)

    return parser


def _make_logger(outdir: Path):
    log_path = Path(outdir) / "run.log"

    def log(message: str) -> None:
        print(message, flush=True)
        ensure_dir(log_path.parent)
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(f"{datetime.now().isoformat()} {message}\n")

    return log


def _cmd_train(config, args, log) -> int:
    proportion = config.iia_proportion if args.proportion is None else args.proportion
    if args.stage == "icv":
        train_stage(config, "icv", args.arm, "shared", proportion=proportion, log=log)
        return 0
    label = ARM_SLUGS[args.arm] if args.proportion is None else f"p{proportion:g}"
    train_stage(
        config,
        "tissue",
        args.arm,
        label,
        proportion=proportion,
        roi_mode=args.roi,
        icv_checkpoint=Path(args.icv_checkpoint) if args.icv_checkpoint else None,
        log=log,
    )
    return 0


def _cmd_segment(config, args, log) -> int:
    volume_path = Path(args.volume)
    volume = load_volume(volume_path)
    icv_net = load_checkpoint(args.icv_checkpoint)
    tissue_net = load_checkpoint(args.tissue_checkpoint)
    result = segment_volume(
        volume,
        icv_net,
        tissue_net,
        min_component_mm3=config.min_component_mm3,
        connectivity=config.connectivity,
        roi_margin=config.roi_margin,
    )
    if args.output:
        out_path = Path(args.output)
    else:
        stem = volume_path.stem
        if stem.endswith("_img"):
            stem = stem[: -len("_img")]
        out_path = volume_path.parent / f"{stem}_pred.mvol"
    ensure_dir(out_path.parent)
    save_volume(result.labels, out_path)
    log(
        f"wrote {out_path} (ICV voxels {int(result.icv_mask.sum())}, "
        f"ROI {result.roi.height}x{result.roi.width})"
    )
    return 0


def _cmd_augment_preview(config, args, log) -> int:
    case = generate_case(config.phantom_config(), args.case)
    z = args.slice_index if args.slice_index >= 0 else case.intensity.depth // 2
    slc = get_slice(case.intensity, z)
    out_dir = paths_for(config).outdir / "preview"
    ensure_dir(out_dir)
    write_pgm(slc.data, out_dir / "original.pgm")
    write_label_ppm(case.truth.data[z], out_dir / "labels.ppm")
    params = config.iia_params()
    for i in range(args.count):
        rng = substream(config.seed, "preview", args.case, z, i)
        shaded, draw = apply_iia(slc, params, rng)
        field = make_multiplier_field(slc.width, slc.height, draw.x0, draw.y0, draw.theta)
        write_pgm(field.values, out_dir / f"field_{i}.pgm")
        write_pgm(shaded.data, out_dir / f"shaded_{i}.pgm")
        log(
            f"draw {i}: x0={draw.x0_ref:.1f} y0={draw.y0_ref:.1f} "
            f"theta={draw.theta:.1f} -> {out_dir / f'shaded_{i}.pgm'}"
        )
    log(f"previews in {out_dir}")
    return 0


def _cmd_gradcheck(config, args, log) -> int:
    import numpy as np

    report = layer_gradient_report(seed=config.seed)
    worst_layer = 0.0
    for name, err in report.items():
        log(f"layer {name:<14s} rel err {err:.3e}")
        worst_layer = max(worst_layer, err)

    arch = UNetConfig(in_channels=1, n_classes=4, depth=2, base_channels=4)
    net = init_unet(arch, config.seed, "gradcheck").astype(np.float64)
    rng = substream(config.seed, "gradcheck", "data")
    x = rng.standard_normal((2, 1, 16, 16))
    labels = rng.integers(0, arch.n_classes, size=(2, 16, 16))
    errors = check_unet_gradients(net, x, labels, loss="ce")
    worst_net = max(errors.values())
    log(f"full net ({len(errors)} tensors) worst rel err {worst_net:.3e}")

    ok = worst_layer <= PER_LAYER_TOL and worst_net <= FULL_NET_TOL
    log(
        f"gradcheck {'PASS' if ok else 'FAIL'} "
        f"(layers {worst_layer:.3e} <= {PER_LAYER_TOL:g}, "
        f"net {worst_net:.3e} <= {FULL_NET_TOL:g})"
    )
    return 0 if ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(
            getattr(args, "config", None),
            seed=getattr(args, "seed", None),
            outdir=getattr(args, "out", None),
        )
        log = _make_logger(Path(config.outdir))
        jobs = getattr(args, "jobs", 1)
        if args.command == "phantom":
            build_dataset(config, log=log)
        elif args.command == "train":
            return _cmd_train(config, args, log)
        elif args.command == "segment":
            return _cmd_segment(config, args, log)
        elif args.command == "evaluate":
            out_dir = Path(config.outdir) / "metrics" if getattr(args, "out", None) else None
            evaluate_predictions(
                Path(args.pred_dir),
                Path(args.manifest),
                data_dir=Path(args.data_dir) if args.data_dir else None,
                out_dir=out_dir,
                split=args.split,
                log=log,
            )
        elif args.command == "ablation":
            run_ablation(config, jobs=jobs, log=log)
        elif args.command == "sweep":
            proportions = None
            if args.proportions:
                proportions = tuple(
                    float(p) for p in args.proportions.split(",") if p.strip()
                )
            run_sweep(config, proportions=proportions, jobs=jobs, log=log)
        elif args.command == "augment":
            return _cmd_augment_preview(config, args, log)
        elif args.command == "gradcheck":
            return _cmd_gradcheck(config, args, log)
        return 0
    except ConfigError as exc:
        print(f"fetalseg: config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"fetalseg: training diverged: {exc}", file=sys.stderr)
        return 3
    except NoIcvError as exc:
        print(f"fetalseg: {exc}", file=sys.stderr)
        return 4
    except FetalsegError as exc:
        print(f"fetalseg: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
