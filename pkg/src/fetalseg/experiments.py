"""Experiment orchestration: dataset build, stage training, the four-arm
augmentation ablation, and the shading-proportion sweep.

Every artifact lands under the configured output directory:

    data/         phantom volumes + manifest
    checkpoints/  icv.ckpt, tissue_<label>.ckpt
    losses/       loss_<stage>_<label>.csv  (epoch, loss)
    pred/<label>/ predicted label volumes for the test split
    metrics/      slices_<label>.csv, ablation.csv, sweep.csv

Completed artifacts are reused on rerun, so ablation and sweep share the
ICV checkpoint and a rerun over an existing directory only rewrites the
CSVs (identically).  Jobs dispatched via --jobs run in separate processes
and are internally deterministic, so the job count never changes results.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .augment import ARM_NAMES
from .config import ExperimentConfig
from .errors import ConfigError
from .metrics import (
    SUBSET_NAMES,
    SliceClassScore,
    SubsetSummary,
    format_metric,
    score_volume_slices,
    summarize_subsets,
    write_slice_scores,
)
from .nnet import (
    TrainConfig,
    init_unet,
    load_checkpoint,
    save_checkpoint,
    train_unet,
)
from .phantom import ManifestEntry, generate_case, inject_test_artifact, read_manifest, write_manifest
from .pipeline import icv_training_pairs, segment_volume, tissue_training_pairs
from .rng import substream
from .volume import (
    FOREGROUND_CLASSES,
    IntensityVolume,
    LabelVolume,
    ensure_dir,
    load_volume,
    save_volume,
)

__all__ = [
    "ARM_SLUGS",
    "ICV_ARM",
    "ExperimentPaths",
    "build_dataset",
    "load_split",
    "train_stage",
    "ensure_icv_checkpoint",
    "evaluate_arm",
    "run_ablation",
    "run_sweep",
    "evaluate_predictions",
]

# Stage one is trained once with the strongest augmentation and shared by
# all arms: tissue training crops from reference ROIs, so the ICV net only
# affects inference, where a shared model keeps the arm comparison about
# the tissue stage alone.
ICV_ARM = "flip+rot+IIA"

ARM_SLUGS = {
    "none": "none",
    "flip": "flip",
    "flip+rot": "flip_rot",
    "flip+rot+IIA": "flip_rot_iia",
}

COMPARISON_COLUMNS = [
    "dc_all",
    "msd_all",
    "dc_with_artifact",
    "msd_with_artifact",
    "dc_without_artifact",
    "msd_without_artifact",
]

_SUBSET_OF_COLUMN = {
    "dc_all": ("all", "dice"),
    "msd_all": ("all", "msd"),
    "dc_with_artifact": ("with-artifact", "dice"),
    "msd_with_artifact": ("with-artifact", "msd"),
    "dc_without_artifact": ("without-artifact", "dice"),
    "msd_without_artifact": ("without-artifact", "msd"),
}


@dataclass(frozen=True)
class ExperimentPaths:
    outdir: Path

    @property
    def data(self) -> Path:
        return self.outdir / "data"

    @property
    def manifest(self) -> Path:
        return self.data / "manifest.txt"

    @property
    def checkpoints(self) -> Path:
        return self.outdir / "checkpoints"

    @property
    def losses(self) -> Path:
        return self.outdir / "losses"

    @property
    def pred(self) -> Path:
        return self.outdir / "pred"

    @property
    def metrics(self) -> Path:
        return self.outdir / "metrics"

    def tissue_checkpoint(self, label: str) -> Path:
        return self.checkpoints / f"tissue_{label}.ckpt"

    def icv_checkpoint(self) -> Path:
        return self.checkpoints / "icv.ckpt"


def paths_for(config: ExperimentConfig) -> ExperimentPaths:
    return ExperimentPaths(outdir=Path(config.outdir))


def _log(log, message: str) -> None:
    if log is not None:
        log(message)


# ---------------------------------------------------------------- dataset


def _dataset_is_current(config: ExperimentConfig, paths: ExperimentPaths) -> bool:
    if not paths.manifest.exists():
        return False
    try:
        seed, entries = read_manifest(paths.manifest)
    except (ValueError, OSError):
        return False
    if seed != config.seed or len(entries) != config.n_volumes:
        return False
    return all(
        (paths.data / e.intensity_file).exists() and (paths.data / e.labels_file).exists()
        for e in entries
    )


def build_dataset(config: ExperimentConfig, log=None) -> Path:
    """Generate the phantom dataset (train split clean, test split with
    injected shading) and its manifest.  Reuses a matching existing set."""
    paths = paths_for(config)
    if _dataset_is_current(config, paths):
        _log(log, f"dataset up to date at {paths.data}")
        return paths.manifest
    ensure_dir(paths.data)
    phantom_cfg = config.phantom_config()
    _, test_ids = config.split_volumes()
    test_set = set(test_ids)
    entries = []
    for i in range(config.n_volumes):
        case = generate_case(phantom_cfg, i)
        split = "test" if i in test_set else "train"
        if split == "test":
            case = inject_test_artifact(
                case, substream(config.seed, "inject", i), phantom_cfg.artifact
            )
        case_id = f"case{i:03d}"
        img_name = f"{case_id}_img.mvol"
        lab_name = f"{case_id}_lab.mvol"
        save_volume(case.intensity, paths.data / img_name)
        save_volume(case.truth, paths.data / lab_name)
        entries.append(
            ManifestEntry(
                case_id=case_id,
                split=split,
                intensity_file=img_name,
                labels_file=lab_name,
                artifact_flags=case.has_injected_artifact,
            )
        )
    write_manifest(paths.manifest, config.seed, entries)
    _log(log, f"wrote {config.n_volumes} phantom volumes to {paths.data}")
    return paths.manifest


def load_split(
    config: ExperimentConfig, split: str
) -> list[tuple[ManifestEntry, IntensityVolume, LabelVolume]]:
    paths = paths_for(config)
    if not paths.manifest.exists():
        raise ConfigError(
            f"dataset manifest not found at {paths.manifest}; run the phantom command first"
        )
    _, entries = read_manifest(paths.manifest)
    out = []
    for entry in entries:
        if entry.split != split:
            continue
        intensity = load_volume(paths.data / entry.intensity_file)
        truth = load_volume(paths.data / entry.labels_file)
        out.append((entry, intensity, truth))
    return out


# ---------------------------------------------------------------- training


def _write_loss_csv(path: Path, losses: list[float]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(losses):
            writer.writerow([epoch, repr(float(loss))])


def train_stage(
    config: ExperimentConfig,
    stage: str,
    arm: str,
    label: str,
    proportion: float = 1.0,
    roi_mode: str = "reference",
    icv_checkpoint: Path | None = None,
    log=None,
) -> Path:
    """Train one stage under one augmentation arm; returns the checkpoint.

    Existing checkpoints are reused.  ``label`` names the output files.
    Tissue training crops reference ROIs by default; ``roi_mode=
    "predicted"`` crops ROIs computed from an ICV checkpoint instead.
    """
    paths = paths_for(config)
    ckpt = (
        paths.icv_checkpoint() if stage == "icv" else paths.tissue_checkpoint(label)
    )
    if ckpt.exists():
        _log(log, f"{stage} checkpoint {ckpt} already present")
        return ckpt
    ensure_dir(paths.checkpoints)
    ensure_dir(paths.losses)
    volumes = [(vol, truth) for _, vol, truth in load_split(config, "train")]
    if not volumes:
        raise ConfigError("training split is empty")
    if stage == "icv":
        pairs = icv_training_pairs(volumes)
        loss_name = "ce"
        epochs, batch = config.icv_epochs, config.icv_batch
    elif stage == "tissue":
        if roi_mode == "reference":
            pairs = tissue_training_pairs(volumes, config.roi_margin, 2**config.depth)
        elif roi_mode == "predicted":
            pairs = _predicted_roi_pairs(config, volumes, icv_checkpoint)
        else:
            raise ConfigError(f"roi_mode must be reference|predicted, got {roi_mode!r}")
        loss_name = "dice"
        epochs, batch = config.tissue_epochs, config.tissue_batch
    else:
        raise ConfigError(f"stage must be icv|tissue, got {stage!r}")

    net = init_unet(config.unet_config(stage), config.seed, stage)
    train_cfg = TrainConfig(
        stage=stage,
        epochs=epochs,
        batch_size=batch,
        loss=loss_name,
        augment=config.augment_for_arm(arm, proportion),
        seed=config.seed,
        optimizer=config.optimizer(),
    )
    result = train_unet(net, pairs, train_cfg)
    save_checkpoint(ckpt, net)
    _write_loss_csv(paths.losses / f"loss_{stage}_{label}.csv", result.epoch_losses)
    _log(
        log,
        f"trained {stage} [{arm}, p={proportion:g}] for {epochs} epochs, "
        f"final loss {result.final_loss:.4f}",
    )
    return ckpt


def _predicted_roi_pairs(config, volumes, icv_checkpoint):
    """Tissue pairs whose crop windows come from predicted ICV masks; the
    labels inside the crop remain the reference ones."""
    from .nnet import predict_slices
    from .postprocess import filter_small_components
    from .volume import get_slice

    if icv_checkpoint is None:
        raise ConfigError("roi_mode=predicted requires an ICV checkpoint")
    icv_net = load_checkpoint(icv_checkpoint)
    masks = []
    for intensity, _ in volumes:
        slices = [get_slice(intensity, z) for z in range(intensity.depth)]
        probs = predict_slices(icv_net, slices)
        mask = filter_small_components(
            probs.argmax(axis=1) == 1,
            intensity.spacing,
            min_mm3=config.min_component_mm3,
            connectivity=config.connectivity,
        )
        if not mask.any():
            raise ConfigError(
                "predicted-ROI training found no ICV on a training volume; "
                "use roi_mode=reference"
            )
        masks.append(mask)
    return tissue_training_pairs(
        volumes, config.roi_margin, 2**config.depth, roi_masks=masks
    )


def ensure_icv_checkpoint(config: ExperimentConfig, log=None) -> Path:
    return train_stage(
        config, "icv", ICV_ARM, "shared", proportion=config.iia_proportion, log=log
    )


# ---------------------------------------------------------------- evaluation


def evaluate_arm(
    config: ExperimentConfig,
    label: str,
    tissue_checkpoint: Path,
    log=None,
) -> tuple[list[SliceClassScore], dict[str, SubsetSummary]]:
    """Segment the test split with the shared ICV net plus one tissue net,
    write predictions and the per-slice CSV, and return the summaries."""
    paths = paths_for(config)
    icv_net = load_checkpoint(paths.icv_checkpoint())
    tissue_net = load_checkpoint(tissue_checkpoint)
    pred_dir = paths.pred / label
    ensure_dir(pred_dir)
    ensure_dir(paths.metrics)
    scores: list[SliceClassScore] = []
    for entry, intensity, truth in load_split(config, "test"):
        result = segment_volume(
            intensity,
            icv_net,
            tissue_net,
            min_component_mm3=config.min_component_mm3,
            connectivity=config.connectivity,
            roi_margin=config.roi_margin,
        )
        save_volume(result.labels, pred_dir / f"{entry.case_id}_pred.mvol")
        scores.extend(
            score_volume_slices(
                result.labels, truth, entry.case_id, entry.artifact_flags
            )
        )
    slices_csv = paths.metrics / f"slices_{label}.csv"
    write_slice_scores(slices_csv, scores)
    _log(log, f"evaluated {label}: {slices_csv}")
    return scores, summarize_subsets(scores)


def _comparison_rows(key: str, summaries: dict[str, SubsetSummary]) -> list[list]:
    rows = []
    for c in FOREGROUND_CLASSES:
        row = [key, c]
        for column in COMPARISON_COLUMNS:
            subset, metric = _SUBSET_OF_COLUMN[column]
            summary = summaries[subset]
            value = (
                summary.per_class_dice[c] if metric == "dice" else summary.per_class_msd[c]
            )
            row.append(format_metric(value))
        rows.append(row)
    return rows


def _write_comparison_csv(path: Path, key_name: str, keyed_rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([key_name, "class"] + COMPARISON_COLUMNS)
        writer.writerows(keyed_rows)


def _arm_job(args) -> tuple[str, dict[str, SubsetSummary]]:
    config, arm, label, proportion = args
    ckpt = train_stage(config, "tissue", arm, label, proportion=proportion)
    _, summaries = evaluate_arm(config, label, ckpt)
    return label, summaries


def _run_jobs(job_args: list, jobs: int):
    if jobs <= 1:
        return [_arm_job(args) for args in job_args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_arm_job, job_args))


def run_ablation(config: ExperimentConfig, jobs: int = 1, log=None):
    """Train and evaluate the four augmentation arms; emit ablation.csv
    (one row per arm x class, fixed arm order)."""
    paths = paths_for(config)
    build_dataset(config, log=log)
    ensure_icv_checkpoint(config, log=log)
    job_args = [
        (config, arm, ARM_SLUGS[arm], config.iia_proportion) for arm in ARM_NAMES
    ]
    results = dict(_run_jobs(job_args, jobs))
    rows = []
    summaries_by_arm = {}
    for arm in ARM_NAMES:
        summaries = results[ARM_SLUGS[arm]]
        summaries_by_arm[arm] = summaries
        rows.extend(_comparison_rows(arm, summaries))
    ensure_dir(paths.metrics)
    out_csv = paths.metrics / "ablation.csv"
    _write_comparison_csv(out_csv, "arm", rows)
    _log(log, f"wrote {out_csv}")
    return out_csv, summaries_by_arm


def run_sweep(
    config: ExperimentConfig,
    proportions: tuple[float, ...] | None = None,
    jobs: int = 1,
    log=None,
):
    """Train and evaluate flip+rot+IIA at each shading proportion; emit
    sweep.csv (one row per proportion x class)."""
    paths = paths_for(config)
    grid = config.proportions if proportions is None else tuple(proportions)
    if any(not 0.0 <= p <= 1.0 for p in grid) or not grid:
        raise ConfigError(f"sweep proportions must lie in [0, 1], got {grid}")
    build_dataset(config, log=log)
    ensure_icv_checkpoint(config, log=log)
    job_args = [
        (config, "flip+rot+IIA", f"p{p:g}", float(p)) for p in grid
    ]
    results = dict(_run_jobs(job_args, jobs))
    rows = []
    summaries_by_p = {}
    for p in grid:
        summaries = results[f"p{p:g}"]
        summaries_by_p[float(p)] = summaries
        rows.extend(_comparison_rows(f"{p:g}", summaries))
    ensure_dir(paths.metrics)
    out_csv = paths.metrics / "sweep.csv"
    _write_comparison_csv(out_csv, "proportion", rows)
    _log(log, f"wrote {out_csv}")
    return out_csv, summaries_by_p


def evaluate_predictions(
    pred_dir: Path,
    manifest_path: Path,
    data_dir: Path | None = None,
    out_dir: Path | None = None,
    split: str = "test",
    log=None,
):
    """Score externally produced predictions named <case>_pred.mvol against
    the manifest's reference labels; write slices.csv and report.csv."""
    from .metrics import write_report

    pred_dir = Path(pred_dir)
    manifest_path = Path(manifest_path)
    data_dir = Path(data_dir) if data_dir is not None else manifest_path.parent
    out_dir = Path(out_dir) if out_dir is not None else pred_dir
    _, entries = read_manifest(manifest_path)
    scores: list[SliceClassScore] = []
    for entry in entries:
        if split != "all" and entry.split != split:
            continue
        pred = load_volume(pred_dir / f"{entry.case_id}_pred.mvol")
        truth = load_volume(data_dir / entry.labels_file)
        scores.extend(
            score_volume_slices(pred, truth, entry.case_id, entry.artifact_flags)
        )
    if not scores:
        raise ConfigError(f"no volumes with split {split!r} found in {manifest_path}")
    ensure_dir(out_dir)
    slices_csv = out_dir / "slices.csv"
    report_csv = out_dir / "report.csv"
    write_slice_scores(slices_csv, scores)
    write_report(report_csv, summarize_subsets(scores))
    _log(log, f"wrote {slices_csv} and {report_csv}")
    return slices_csv, report_csv
