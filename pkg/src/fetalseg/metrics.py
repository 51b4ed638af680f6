"""Overlap and surface-distance metrics plus CSV reporting.

Dice and symmetric mean surface distance (MSD) are computed per class,
per slice (2-D) or per volume (3-D).  A class absent from both prediction
and truth yields an undefined score (stored as None, written as NA) and is
excluded from averages; absent from exactly one side yields Dice 0 and an
undefined MSD.  Boundaries are face-connected (4-neighbor in 2-D,
6-neighbor in 3-D) and the image border counts as outside, so a mask
touching the edge still has a surface there.  Distances are Euclidean in
millimeters under the voxel spacing; the symmetric MSD averages the two
directed mean distances.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .volume import FOREGROUND_CLASSES, LabelVolume

__all__ = [
    "boundary_mask",
    "dice_coefficient",
    "mean_surface_distance",
    "SliceClassScore",
    "VolumeClassScore",
    "score_slice_pair",
    "score_volume_slices",
    "score_volume_3d",
    "SUBSET_NAMES",
    "SubsetSummary",
    "summarize",
    "summarize_subsets",
    "format_metric",
    "write_slice_scores",
    "read_slice_scores",
    "write_report",
]

SUBSET_NAMES = ("all", "with-artifact", "without-artifact")


def boundary_mask(mask: np.ndarray) -> np.ndarray:
    """Mask voxels with a face neighbor outside the mask (or the image)."""
    m = np.asarray(mask, dtype=bool)
    if m.ndim not in (2, 3):
        raise ValueError("boundary extraction expects 2-D or 3-D masks")
    padded = np.pad(m, 1)  # image border counts as outside
    interior = m.copy()
    for axis in range(m.ndim):
        before = [slice(1, -1)] * m.ndim
        after = [slice(1, -1)] * m.ndim
        before[axis] = slice(0, -2)
        after[axis] = slice(2, None)
        interior &= padded[tuple(before)] & padded[tuple(after)]
    return m & ~interior


def dice_coefficient(pred: np.ndarray, truth: np.ndarray) -> float | None:
    """2|A n B| / (|A| + |B|); None when both masks are empty."""
    p = np.asarray(pred, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    ps = int(p.sum())
    ts = int(t.sum())
    if ps + ts == 0:
        return None
    inter = int(np.logical_and(p, t).sum())
    return 2.0 * inter / (ps + ts)


def mean_surface_distance(
    pred: np.ndarray, truth: np.ndarray, spacing
) -> float | None:
    """Symmetric mean boundary distance in mm; None unless both are non-empty."""
    p = np.asarray(pred, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if not p.any() or not t.any():
        return None
    spacing = np.asarray(spacing, dtype=np.float64)
    if spacing.shape != (p.ndim,):
        raise ValueError(f"spacing must have {p.ndim} entries")
    bp = np.argwhere(boundary_mask(p)) * spacing
    bt = np.argwhere(boundary_mask(t)) * spacing
    d_pt = cKDTree(bt).query(bp)[0]
    d_tp = cKDTree(bp).query(bt)[0]
    return float((d_pt.mean() + d_tp.mean()) / 2.0)


@dataclass(frozen=True)
class SliceClassScore:
    volume_id: str
    slice_index: int
    class_code: int
    dice: float | None
    msd: float | None
    with_artifact: bool


@dataclass(frozen=True)
class VolumeClassScore:
    volume_id: str
    class_code: int
    dice: float | None
    msd: float | None


def score_slice_pair(
    pred: np.ndarray, truth: np.ndarray, spacing2, classes=FOREGROUND_CLASSES
) -> dict[int, tuple[float | None, float | None]]:
    """Per-class (dice, msd) for one predicted/true label slice.

    ``spacing2`` is (row_mm, col_mm), matching the array axes.
    """
    out = {}
    for c in classes:
        p = pred == c
        t = truth == c
        out[c] = (dice_coefficient(p, t), mean_surface_distance(p, t, spacing2))
    return out


def score_volume_slices(
    pred: LabelVolume,
    truth: LabelVolume,
    volume_id: str,
    artifact_flags,
    classes=FOREGROUND_CLASSES,
) -> list[SliceClassScore]:
    """Slice-wise 2-D scores for a whole volume (what the experiments report)."""
    if pred.data.shape != truth.data.shape:
        raise ValueError("prediction and truth shapes differ")
    if len(artifact_flags) != pred.depth:
        raise ValueError("artifact flags must have one entry per slice")
    spacing2 = (truth.spacing[1], truth.spacing[0])  # rows step sy, cols step sx
    scores = []
    for z in range(pred.depth):
        per_class = score_slice_pair(pred.data[z], truth.data[z], spacing2, classes)
        for c in classes:
            dc, msd = per_class[c]
            scores.append(
                SliceClassScore(
                    volume_id=volume_id,
                    slice_index=z,
                    class_code=c,
                    dice=dc,
                    msd=msd,
                    with_artifact=bool(artifact_flags[z]),
                )
            )
    return scores


def score_volume_3d(
    pred: LabelVolume, truth: LabelVolume, volume_id: str, classes=FOREGROUND_CLASSES
) -> list[VolumeClassScore]:
    """Volumetric per-class scores with 3-D boundaries and anisotropic spacing."""
    if pred.data.shape != truth.data.shape:
        raise ValueError("prediction and truth shapes differ")
    spacing3 = (truth.spacing[2], truth.spacing[1], truth.spacing[0])  # (z, y, x) mm
    out = []
    for c in classes:
        p = pred.data == c
        t = truth.data == c
        out.append(
            VolumeClassScore(
                volume_id=volume_id,
                class_code=c,
                dice=dice_coefficient(p, t),
                msd=mean_surface_distance(p, t, spacing3),
            )
        )
    return out


@dataclass(frozen=True)
class SubsetSummary:
    subset: str
    per_class_dice: dict[int, float | None]
    per_class_msd: dict[int, float | None]
    mean_dice: float | None
    mean_msd: float | None
    n_slices: int


def _mean_defined(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def summarize(
    scores: list[SliceClassScore], subset: str = "all", classes=FOREGROUND_CLASSES
) -> SubsetSummary:
    """Per-class means over defined scores; the grand mean averages the
    per-class means (each class weighs equally, not each slice)."""
    if subset == "all":
        kept = list(scores)
    elif subset == "with-artifact":
        kept = [s for s in scores if s.with_artifact]
    elif subset == "without-artifact":
        kept = [s for s in scores if not s.with_artifact]
    else:
        raise ValueError(f"unknown subset {subset!r}, expected one of {SUBSET_NAMES}")
    per_class_dice = {}
    per_class_msd = {}
    for c in classes:
        per_class_dice[c] = _mean_defined(s.dice for s in kept if s.class_code == c)
        per_class_msd[c] = _mean_defined(s.msd for s in kept if s.class_code == c)
    slice_keys = {(s.volume_id, s.slice_index) for s in kept}
    return SubsetSummary(
        subset=subset,
        per_class_dice=per_class_dice,
        per_class_msd=per_class_msd,
        mean_dice=_mean_defined(per_class_dice.values()),
        mean_msd=_mean_defined(per_class_msd.values()),
        n_slices=len(slice_keys),
    )


def summarize_subsets(
    scores: list[SliceClassScore], classes=FOREGROUND_CLASSES
) -> dict[str, SubsetSummary]:
    return {name: summarize(scores, name, classes) for name in SUBSET_NAMES}


def format_metric(value: float | None) -> str:
    return "NA" if value is None else repr(float(value))


def write_slice_scores(path, scores: list[SliceClassScore]) -> None:
    """Rows are sorted by (volume, slice, class) so identical results give
    identical bytes."""
    rows = sorted(scores, key=lambda s: (s.volume_id, s.slice_index, s.class_code))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["volume", "slice", "class", "dc", "msd", "artifact"])
        for s in rows:
            writer.writerow(
                [
                    s.volume_id,
                    s.slice_index,
                    s.class_code,
                    format_metric(s.dice),
                    format_metric(s.msd),
                    int(s.with_artifact),
                ]
            )


def read_slice_scores(path) -> list[SliceClassScore]:
    out = []
    with open(path, "r", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(
                SliceClassScore(
                    volume_id=row["volume"],
                    slice_index=int(row["slice"]),
                    class_code=int(row["class"]),
                    dice=None if row["dc"] == "NA" else float(row["dc"]),
                    msd=None if row["msd"] == "NA" else float(row["msd"]),
                    with_artifact=row["artifact"] == "1",
                )
            )
    return out


def write_report(path, summaries: dict[str, SubsetSummary], classes=FOREGROUND_CLASSES) -> None:
    """Subset x class table plus per-subset grand means."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subset", "class", "dc_mean", "msd_mean", "n_slices"])
        for name in SUBSET_NAMES:
            summary = summaries[name]
            for c in classes:
                writer.writerow(
                    [
                        name,
                        c,
                        format_metric(summary.per_class_dice[c]),
                        format_metric(summary.per_class_msd[c]),
                        summary.n_slices,
                    ]
                )
            writer.writerow(
                [name, "mean", format_metric(summary.mean_dice), format_metric(summary.mean_msd), summary.n_slices]
            )
