"""Two-stage segmentation: ICV localization, ROI crop, tissue labeling.

Stage one runs the binary ICV net on every full slice, argmaxes, and
drops connected components below the physical size threshold.  Stage two
runs the tissue net on the in-plane ROI around the surviving mask and the
result is embedded back at the ROI offset, with everything outside the
ICV mask forced to background.

Training-side helpers build the slice datasets: full slices with
binarized labels for the ICV stage, reference-ROI crops (union of the
true foreground, padded to a common size so batches stack) for the
tissue stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoIcvError
from .nnet import UNet, predict_slices
from .postprocess import (
    MIN_COMPONENT_MM3,
    Roi,
    compute_roi,
    crop_roi,
    embed_roi,
    expand_span,
    filter_small_components,
)
from .volume import IntensityVolume, LabelVolume, Slice2D, get_slice

__all__ = [
    "SegmentationResult",
    "segment_volume",
    "icv_training_pairs",
    "tissue_training_pairs",
    "reference_roi",
]


@dataclass(frozen=True)
class SegmentationResult:
    labels: LabelVolume
    icv_mask: np.ndarray  # (depth, height, width) bool, post component filter
    roi: Roi


def segment_volume(
    volume: IntensityVolume,
    icv_net: UNet,
    tissue_net: UNet,
    min_component_mm3: float = MIN_COMPONENT_MM3,
    connectivity: int = 26,
    roi_margin: int = 4,
) -> SegmentationResult:
    """Full pipeline on one volume.  Raises NoIcvError when nothing brain-
    sized survives the component filter."""
    slices = [get_slice(volume, z) for z in range(volume.depth)]
    icv_probs = predict_slices(icv_net, slices)
    icv_pred = icv_probs.argmax(axis=1) == 1
    mask = filter_small_components(
        icv_pred, volume.spacing, min_mm3=min_component_mm3, connectivity=connectivity
    )
    if not mask.any():
        raise NoIcvError(
            f"no intracranial component of at least {min_component_mm3} mm^3 found"
        )
    roi = compute_roi(mask, margin=roi_margin, multiple=2**tissue_net.config.depth)

    spacing2 = volume.spacing[:2]
    crops = [
        Slice2D(data=crop_roi(volume.data[z], roi), spacing=spacing2)
        for z in range(volume.depth)
    ]
    tissue_probs = predict_slices(tissue_net, crops)
    cropped_labels = tissue_probs.argmax(axis=1).astype(np.uint8)
    full = embed_roi(cropped_labels, roi, volume.data.shape, fill=0)
    full[~mask] = 0
    return SegmentationResult(
        labels=LabelVolume(data=full, spacing=volume.spacing), icv_mask=mask, roi=roi
    )


def icv_training_pairs(
    volumes: list[tuple[IntensityVolume, LabelVolume]],
) -> list[tuple[Slice2D, Slice2D]]:
    """Full slices paired with binarized (background / intracranial) labels."""
    pairs = []
    for intensity, truth in volumes:
        binary = (truth.data > 0).astype(np.uint8)
        for z in range(intensity.depth):
            pairs.append(
                (
                    get_slice(intensity, z),
                    Slice2D(data=binary[z], spacing=truth.spacing[:2]),
                )
            )
    return pairs


def reference_roi(truth: LabelVolume, margin: int, multiple: int) -> Roi:
    """ROI derived from the union of the reference foreground labels."""
    return compute_roi(truth.data > 0, margin=margin, multiple=multiple)


def tissue_training_pairs(
    volumes: list[tuple[IntensityVolume, LabelVolume]],
    margin: int,
    multiple: int,
    roi_masks: list[np.ndarray] | None = None,
) -> list[tuple[Slice2D, Slice2D]]:
    """ROI crops for the tissue stage.

    ROIs come from the reference foreground by default, or from
    ``roi_masks`` (e.g. predicted ICV masks) when given.  Each volume's
    ROI is grown to the largest ROI in the set (still a multiple of the
    downsampling factor) so that slices from different volumes stack into
    one batch.
    """
    if not volumes:
        return []
    if roi_masks is None:
        rois = [reference_roi(truth, margin, multiple) for _, truth in volumes]
    else:
        if len(roi_masks) != len(volumes):
            raise ValueError("need one ROI mask per volume")
        rois = [compute_roi(m, margin=margin, multiple=multiple) for m in roi_masks]
    target_h = max(r.height for r in rois)
    target_w = max(r.width for r in rois)
    pairs = []
    for (intensity, truth), roi in zip(volumes, rois):
        _, h, w = intensity.data.shape
        y0, y1 = expand_span(roi.y0, roi.y1, target_h, h)
        x0, x1 = expand_span(roi.x0, roi.x1, target_w, w)
        grown = Roi(y0=y0, y1=y1, x0=x0, x1=x1)
        spacing2 = intensity.spacing[:2]
        for z in range(intensity.depth):
            pairs.append(
                (
                    Slice2D(data=crop_roi(intensity.data[z], grown), spacing=spacing2),
                    Slice2D(data=crop_roi(truth.data[z], grown), spacing=spacing2),
                )
            )
    return pairs
