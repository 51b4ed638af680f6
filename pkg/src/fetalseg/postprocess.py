"""Mask post-processing between the two network stages.

The first-stage output is cleaned by dropping every 3-D connected
component whose physical volume is strictly below 3 cm^3 (26-connectivity
by default), then an in-plane region of interest is taken around what
remains, with a safety margin and padding up to the next multiple of the
network's downsampling factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "MIN_COMPONENT_MM3",
    "connected_components",
    "component_volumes_mm3",
    "filter_small_components",
    "Roi",
    "expand_span",
    "compute_roi",
    "crop_roi",
    "embed_roi",
]

MIN_COMPONENT_MM3 = 3000.0

_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),
    18: ndimage.generate_binary_structure(3, 2),
    26: ndimage.generate_binary_structure(3, 3),
}


def _structure(connectivity: int) -> np.ndarray:
    try:
        return _STRUCTURES[connectivity]
    except KeyError:
        raise ValueError(
            f"connectivity must be one of {sorted(_STRUCTURES)}, got {connectivity}"
        ) from None


def connected_components(mask: np.ndarray, connectivity: int = 26):
    """Label the 3-D components of a boolean mask.  Returns (labels, count)."""
    if mask.ndim != 3:
        raise ValueError("mask must be 3-D (depth, height, width)")
    labels, count = ndimage.label(mask.astype(bool), structure=_structure(connectivity))
    return labels, int(count)


def component_volumes_mm3(
    labels: np.ndarray, count: int, spacing: tuple[float, float, float]
) -> np.ndarray:
    """Physical volume of components 1..count, in mm^3."""
    voxel = float(spacing[0]) * float(spacing[1]) * float(spacing[2])
    sizes = np.bincount(labels.reshape(-1), minlength=count + 1)[1 : count + 1]
    return sizes.astype(np.float64) * voxel


def filter_small_components(
    mask: np.ndarray,
    spacing: tuple[float, float, float],
    min_mm3: float = MIN_COMPONENT_MM3,
    connectivity: int = 26,
) -> np.ndarray:
    """Drop components strictly smaller than ``min_mm3``; keeps ties."""
    labels, count = connected_components(mask, connectivity)
    if count == 0:
        return np.zeros_like(mask, dtype=bool)
    volumes = component_volumes_mm3(labels, count, spacing)
    keep = np.concatenate(([False], volumes >= min_mm3))
    return keep[labels]


@dataclass(frozen=True)
class Roi:
    """In-plane half-open crop window applied to every slice."""

    y0: int
    y1: int
    x0: int
    x1: int

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def width(self) -> int:
        return self.x1 - self.x0


def expand_span(lo: int, hi: int, target: int, size: int) -> tuple[int, int]:
    """Grow [lo, hi) to ``target`` samples, keeping it inside [0, size)."""
    if target > size:
        raise ValueError(f"cannot expand span to {target} inside {size}")
    extra = target - (hi - lo)
    lo -= extra // 2
    hi += extra - extra // 2
    if lo < 0:
        hi -= lo
        lo = 0
    if hi > size:
        lo -= hi - size
        hi = size
    return lo, hi


def compute_roi(
    mask: np.ndarray, margin: int = 4, multiple: int = 8
) -> Roi:
    """Bounding box of the mask across all slices, plus margin, padded so the
    cropped height and width are multiples of ``multiple``."""
    if not mask.any():
        raise ValueError("cannot compute an ROI from an empty mask")
    flat = mask.any(axis=0)
    rows = np.flatnonzero(flat.any(axis=1))
    cols = np.flatnonzero(flat.any(axis=0))
    h, w = flat.shape
    y0 = max(int(rows[0]) - margin, 0)
    y1 = min(int(rows[-1]) + 1 + margin, h)
    x0 = max(int(cols[0]) - margin, 0)
    x1 = min(int(cols[-1]) + 1 + margin, w)
    y0, y1 = expand_span(y0, y1, -(-(y1 - y0) // multiple) * multiple, h)
    x0, x1 = expand_span(x0, x1, -(-(x1 - x0) // multiple) * multiple, w)
    return Roi(y0=y0, y1=y1, x0=x0, x1=x1)


def crop_roi(data: np.ndarray, roi: Roi) -> np.ndarray:
    """Crop (D, H, W) or (H, W) data to the ROI window."""
    if data.ndim == 3:
        return data[:, roi.y0 : roi.y1, roi.x0 : roi.x1]
    if data.ndim == 2:
        return data[roi.y0 : roi.y1, roi.x0 : roi.x1]
    raise ValueError("expected 2-D or 3-D data")


def embed_roi(cropped: np.ndarray, roi: Roi, full_shape, fill=0) -> np.ndarray:
    """Place ROI-sized data back into a full-size array of ``full_shape``."""
    out = np.full(full_shape, fill, dtype=cropped.dtype)
    if cropped.ndim == 3:
        out[:, roi.y0 : roi.y1, roi.x0 : roi.x1] = cropped
    elif cropped.ndim == 2:
        out[roi.y0 : roi.y1, roi.x0 : roi.x1] = cropped
    else:
        raise ValueError("expected 2-D or 3-D data")
    return out
