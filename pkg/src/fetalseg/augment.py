"""Training-time data augmentation: flips, rotations, and synthetic
intensity-inhomogeneity shading (IIA).

The shading pattern multiplies a slice by the quadratic field

    M(x, y) = (x' + x0)^2 + (y' + y0)^2

where (x', y') is (x, y) rotated about the image center, the grids run
0..W-1 / 0..H-1 from the corner, and the offsets are drawn in pixels of a
512-wide reference grid, then rescaled linearly to the working resolution.
The shaded slice is renormalized to [0, 1023], so only the shape of the
field matters, not its scale.

Every random operation takes an explicit generator and returns a draw
record, so any augmented output can be reproduced bit-exactly from the
logged draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import StreamKey
from .volume import Slice2D, normalize_slice

__all__ = [
    "REFERENCE_SIZE",
    "MultiplierField",
    "IIAParams",
    "AugmentConfig",
    "ARM_NAMES",
    "make_multiplier_field",
    "apply_iia",
    "random_flip",
    "random_rotate",
    "flip_slices",
    "rotate_slices",
    "compose_batch",
    "config_for_arm",
]

# Width of the acquisition matrix the published offset ranges refer to.
REFERENCE_SIZE = 512


@dataclass(frozen=True)
class MultiplierField:
    """Quadratic shading pattern, a deterministic function of its parameters.

    ``x0``/``y0`` are in pixels of the current grid; the ``*_ref`` values
    are the same offsets expressed on the 512-wide reference grid.
    """

    width: int
    height: int
    x0: float
    y0: float
    x0_ref: float
    y0_ref: float
    theta: float  # degrees in [0, 360)
    values: np.ndarray  # float64, shape (height, width), all >= 0


@dataclass(frozen=True)
class IIAParams:
    """Offset/rotation ranges for the shading pattern and the per-batch
    proportion of slices that receive it."""

    x0_range: tuple[float, float] = (43.0, 187.0)
    y0_range: tuple[float, float] = (-371.0, 170.0)
    theta_range: tuple[float, float] = (0.0, 360.0)
    proportion: float = 1.0

    def __post_init__(self):
        for name, (lo, hi) in (
            ("x0_range", self.x0_range),
            ("y0_range", self.y0_range),
            ("theta_range", self.theta_range),
        ):
            if not lo <= hi:
                raise ValueError(f"{name} is empty: {(lo, hi)}")
        if not 0.0 <= self.proportion <= 1.0:
            raise ValueError(f"proportion must be in [0, 1], got {self.proportion}")


@dataclass(frozen=True)
class AugmentConfig:
    """Which augmentations run and with what parameters.

    ``rotation_range`` of None disables rotation; ``iia`` of None disables
    shading.
    """

    flip_prob: float = 0.5
    rotation_range: tuple[float, float] | None = (0.0, 360.0)
    iia: IIAParams | None = IIAParams()

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob must be in [0, 1], got {self.flip_prob}")


ARM_NAMES = ("none", "flip", "flip+rot", "flip+rot+IIA")


def config_for_arm(arm: str, iia: IIAParams | None = None) -> AugmentConfig:
    """Map an ablation arm name onto an AugmentConfig."""
    iia = iia if iia is not None else IIAParams()
    if arm == "none":
        return AugmentConfig(flip_prob=0.0, rotation_range=None, iia=None)
    if arm == "flip":
        return AugmentConfig(flip_prob=0.5, rotation_range=None, iia=None)
    if arm == "flip+rot":
        return AugmentConfig(flip_prob=0.5, rotation_range=(0.0, 360.0), iia=None)
    if arm == "flip+rot+IIA":
        return AugmentConfig(flip_prob=0.5, rotation_range=(0.0, 360.0), iia=iia)
    raise ValueError(f"unknown ablation arm {arm!r}, expected one of {ARM_NAMES}")


def make_multiplier_field(
    width: int, height: int, x0: float, y0: float, theta: float
) -> MultiplierField:
    """Evaluate the closed-form shading pattern on a width x height grid.

    No normalization is applied here; values grow quadratically with the
    distance from the (rotated, offset) origin.
    """
    if width < 1 or height < 1:
        raise ValueError(f"field dimensions must be >= 1, got {width}x{height}")
    cos_t = math.cos(math.radians(theta))
    sin_t = math.sin(math.radians(theta))
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    xs = np.arange(width, dtype=np.float64)[None, :] - cx
    ys = np.arange(height, dtype=np.float64)[:, None] - cy
    xr = cx + (cos_t * xs - sin_t * ys)
    yr = cy + (sin_t * xs + cos_t * ys)
    # plain multiplies, not **2: IEEE rounds a*a identically in vectorized
    # and scalar code, so the field is bit-reproducible against oracles
    tx = xr + float(x0)
    ty = yr + float(y0)
    values = tx * tx + ty * ty
    return MultiplierField(
        width=width,
        height=height,
        x0=float(x0),
        y0=float(y0),
        x0_ref=float(x0) * REFERENCE_SIZE / width,
        y0_ref=float(y0) * REFERENCE_SIZE / height,
        theta=float(theta),
        values=values,
    )


@dataclass(frozen=True)
class IIADraw:
    """Random values consumed by one apply_iia call (reference-grid offsets,
    their rescaled pixel values, and the pattern rotation)."""

    x0_ref: float
    y0_ref: float
    x0: float
    y0: float
    theta: float


def apply_iia(
    slc: Slice2D, params: IIAParams, rng: np.random.Generator
) -> tuple[Slice2D, IIADraw]:
    """Multiply a slice by a randomly parameterized shading field and
    renormalize to [0, 1023].

    Draw order: x0, y0, theta (uniform over their ranges).  Offsets are
    drawn on the reference grid and rescaled by width/512 and height/512.
    """
    x0_ref = rng.uniform(*params.x0_range)
    y0_ref = rng.uniform(*params.y0_range)
    theta = rng.uniform(*params.theta_range)
    x0 = x0_ref * slc.width / REFERENCE_SIZE
    y0 = y0_ref * slc.height / REFERENCE_SIZE
    field = make_multiplier_field(slc.width, slc.height, x0, y0, theta)
    shaded = Slice2D(
        data=slc.data.astype(np.float64) * field.values, spacing=slc.spacing
    )
    draw = IIADraw(x0_ref=x0_ref, y0_ref=y0_ref, x0=x0, y0=y0, theta=theta)
    return normalize_slice(shaded), draw


def flip_slices(
    slc: Slice2D, labels: Slice2D, flip_h: bool, flip_v: bool
) -> tuple[Slice2D, Slice2D]:
    """Deterministically flip an intensity/label pair along the given axes."""
    if slc.data.shape != labels.data.shape:
        raise ValueError(
            f"intensity and label geometry differ: {slc.data.shape} vs {labels.data.shape}"
        )
    img, lab = slc.data, labels.data
    if flip_h:
        img, lab = img[:, ::-1], lab[:, ::-1]
    if flip_v:
        img, lab = img[::-1, :], lab[::-1, :]
    return (
        Slice2D(data=img.copy(), spacing=slc.spacing),
        Slice2D(data=lab.copy(), spacing=labels.spacing),
    )


def random_flip(
    slc: Slice2D,
    labels: Slice2D,
    rng: np.random.Generator,
    prob: float = 0.5,
) -> tuple[Slice2D, Slice2D, tuple[bool, bool]]:
    """Flip each axis independently with probability ``prob``.

    Draw order: horizontal, then vertical.  Returns the flipped pair and
    the (flip_h, flip_v) decisions.
    """
    flip_h = bool(rng.random() < prob)
    flip_v = bool(rng.random() < prob)
    out_img, out_lab = flip_slices(slc, labels, flip_h, flip_v)
    return out_img, out_lab, (flip_h, flip_v)


def _rotation_sources(
    width: int, height: int, angle_deg: float
) -> tuple[np.ndarray, np.ndarray]:
    """Source coordinates of the inverse mapping for a rotation about the
    image center."""
    cos_t = math.cos(math.radians(angle_deg))
    sin_t = math.sin(math.radians(angle_deg))
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    dx = np.arange(width, dtype=np.float64)[None, :] - cx
    dy = np.arange(height, dtype=np.float64)[:, None] - cy
    # inverse rotation: rotate output coordinates by -angle
    xs = cx + (cos_t * dx + sin_t * dy)
    ys = cy + (-sin_t * dx + cos_t * dy)
    return xs, ys


def rotate_slices(
    slc: Slice2D, labels: Slice2D, angle_deg: float
) -> tuple[Slice2D, Slice2D]:
    """Rotate an intensity/label pair by the same angle about the center.

    Intensities are interpolated bilinearly, labels nearest-neighbor;
    samples falling outside the grid become 0 / background.
    """
    if slc.data.shape != labels.data.shape:
        raise ValueError(
            f"intensity and label geometry differ: {slc.data.shape} vs {labels.data.shape}"
        )
    h, w = slc.data.shape
    xs, ys = _rotation_sources(w, h, angle_deg)

    # bilinear with zero fill for the intensity slice
    img = slc.data.astype(np.float64)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    fx = xs - x0
    fy = ys - y0
    out = np.zeros((h, w), dtype=np.float64)
    for oy, ox, weight in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yy = y0 + oy
        xx = x0 + ox
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        out[valid] += weight[valid] * img[yy[valid], xx[valid]]

    # nearest neighbor with background fill for labels
    xn = np.rint(xs).astype(np.intp)
    yn = np.rint(ys).astype(np.intp)
    valid_n = (yn >= 0) & (yn < h) & (xn >= 0) & (xn < w)
    lab = np.zeros((h, w), dtype=labels.data.dtype)
    lab[valid_n] = labels.data[yn[valid_n], xn[valid_n]]

    return (
        Slice2D(data=out.astype(slc.data.dtype, copy=False), spacing=slc.spacing),
        Slice2D(data=lab, spacing=labels.spacing),
    )


def random_rotate(
    slc: Slice2D,
    labels: Slice2D,
    rng: np.random.Generator,
    angle_range: tuple[float, float] = (0.0, 360.0),
) -> tuple[Slice2D, Slice2D, float]:
    """Rotate both slices by one angle drawn uniformly from ``angle_range``."""
    angle = float(rng.uniform(*angle_range))
    out_img, out_lab = rotate_slices(slc, labels, angle)
    return out_img, out_lab, angle


@dataclass(frozen=True)
class SliceDraw:
    """Everything that was drawn for one slice of a composed batch."""

    index: int
    flip_h: bool
    flip_v: bool
    angle: float | None
    iia: IIADraw | None


def compose_batch(
    pairs: list[tuple[Slice2D, Slice2D]],
    config: AugmentConfig,
    key: StreamKey,
) -> tuple[list[tuple[Slice2D, Slice2D]], list[SliceDraw]]:
    """Augment a batch of (intensity, label) slice pairs.

    Order per slice: flip, rotate, IIA, final renormalization to [0, 1023].
    IIA lands on exactly round(proportion * batch_size) slices, chosen
    without replacement from a dedicated selection stream.  Flip/rotate
    draws come from per-slice substreams, so they are identical whether or
    not IIA is configured.
    """
    if not pairs:
        raise ValueError("compose_batch requires a non-empty batch")
    n = len(pairs)
    iia_indices: set[int] = set()
    if config.iia is not None:
        k = int(math.floor(config.iia.proportion * n + 0.5))
        select_rng = key.child("select").generator()
        iia_indices = set(select_rng.choice(n, size=k, replace=False).tolist())

    out: list[tuple[Slice2D, Slice2D]] = []
    draws: list[SliceDraw] = []
    for i, (img, lab) in enumerate(pairs):
        flip_h = flip_v = False
        angle: float | None = None
        iia_draw: IIADraw | None = None
        if config.flip_prob > 0.0:
            img, lab, (flip_h, flip_v) = random_flip(
                img, lab, key.child("flip", i).generator(), config.flip_prob
            )
        if config.rotation_range is not None:
            img, lab, angle = random_rotate(
                img, lab, key.child("rotate", i).generator(), config.rotation_range
            )
        if i in iia_indices:
            assert config.iia is not None
            img, iia_draw = apply_iia(img, config.iia, key.child("iia", i).generator())
        img = normalize_slice(img)
        out.append((img, lab))
        draws.append(
            SliceDraw(index=i, flip_h=flip_h, flip_v=flip_v, angle=angle, iia=iia_draw)
        )
    return out, draws
