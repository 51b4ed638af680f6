"""3D intensity/label volumes, bit-exact .mvol file I/O, and slice utilities.

Data layout is row-major within a slice and slice-major along depth, so a
2D slice is a contiguous view of the volume.  Arrays are frozen after
construction; every operation returns new objects, which makes all types
safe to share between threads.

File format ``.mvol``: a 64-byte ASCII header line padded with spaces::

    MVOL1 kind=<f32|u8> w=<int> h=<int> d=<int> sx=<mm> sy=<mm> sz=<mm>

followed by a newline and the raw little-endian payload (float32 for
intensities, uint8 for label codes).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import VolumeFormatError

__all__ = [
    "TISSUE_CLASSES",
    "TissueClass",
    "IntensityVolume",
    "LabelVolume",
    "Slice2D",
    "load_volume",
    "save_volume",
    "get_slice",
    "normalize_slice",
    "write_pgm",
    "write_label_ppm",
    "LABEL_PALETTE",
]

NORMALIZED_MAX = 1023.0
HEADER_BYTES = 64
_MAGIC = "MVOL1"

N_CLASSES = 8


@dataclass(frozen=True)
class TissueClass:
    """One of the eight label codes (background plus seven brain tissues)."""

    code: int
    name: str


TISSUE_CLASSES: tuple[TissueClass, ...] = (
    TissueClass(0, "background"),
    TissueClass(1, "CB"),
    TissueClass(2, "BGT"),
    TissueClass(3, "vCSF"),
    TissueClass(4, "WM"),
    TissueClass(5, "BS"),
    TissueClass(6, "cGM"),
    TissueClass(7, "eCSF"),
)

CLASS_BY_NAME = {tc.name: tc for tc in TISSUE_CLASSES}
CLASS_NAMES = tuple(tc.name for tc in TISSUE_CLASSES)
FOREGROUND_CLASSES = tuple(tc.code for tc in TISSUE_CLASSES if tc.code != 0)

# Fixed palette for label previews, one RGB entry per class code.
LABEL_PALETTE = np.array(
    [
        (0, 0, 0),  # background
        (230, 115, 0),  # CB
        (200, 0, 200),  # BGT
        (0, 200, 220),  # vCSF
        (235, 235, 235),  # WM
        (220, 30, 30),  # BS
        (90, 110, 200),  # cGM
        (240, 220, 0),  # eCSF
    ],
    dtype=np.uint8,
)


def _check_geometry(data: np.ndarray, spacing: tuple[float, float, float]) -> None:
    if data.ndim != 3:
        raise ValueError(f"volume data must be 3D (depth, height, width), got {data.ndim}D")
    if min(data.shape) < 1:
        raise ValueError(f"all dimensions must be positive, got shape {data.shape}")
    if len(spacing) != 3 or any(not (s > 0) for s in spacing):
        raise ValueError(f"spacing components must be strictly positive, got {spacing}")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class IntensityVolume:
    """Dense float32 scalar grid with per-axis voxel spacing in mm.

    ``data`` has shape (depth, height, width) and is made read-only on
    construction.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]  # (sx, sy, sz) mm

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        _check_geometry(data, self.spacing)
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def depth(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, IntensityVolume)
            and self.spacing == other.spacing
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Dense uint8 grid of tissue-class codes, geometry as IntensityVolume."""

    data: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.uint8)
        _check_geometry(data, self.spacing)
        if data.size and data.max() >= N_CLASSES:
            raise ValueError(
                f"label codes must be in 0..{N_CLASSES - 1}, found {int(data.max())}"
            )
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def depth(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, LabelVolume)
            and self.spacing == other.spacing
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class Slice2D:
    """A single 2D slice with in-plane spacing, shape (height, width)."""

    data: np.ndarray
    spacing: tuple[float, float]  # (sx, sy) mm

    def __post_init__(self):
        data = np.ascontiguousarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"slice data must be 2D, got {data.ndim}D")
        if len(self.spacing) != 2 or any(not (s > 0) for s in self.spacing):
            raise ValueError(f"in-plane spacing must be strictly positive, got {self.spacing}")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Slice2D)
            and self.spacing == other.spacing
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


def _format_header(kind: str, vol) -> bytes:
    header = (
        f"{_MAGIC} kind={kind} w={vol.width} h={vol.height} d={vol.depth} "
        f"sx={vol.spacing[0]!r} sy={vol.spacing[1]!r} sz={vol.spacing[2]!r}"
    )
    raw = header.encode("ascii")
    if len(raw) > HEADER_BYTES:
        raise VolumeFormatError(f"header exceeds {HEADER_BYTES} bytes: {header!r}")
    return raw.ljust(HEADER_BYTES) + b"\n"


def save_volume(volume: IntensityVolume | LabelVolume, path: str | Path) -> None:
    """Write a volume to ``path``; byte-deterministic for equal inputs."""
    if isinstance(volume, IntensityVolume):
        kind, payload = "f32", volume.data.astype("<f4", copy=False)
    elif isinstance(volume, LabelVolume):
        kind, payload = "u8", volume.data
    else:
        raise TypeError(f"cannot save object of type {type(volume).__name__}")
    with open(path, "wb") as fh:
        fh.write(_format_header(kind, volume))
        fh.write(payload.tobytes())


def load_volume(path: str | Path) -> IntensityVolume | LabelVolume:
    """Read an ``.mvol`` file; inverse of :func:`save_volume`."""
    with open(path, "rb") as fh:
        raw_header = fh.read(HEADER_BYTES + 1)
        if len(raw_header) != HEADER_BYTES + 1 or raw_header[-1:] != b"\n":
            raise VolumeFormatError(f"{path}: truncated or missing header")
        payload = fh.read()

    fields: dict[str, str] = {}
    tokens = raw_header[:-1].decode("ascii", errors="replace").split()
    if not tokens or tokens[0] != _MAGIC:
        raise VolumeFormatError(f"{path}: bad magic, expected {_MAGIC}")
    for tok in tokens[1:]:
        if "=" not in tok:
            raise VolumeFormatError(f"{path}: malformed header token {tok!r}")
        key, value = tok.split("=", 1)
        fields[key] = value

    try:
        kind = fields["kind"]
        w, h, d = int(fields["w"]), int(fields["h"]), int(fields["d"])
        spacing = (float(fields["sx"]), float(fields["sy"]), float(fields["sz"]))
    except (KeyError, ValueError) as exc:
        raise VolumeFormatError(f"{path}: incomplete or invalid header") from exc
    if min(w, h, d) < 1:
        raise VolumeFormatError(f"{path}: non-positive dimensions {w}x{h}x{d}")

    if kind == "f32":
        dtype, cls = np.dtype("<f4"), IntensityVolume
    elif kind == "u8":
        dtype, cls = np.dtype("u1"), LabelVolume
    else:
        raise VolumeFormatError(f"{path}: unknown payload kind {kind!r}")

    expected = w * h * d * dtype.itemsize
    if len(payload) != expected:
        raise VolumeFormatError(
            f"{path}: payload size mismatch, header declares {expected} bytes, got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(d, h, w)
    try:
        return cls(data=data, spacing=spacing)
    except ValueError as exc:
        raise VolumeFormatError(f"{path}: {exc}") from exc


def get_slice(volume: IntensityVolume | LabelVolume, index: int) -> Slice2D:
    """Extract the 2D slice at depth ``index`` (a contiguous view)."""
    if not 0 <= index < volume.depth:
        raise IndexError(f"slice index {index} out of range [0, {volume.depth})")
    return Slice2D(data=volume.data[index], spacing=volume.spacing[:2])


def normalize_slice(slc: Slice2D) -> Slice2D:
    """Affinely map slice intensities onto [0, 1023].

    Constant slices map to all zeros.  Arithmetic runs in float64 so the
    result is invariant (to within one float32 ulp) under positive affine
    transforms of the input.
    """
    values = slc.data.astype(np.float64)
    lo = values.min()
    hi = values.max()
    if hi == lo:
        out = np.zeros_like(values)
    else:
        out = (values - lo) * (NORMALIZED_MAX / (hi - lo))
    return Slice2D(data=out.astype(np.float32), spacing=slc.spacing)


def write_pgm(data: np.ndarray, path: str | Path) -> None:
    """Write a 2D array as binary 8-bit PGM, rescaled to the 0..255 range."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("PGM export expects a 2D array")
    lo, hi = arr.min(), arr.max()
    if hi == lo:
        gray = np.zeros(arr.shape, dtype=np.uint8)
    else:
        gray = np.clip((arr - lo) * (255.0 / (hi - lo)) + 0.5, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def write_label_ppm(labels: np.ndarray, path: str | Path) -> None:
    """Write a 2D label array as binary PPM using the fixed 8-entry palette."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ValueError("PPM export expects a 2D array")
    if arr.size and (arr.min() < 0 or arr.max() >= N_CLASSES):
        raise ValueError("label codes out of palette range")
    rgb = LABEL_PALETTE[arr.astype(np.intp)]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def ensure_dir(path: str | Path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
