"""Deterministic synthetic fetal-like volumes with seven-class ground truth.

Each case is a jittered "onion" of nested elliptical structures: an eCSF
rim, a wavy cGM ribbon, a WM interior carrying two vCSF blobs, a central
BGT blob, an inferior BS stalk and an inferior-posterior CB lobe.  The
brain sits in a dark air gap surrounded by a textured maternal-body
region, so the first-stage network has something nontrivial to separate.
Class intensity means are ordered like T2 contrast (CSF bright, WM mid,
cGM darker); vCSF and eCSF are deliberately close in intensity so that
shading artifacts force shape/context cues.

All randomness derives from (seed, case index) counter-based substreams:
generating cases in parallel or one at a time yields identical output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .augment import make_multiplier_field
from .postprocess import MIN_COMPONENT_MM3
from .rng import substream
from .volume import FOREGROUND_CLASSES, IntensityVolume, LabelVolume

__all__ = [
    "PoseJitter",
    "ArtifactConfig",
    "PhantomConfig",
    "InjectedArtifact",
    "PhantomCase",
    "generate_case",
    "generate_dataset",
    "inject_test_artifact",
    "ManifestEntry",
    "write_manifest",
    "read_manifest",
]

# (mean, noise std) per class code in arbitrary T2-like units.
DEFAULT_CLASS_INTENSITY: dict[int, tuple[float, float]] = {
    0: (300.0, 40.0),  # maternal body
    1: (520.0, 35.0),  # CB
    2: (600.0, 35.0),  # BGT
    3: (980.0, 35.0),  # vCSF
    4: (700.0, 35.0),  # WM
    5: (560.0, 35.0),  # BS
    6: (420.0, 35.0),  # cGM
    7: (940.0, 35.0),  # eCSF
}

# Test-time artifact offsets live on the opposite side of the reference grid
# from the training IIA ranges ([43, 187] and [-371, 170]), so the
# evaluation never sees a field the augmentation could have produced.
TEST_X0_RANGE = (-230.0, -60.0)
TEST_Y0_RANGE = (220.0, 420.0)


@dataclass(frozen=True)
class PoseJitter:
    rotation_deg: float = 20.0
    translation_frac: float = 0.05


@dataclass(frozen=True)
class ArtifactConfig:
    """Test-set shading injection: blend strength, fraction of slices hit,
    and reference-grid offset ranges (disjoint from the training ranges)."""

    amplitude: float = 0.85
    fraction: float = 0.5
    x0_range: tuple[float, float] = TEST_X0_RANGE
    y0_range: tuple[float, float] = TEST_Y0_RANGE
    theta_range: tuple[float, float] = (0.0, 360.0)

    def __post_init__(self):
        if not 0.0 <= self.amplitude <= 1.0:
            raise ValueError(f"artifact amplitude must be in [0, 1], got {self.amplitude}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError(f"artifact fraction must be in [0, 1], got {self.fraction}")


@dataclass(frozen=True)
class PhantomConfig:
    seed: int = 0
    image_size: int = 64
    slices_per_volume: int = 8
    n_volumes: int = 12
    spacing: tuple[float, float, float] = (0.7, 0.7, 1.25)
    class_intensity: dict[int, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_CLASS_INTENSITY)
    )
    pose_jitter: PoseJitter = PoseJitter()
    background_texture_amplitude: float = 120.0
    air_intensity: float = 25.0
    artifact: ArtifactConfig = ArtifactConfig()

    def __post_init__(self):
        if self.n_volumes < 1:
            raise ValueError("n_volumes must be >= 1")
        if self.image_size < 16:
            raise ValueError("image_size must be >= 16")
        if self.slices_per_volume < 1:
            raise ValueError("slices_per_volume must be >= 1")
        for code, (_, std) in self.class_intensity.items():
            if std < 0:
                raise ValueError(f"noise std for class {code} must be >= 0")


@dataclass(frozen=True)
class InjectedArtifact:
    """Shading parameters applied to one test slice (pixel-unit offsets)."""

    slice_index: int
    x0: float
    y0: float
    theta: float
    amplitude: float


@dataclass(frozen=True)
class PhantomCase:
    case_id: int
    intensity: IntensityVolume
    truth: LabelVolume
    has_injected_artifact: tuple[bool, ...]
    artifacts: tuple[InjectedArtifact, ...] = ()


# Normalized elliptical-radius layout: interior structures are expressed in
# units of the per-slice brain semi-axes, so they exist in every slice.
_RHO_ECSF = 0.88  # eCSF rim: rho in (0.88, 1]
_RHO_CGM_BASE = 0.74  # wavy WM/cGM boundary around this radius
_BGT_CENTER, _BGT_SEMI = (0.0, 0.05), (0.30, 0.22)
_VCSF_SEMI = (0.15, 0.24)
_BS_HALF_WIDTH, _BS_V_RANGE = 0.16, (0.16, 0.64)
_CB_CENTER, _CB_SEMI = (0.28, 0.58), (0.30, 0.22)


def _ellipse(un, vn, center, semi):
    return ((un - center[0]) / semi[0]) ** 2 + ((vn - center[1]) / semi[1]) ** 2 <= 1.0


def generate_case(config: PhantomConfig, index: int) -> PhantomCase:
    """Generate a single phantom case from its (seed, index) substream."""
    rng = substream(config.seed, "phantom", index)
    size = config.image_size
    depth = config.slices_per_volume

    # per-case pose and shape draws (order is part of the determinism contract)
    pose_rot = rng.uniform(-config.pose_jitter.rotation_deg, config.pose_jitter.rotation_deg)
    tx = rng.uniform(-1.0, 1.0) * config.pose_jitter.translation_frac * size
    ty = rng.uniform(-1.0, 1.0) * config.pose_jitter.translation_frac * size
    scale_a = rng.uniform(0.92, 1.08)
    scale_b = rng.uniform(0.92, 1.08)
    wave_k = int(rng.integers(5, 9))
    wave_phase = rng.uniform(0.0, 2.0 * math.pi)
    wave_amp = rng.uniform(0.03, 0.06)
    mean_jitter = rng.uniform(0.97, 1.03, size=8)
    gain_x = rng.uniform(-0.08, 0.08)
    gain_y = rng.uniform(-0.08, 0.08)
    tex_freq = rng.uniform(0.5, 2.0, size=(3, 2))
    tex_phase = rng.uniform(0.0, 2.0 * math.pi, size=3)
    struct_jitter = rng.uniform(-0.02, 0.02, size=(5, 2))  # BGT, vCSF-L, vCSF-R, BS, CB

    a0 = 0.36 * size * scale_a
    b0 = 0.30 * size * scale_b
    cx = (size - 1) / 2.0 + tx
    cy = (size - 1) / 2.0 + ty
    cos_p = math.cos(math.radians(pose_rot))
    sin_p = math.sin(math.radians(pose_rot))

    xs = np.arange(size, dtype=np.float64)[None, :]
    ys = np.arange(size, dtype=np.float64)[:, None]
    u = cos_p * (xs - cx) + sin_p * (ys - cy)
    v = -sin_p * (xs - cx) + cos_p * (ys - cy)

    labels = np.zeros((depth, size, size), dtype=np.uint8)
    half_span = (depth - 1) / 2.0 if depth > 1 else 1.0
    for z in range(depth):
        zeta = (z - (depth - 1) / 2.0) / half_span
        taper = math.sqrt(1.0 - 0.3 * zeta * zeta)
        a = a0 * taper
        b = b0 * taper
        un = u / a
        vn = v / b
        rho = np.sqrt(un * un + vn * vn)
        phi = np.arctan2(vn, un)
        rho_cgm = _RHO_CGM_BASE + wave_amp * np.sin(wave_k * phi + wave_phase)

        lab = np.zeros((size, size), dtype=np.uint8)
        inside = rho <= 1.0
        lab[inside & (rho > _RHO_ECSF)] = 7
        lab[inside & (rho <= _RHO_ECSF) & (rho > rho_cgm)] = 6
        wm_zone = rho <= rho_cgm
        lab[wm_zone] = 4
        jb, jl, jr, js, jc = struct_jitter
        bgt = _ellipse(un, vn, (_BGT_CENTER[0] + jb[0], _BGT_CENTER[1] + jb[1]), _BGT_SEMI)
        lab[wm_zone & bgt] = 2
        vcsf_l = _ellipse(un, vn, (-0.38 + jl[0], -0.18 + jl[1]), _VCSF_SEMI)
        vcsf_r = _ellipse(un, vn, (0.38 + jr[0], -0.18 + jr[1]), _VCSF_SEMI)
        lab[wm_zone & (vcsf_l | vcsf_r)] = 3
        bs = (np.abs(un - js[0]) <= _BS_HALF_WIDTH) & (
            (vn - js[1] >= _BS_V_RANGE[0]) & (vn - js[1] <= _BS_V_RANGE[1])
        )
        lab[wm_zone & bs] = 5
        cb = _ellipse(un, vn, (_CB_CENTER[0] + jc[0], _CB_CENTER[1] + jc[1]), _CB_SEMI)
        lab[wm_zone & cb] = 1
        labels[z] = lab

    missing = [c for c in FOREGROUND_CLASSES if not (labels == c).any()]
    if missing:
        raise ValueError(
            f"case {index}: geometry leaves classes {missing} empty; adjust config"
        )

    # intensity: class means, a smooth in-plane gain, body texture, then noise
    means = np.array(
        [config.class_intensity[c][0] * mean_jitter[c] for c in range(8)], dtype=np.float64
    )
    stds = np.array([config.class_intensity[c][1] for c in range(8)], dtype=np.float64)
    gain = 1.0 + gain_x * (xs - cx) / size + gain_y * (ys - cy) / size

    tex = np.zeros((size, size), dtype=np.float64)
    for (fx, fy), ph, amp in zip(tex_freq, tex_phase, (0.5, 0.3, 0.2)):
        tex += (
            config.background_texture_amplitude
            * amp
            * np.sin(2.0 * math.pi * (fx * xs / size + fy * ys / size) + ph)
        )

    intensity = np.empty((depth, size, size), dtype=np.float64)
    for z in range(depth):
        zeta = (z - (depth - 1) / 2.0) / half_span
        taper = math.sqrt(1.0 - 0.3 * zeta * zeta)
        rho = np.sqrt((u / (a0 * taper)) ** 2 + (v / (b0 * taper)) ** 2)
        img = means[labels[z]]
        air = (rho > 1.0) & (rho <= 1.12)
        body = rho > 1.12
        img[air] = config.air_intensity
        img[body] = means[0] + tex[body]
        intensity[z] = img * gain

    noise = rng.normal(0.0, 1.0, size=(depth, size, size))
    intensity += noise * stds[labels]
    np.clip(intensity, 0.0, None, out=intensity)

    case = PhantomCase(
        case_id=index,
        intensity=IntensityVolume(data=intensity.astype(np.float32), spacing=config.spacing),
        truth=LabelVolume(data=labels, spacing=config.spacing),
        has_injected_artifact=tuple([False] * depth),
    )
    _check_icv_size(case, config)
    return case


def _check_icv_size(case: PhantomCase, config: PhantomConfig) -> None:
    voxel_mm3 = config.spacing[0] * config.spacing[1] * config.spacing[2]
    icv_mm3 = int((case.truth.data > 0).sum()) * voxel_mm3
    if icv_mm3 <= MIN_COMPONENT_MM3:
        raise ValueError(
            f"case {case.case_id}: ICV volume {icv_mm3:.1f} mm^3 does not exceed the "
            f"{MIN_COMPONENT_MM3:.0f} mm^3 component filter; enlarge image_size or spacing"
        )


def generate_dataset(config: PhantomConfig) -> list[PhantomCase]:
    """Generate all cases; deterministic in config.seed."""
    return [generate_case(config, i) for i in range(config.n_volumes)]


def inject_test_artifact(
    case: PhantomCase,
    rng: np.random.Generator,
    artifact: ArtifactConfig | None = None,
) -> PhantomCase:
    """Apply smooth multiplicative shading to a random subset of slices.

    The shading field is the same quadratic pattern used by the training
    augmentation, but with offsets drawn from disjoint ranges, blended as
    (1 - amplitude) + amplitude * field/max(field).  Each shaded slice is
    rescaled to keep its original maximum; labels are untouched.  Draw
    order: slice selection, then (x0, y0, theta) per selected slice.
    """
    cfg = artifact if artifact is not None else ArtifactConfig()
    depth = case.intensity.depth
    width, height = case.intensity.width, case.intensity.height
    k = int(math.floor(cfg.fraction * depth + 0.5))
    chosen = sorted(rng.choice(depth, size=k, replace=False).tolist())

    data = case.intensity.data.astype(np.float64)
    flags = list(case.has_injected_artifact)
    records: list[InjectedArtifact] = []
    from .augment import REFERENCE_SIZE  # local to avoid polluting module API

    for z in chosen:
        x0 = rng.uniform(*cfg.x0_range) * width / REFERENCE_SIZE
        y0 = rng.uniform(*cfg.y0_range) * height / REFERENCE_SIZE
        theta = rng.uniform(*cfg.theta_range)
        fld = make_multiplier_field(width, height, x0, y0, theta).values
        shade = (1.0 - cfg.amplitude) + cfg.amplitude * (fld / fld.max())
        shaded = data[z] * shade
        peak = shaded.max()
        if peak > 0:
            shaded *= data[z].max() / peak
        data[z] = shaded
        flags[z] = True
        records.append(
            InjectedArtifact(slice_index=z, x0=x0, y0=y0, theta=theta, amplitude=cfg.amplitude)
        )

    return PhantomCase(
        case_id=case.case_id,
        intensity=IntensityVolume(data=data.astype(np.float32), spacing=case.intensity.spacing),
        truth=case.truth,
        has_injected_artifact=tuple(flags),
        artifacts=case.artifacts + tuple(records),
    )


@dataclass(frozen=True)
class ManifestEntry:
    case_id: str
    split: str  # "train" | "test"
    intensity_file: str
    labels_file: str
    artifact_flags: tuple[bool, ...]


def write_manifest(path, seed: int, entries: list[ManifestEntry]) -> None:
    lines = [f"seed {seed}"]
    for e in entries:
        flags = "".join("1" if f else "0" for f in e.artifact_flags)
        lines.append(f"case {e.case_id} {e.split} {e.intensity_file} {e.labels_file} {flags}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path) -> tuple[int, list[ManifestEntry]]:
    seed = None
    entries: list[ManifestEntry] = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "seed":
                seed = int(parts[1])
            elif parts[0] == "case":
                _, case_id, split, img, lab, flags = parts
                entries.append(
                    ManifestEntry(
                        case_id=case_id,
                        split=split,
                        intensity_file=img,
                        labels_file=lab,
                        artifact_flags=tuple(c == "1" for c in flags),
                    )
                )
            else:
                raise ValueError(f"unrecognized manifest line: {line!r}")
    if seed is None:
        raise ValueError(f"{path}: manifest missing seed line")
    return seed, entries
