"""Experiment configuration: one flat key = value text file drives every
command.

Unknown keys, malformed values, and violated invariants all raise
ConfigError (CLI exit code 2).  Comments start with '#'; blank lines are
ignored; later duplicates of a key are rejected rather than silently
overriding.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .augment import AugmentConfig, IIAParams
from .errors import ConfigError
from .phantom import ArtifactConfig, PhantomConfig, PoseJitter
from .nnet import NadamConfig, UNetConfig
from .rng import substream
from .volume import N_CLASSES

__all__ = ["ExperimentConfig", "parse_config_text", "load_config", "CONFIG_KEYS"]


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 42
    image_size: int = 64
    slices_per_volume: int = 8
    n_volumes: int = 12
    spacing_x: float = 0.7
    spacing_y: float = 0.7
    spacing_z: float = 1.25
    train_fraction: float = 0.5
    test_fraction: float = 0.5
    depth: int = 3
    base_channels: int = 16
    icv_epochs: int = 24
    tissue_epochs: int = 150
    icv_batch: int = 12
    tissue_batch: int = 18
    lr: float = 1e-4
    flip_prob: float = 0.5
    iia_x0_lo: float = 43.0
    iia_x0_hi: float = 187.0
    iia_y0_lo: float = -371.0
    iia_y0_hi: float = 170.0
    iia_theta_lo: float = 0.0
    iia_theta_hi: float = 360.0
    artifact_amplitude: float = 0.85
    artifact_fraction: float = 0.5
    min_component_mm3: float = 3000.0
    connectivity: int = 26
    roi_margin: int = 4
    iia_proportion: float = 0.5
    proportions: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    outdir: str = "out"

    def __post_init__(self):
        if abs(self.train_fraction + self.test_fraction - 1.0) > 1e-9:
            raise ConfigError(
                f"split fractions must sum to 1, got "
                f"{self.train_fraction} + {self.test_fraction}"
            )
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError(
                f"split leaves {self.n_train} train / {self.n_test} test volumes; "
                "both must be >= 1"
            )
        if self.image_size % (2**self.depth):
            raise ConfigError(
                f"image_size {self.image_size} must be divisible by 2^depth = {2**self.depth}"
            )
        if self.icv_batch < 1 or self.tissue_batch < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.icv_epochs < 1 or self.tissue_epochs < 1:
            raise ConfigError("epoch counts must be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.connectivity not in (6, 18, 26):
            raise ConfigError(f"connectivity must be 6, 18, or 26, got {self.connectivity}")
        if not 0.0 <= self.iia_proportion <= 1.0:
            raise ConfigError(
                f"iia_proportion must lie in [0, 1], got {self.iia_proportion}"
            )
        if any(not 0.0 <= p <= 1.0 for p in self.proportions):
            raise ConfigError(f"proportions must lie in [0, 1], got {self.proportions}")
        if not self.proportions:
            raise ConfigError("proportions must not be empty")

    # ---- derived quantities ----

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.spacing_x, self.spacing_y, self.spacing_z)

    @property
    def n_train(self) -> int:
        return int(round(self.train_fraction * self.n_volumes))

    @property
    def n_test(self) -> int:
        return self.n_volumes - self.n_train

    def split_volumes(self) -> tuple[list[int], list[int]]:
        """Volume-level train/test split from the ("split",) substream."""
        perm = substream(self.seed, "split").permutation(self.n_volumes)
        train = sorted(int(i) for i in perm[: self.n_train])
        test = sorted(int(i) for i in perm[self.n_train :])
        return train, test

    def phantom_config(self) -> PhantomConfig:
        return PhantomConfig(
            seed=self.seed,
            image_size=self.image_size,
            slices_per_volume=self.slices_per_volume,
            n_volumes=self.n_volumes,
            spacing=self.spacing,
            pose_jitter=PoseJitter(),
            artifact=ArtifactConfig(
                amplitude=self.artifact_amplitude, fraction=self.artifact_fraction
            ),
        )

    def unet_config(self, stage: str) -> UNetConfig:
        if stage == "icv":
            n_classes = 2
        elif stage == "tissue":
            n_classes = N_CLASSES
        else:
            raise ValueError(f"stage must be 'icv' or 'tissue', got {stage!r}")
        return UNetConfig(
            in_channels=1,
            n_classes=n_classes,
            depth=self.depth,
            base_channels=self.base_channels,
        )

    def iia_params(self, proportion: float = 1.0) -> IIAParams:
        return IIAParams(
            x0_range=(self.iia_x0_lo, self.iia_x0_hi),
            y0_range=(self.iia_y0_lo, self.iia_y0_hi),
            theta_range=(self.iia_theta_lo, self.iia_theta_hi),
            proportion=proportion,
        )

    def augment_for_arm(self, arm: str, proportion: float = 1.0) -> AugmentConfig:
        if arm == "none":
            return AugmentConfig(flip_prob=0.0, rotation_range=None, iia=None)
        if arm == "flip":
            return AugmentConfig(flip_prob=self.flip_prob, rotation_range=None, iia=None)
        if arm == "flip+rot":
            return AugmentConfig(
                flip_prob=self.flip_prob, rotation_range=(0.0, 360.0), iia=None
            )
        if arm == "flip+rot+IIA":
            return AugmentConfig(
                flip_prob=self.flip_prob,
                rotation_range=(0.0, 360.0),
                iia=self.iia_params(proportion),
            )
        raise ConfigError(f"unknown ablation arm {arm!r}")

    def optimizer(self) -> NadamConfig:
        return NadamConfig(lr=self.lr)


def _cast_value(key: str, raw: str):
    caster = _CASTERS[key]
    try:
        return caster(raw)
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"config key {key}: cannot parse {raw!r} ({exc})") from None


def _proportions(raw: str) -> tuple[float, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    return tuple(float(p) for p in parts)


_CASTERS = {
    "seed": int,
    "image_size": int,
    "slices_per_volume": int,
    "n_volumes": int,
    "spacing_x": float,
    "spacing_y": float,
    "spacing_z": float,
    "train_fraction": float,
    "test_fraction": float,
    "depth": int,
    "base_channels": int,
    "icv_epochs": int,
    "tissue_epochs": int,
    "icv_batch": int,
    "tissue_batch": int,
    "lr": float,
    "flip_prob": float,
    "iia_x0_lo": float,
    "iia_x0_hi": float,
    "iia_y0_lo": float,
    "iia_y0_hi": float,
    "iia_theta_lo": float,
    "iia_theta_hi": float,
    "artifact_amplitude": float,
    "artifact_fraction": float,
    "min_component_mm3": float,
    "connectivity": int,
    "roi_margin": int,
    "iia_proportion": float,
    "proportions": _proportions,
    "outdir": str,
}

CONFIG_KEYS = tuple(sorted(_CASTERS))


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _CASTERS:
            raise ConfigError(
                f"{source}:{lineno}: unknown config key {key!r} "
                f"(valid keys: {', '.join(CONFIG_KEYS)})"
            )
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate config key {key!r}")
        values[key] = _cast_value(key, raw)
    return values


def load_config(
    path: str | None = None,
    seed: int | None = None,
    outdir: str | None = None,
) -> ExperimentConfig:
    """Build the experiment config from an optional file plus CLI overrides."""
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        values = parse_config_text(p.read_text(), source=str(path))
    if seed is not None:
        values["seed"] = int(seed)
    if outdir is not None:
        values["outdir"] = str(outdir)
    try:
        return ExperimentConfig(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
