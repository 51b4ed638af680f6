"""Phantom generator: determinism, anatomy guarantees, artifact injection."""

import numpy as np
import pytest

from fetalseg.augment import REFERENCE_SIZE, make_multiplier_field
from fetalseg.phantom import (
    TEST_X0_RANGE,
    TEST_Y0_RANGE,
    ArtifactConfig,
    ManifestEntry,
    PhantomConfig,
    generate_case,
    generate_dataset,
    inject_test_artifact,
    read_manifest,
    write_manifest,
)
from fetalseg.postprocess import MIN_COMPONENT_MM3, connected_components
from fetalseg.rng import substream
from fetalseg.volume import FOREGROUND_CLASSES, IntensityVolume


@pytest.fixture(scope="module")
def case():
    return generate_case(PhantomConfig(seed=42), 0)


class TestGenerateCase:
    def test_deterministic(self, case):
        again = generate_case(PhantomConfig(seed=42), 0)
        assert again.intensity == case.intensity
        assert again.truth == case.truth

    def test_cases_differ_by_index(self, case):
        other = generate_case(PhantomConfig(seed=42), 1)
        assert not np.array_equal(other.truth.data, case.truth.data)

    def test_cases_differ_by_seed(self, case):
        other = generate_case(PhantomConfig(seed=43), 0)
        assert not np.array_equal(other.intensity.data, case.intensity.data)

    def test_geometry(self, case):
        cfg = PhantomConfig(seed=42)
        assert case.intensity.data.shape == (
            cfg.slices_per_volume,
            cfg.image_size,
            cfg.image_size,
        )
        assert case.truth.data.shape == case.intensity.data.shape
        assert case.intensity.spacing == cfg.spacing
        assert case.intensity.data.dtype == np.float32
        assert (case.intensity.data >= 0).all()

    def test_every_slice_has_all_foreground_classes(self):
        cfg = PhantomConfig(seed=7)
        for i in range(4):
            truth = generate_case(cfg, i).truth.data
            for z in range(truth.shape[0]):
                present = set(np.unique(truth[z]))
                assert set(FOREGROUND_CLASSES) <= present, f"case {i} slice {z}"

    def test_icv_exceeds_component_filter(self, case):
        spacing = case.truth.spacing
        voxel = spacing[0] * spacing[1] * spacing[2]
        assert (case.truth.data > 0).sum() * voxel > MIN_COMPONENT_MM3

    def test_brain_is_one_connected_component(self, case):
        _, count = connected_components(case.truth.data > 0, connectivity=26)
        assert count == 1

    def test_fresh_case_has_no_artifacts(self, case):
        assert case.has_injected_artifact == (False,) * case.truth.depth
        assert case.artifacts == ()

    def test_dataset_size_and_order(self):
        cfg = PhantomConfig(seed=5, n_volumes=3)
        cases = generate_dataset(cfg)
        assert [c.case_id for c in cases] == [0, 1, 2]
        solo = generate_case(cfg, 2)
        assert cases[2].intensity == solo.intensity


class TestArtifactInjection:
    def test_half_fraction_marks_half_the_slices(self, case):
        out = inject_test_artifact(case, substream(42, "inject", 0))
        assert sum(out.has_injected_artifact) == case.truth.depth // 2
        assert len(out.artifacts) == sum(out.has_injected_artifact)

    def test_flagged_slices_change_others_do_not(self, case):
        out = inject_test_artifact(case, substream(42, "inject", 0))
        for z in range(case.truth.depth):
            same = np.array_equal(out.intensity.data[z], case.intensity.data[z])
            assert same != out.has_injected_artifact[z]

    def test_labels_untouched(self, case):
        out = inject_test_artifact(case, substream(42, "inject", 0))
        assert out.truth == case.truth

    def test_slice_maximum_preserved(self, case):
        out = inject_test_artifact(case, substream(42, "inject", 0))
        for z, flagged in enumerate(out.has_injected_artifact):
            if flagged:
                assert np.isclose(
                    out.intensity.data[z].max(),
                    case.intensity.data[z].max(),
                    rtol=1e-5,
                )

    def test_offsets_in_held_out_ranges(self, case):
        size = case.intensity.width
        scale = size / REFERENCE_SIZE
        out = inject_test_artifact(case, substream(42, "inject", 0))
        for rec in out.artifacts:
            assert TEST_X0_RANGE[0] * scale <= rec.x0 <= TEST_X0_RANGE[1] * scale
            assert TEST_Y0_RANGE[0] * scale <= rec.y0 <= TEST_Y0_RANGE[1] * scale

    def test_held_out_ranges_disjoint_from_training(self):
        assert TEST_X0_RANGE[1] < 43.0
        assert TEST_Y0_RANGE[0] > 170.0

    def test_records_reproduce_shading(self, case):
        """A logged artifact record deterministically regenerates its slice."""
        cfg = ArtifactConfig()
        out = inject_test_artifact(case, substream(42, "inject", 0), cfg)
        rec = out.artifacts[0]
        z = rec.slice_index
        fld = make_multiplier_field(
            case.intensity.width, case.intensity.height, rec.x0, rec.y0, rec.theta
        ).values
        shade = (1.0 - rec.amplitude) + rec.amplitude * (fld / fld.max())
        shaded = case.intensity.data[z].astype(np.float64) * shade
        shaded *= case.intensity.data[z].max() / shaded.max()
        assert np.allclose(out.intensity.data[z], shaded.astype(np.float32), atol=1e-3)

    def test_amplitude_zero_changes_nothing(self, case):
        cfg = ArtifactConfig(amplitude=0.0)
        out = inject_test_artifact(case, substream(1, "inject", 0), cfg)
        assert np.allclose(out.intensity.data, case.intensity.data, atol=1e-3)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ArtifactConfig(amplitude=1.5)
        with pytest.raises(ValueError):
            ArtifactConfig(fraction=-0.1)


class TestPhantomConfigValidation:
    def test_bad_sizes_rejected(self):
        with pytest.raises(ValueError):
            PhantomConfig(n_volumes=0)
        with pytest.raises(ValueError):
            PhantomConfig(image_size=8)
        with pytest.raises(ValueError):
            PhantomConfig(slices_per_volume=0)

    def test_tiny_brain_fails_icv_check(self):
        # at 0.1 mm in-plane spacing the whole head is well under 3 cm^3
        cfg = PhantomConfig(seed=0, spacing=(0.1, 0.1, 0.5))
        with pytest.raises(ValueError, match="mm\\^3"):
            generate_case(cfg, 0)


class TestManifest:
    def entries(self):
        return [
            ManifestEntry("case000", "train", "a_img.mvol", "a_lab.mvol", (False, False)),
            ManifestEntry("case001", "test", "b_img.mvol", "b_lab.mvol", (True, False)),
        ]

    def test_round_trip(self, tmp_path):
        p = tmp_path / "manifest.txt"
        write_manifest(p, 42, self.entries())
        seed, back = read_manifest(p)
        assert seed == 42
        assert back == self.entries()

    def test_write_is_deterministic(self, tmp_path):
        p1, p2 = tmp_path / "m1.txt", tmp_path / "m2.txt"
        write_manifest(p1, 7, self.entries())
        write_manifest(p2, 7, self.entries())
        assert p1.read_bytes() == p2.read_bytes()

    def test_missing_seed_rejected(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("case x train a b 00\n")
        with pytest.raises(ValueError):
            read_manifest(p)

    def test_unknown_line_rejected(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("seed 1\nbogus line here\n")
        with pytest.raises(ValueError):
            read_manifest(p)
