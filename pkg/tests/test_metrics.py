"""Dice/MSD against brute-force oracles, aggregation rules, CSV round trips."""

import csv
import itertools
import math

import numpy as np
import pytest

from fetalseg.metrics import (
    SUBSET_NAMES,
    SliceClassScore,
    boundary_mask,
    dice_coefficient,
    format_metric,
    mean_surface_distance,
    read_slice_scores,
    score_slice_pair,
    score_volume_3d,
    score_volume_slices,
    summarize,
    summarize_subsets,
    write_report,
    write_slice_scores,
)
from fetalseg.volume import LabelVolume


def boundary_oracle(mask):
    """Per-voxel loop: a mask voxel is boundary when any face neighbor is
    outside the mask or outside the image."""
    m = np.asarray(mask, dtype=bool)
    out = np.zeros_like(m)
    for idx in np.ndindex(m.shape):
        if not m[idx]:
            continue
        for axis in range(m.ndim):
            for step in (-1, 1):
                nb = list(idx)
                nb[axis] += step
                if not (0 <= nb[axis] < m.shape[axis]) or not m[tuple(nb)]:
                    out[idx] = True
    return out


def msd_oracle(pred, truth, spacing):
    """O(n^2) symmetric mean surface distance."""
    p = np.asarray(pred, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if not p.any() or not t.any():
        return None
    bp = np.argwhere(boundary_oracle(p)).astype(float) * np.asarray(spacing)
    bt = np.argwhere(boundary_oracle(t)).astype(float) * np.asarray(spacing)

    def directed(src, dst):
        total = 0.0
        for s in src:
            total += min(math.dist(s, d) for d in dst)
        return total / len(src)

    return (directed(bp, bt) + directed(bt, bp)) / 2.0


def dice_oracle(pred, truth):
    p = np.asarray(pred, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if not p.any() and not t.any():
        return None
    return 2.0 * float((p & t).sum()) / (float(p.sum()) + float(t.sum()))


class TestBoundary:
    def test_matches_oracle_2d(self, rng):
        for _ in range(40):
            mask = rng.random((6, 7)) < 0.45
            assert np.array_equal(boundary_mask(mask), boundary_oracle(mask))

    def test_matches_oracle_3d(self, rng):
        for _ in range(25):
            mask = rng.random((4, 5, 5)) < 0.4
            assert np.array_equal(boundary_mask(mask), boundary_oracle(mask))

    def test_image_border_counts_as_outside(self):
        full = np.ones((4, 4), dtype=bool)
        b = boundary_mask(full)
        assert b[0, :].all() and b[-1, :].all() and b[:, 0].all() and b[:, -1].all()
        assert not b[1:-1, 1:-1].any()

    def test_1d_rejected(self):
        with pytest.raises(ValueError):
            boundary_mask(np.ones(4, dtype=bool))


class TestDice:
    def test_exhaustive_2x2(self):
        cells = list(itertools.product([0, 1], repeat=4))
        for pv in cells:
            for tv in cells:
                p = np.array(pv, dtype=bool).reshape(2, 2)
                t = np.array(tv, dtype=bool).reshape(2, 2)
                assert dice_coefficient(p, t) == dice_oracle(p, t)

    def test_both_empty_is_undefined(self):
        assert dice_coefficient(np.zeros((3, 3), bool), np.zeros((3, 3), bool)) is None

    def test_one_empty_is_zero(self):
        p = np.zeros((3, 3), bool)
        t = np.ones((3, 3), bool)
        assert dice_coefficient(p, t) == 0.0
        assert dice_coefficient(t, p) == 0.0

    def test_identical_masks_score_one(self, rng):
        m = rng.random((5, 5)) < 0.5
        m[0, 0] = True
        assert dice_coefficient(m, m) == 1.0


class TestMeanSurfaceDistance:
    def test_matches_oracle_2d_anisotropic(self, rng):
        spacing = (2.0, 0.7)
        for _ in range(30):
            p = rng.random((6, 6)) < 0.4
            t = rng.random((6, 6)) < 0.4
            got = mean_surface_distance(p, t, spacing)
            want = msd_oracle(p, t, spacing)
            if want is None:
                assert got is None
            else:
                assert got == pytest.approx(want, abs=1e-12)

    def test_matches_oracle_3d(self, rng):
        spacing = (1.25, 0.7, 0.7)
        for _ in range(15):
            p = rng.random((3, 5, 5)) < 0.35
            t = rng.random((3, 5, 5)) < 0.35
            got = mean_surface_distance(p, t, spacing)
            want = msd_oracle(p, t, spacing)
            if want is None:
                assert got is None
            else:
                assert got == pytest.approx(want, abs=1e-12)

    def test_undefined_when_either_empty(self):
        empty = np.zeros((4, 4), bool)
        square = np.zeros((4, 4), bool)
        square[1:3, 1:3] = True
        assert mean_surface_distance(empty, square, (1, 1)) is None
        assert mean_surface_distance(square, empty, (1, 1)) is None
        assert mean_surface_distance(empty, empty, (1, 1)) is None

    def test_identical_masks_give_zero(self, rng):
        m = rng.random((6, 6)) < 0.5
        m[2, 2] = True
        assert mean_surface_distance(m, m, (0.7, 0.7)) == 0.0

    def test_known_translation_distance(self):
        p = np.zeros((5, 5), bool)
        t = np.zeros((5, 5), bool)
        p[1, 1] = True
        t[3, 1] = True  # two rows down
        assert mean_surface_distance(p, t, (2.0, 0.7)) == pytest.approx(4.0)

    def test_spacing_length_checked(self):
        m = np.ones((3, 3), bool)
        with pytest.raises(ValueError):
            mean_surface_distance(m, m, (1.0, 1.0, 1.0))


class TestScoring:
    def make_label_volume(self, placements, shape=(2, 6, 6), spacing=(0.5, 2.0, 1.0)):
        data = np.zeros(shape, dtype=np.uint8)
        for (z, y, x), code in placements.items():
            data[z, y, x] = code
        return LabelVolume(data, spacing)

    def test_row_spacing_is_sy(self):
        # spacing tuple is (sx, sy, sz); one-row offset must cost sy mm
        pred = self.make_label_volume({(0, 1, 1): 1})
        truth = self.make_label_volume({(0, 2, 1): 1})
        scores = score_volume_slices(pred, truth, "v", [False, False], classes=(1,))
        assert scores[0].msd == pytest.approx(2.0)

    def test_column_spacing_is_sx(self):
        pred = self.make_label_volume({(0, 1, 1): 1})
        truth = self.make_label_volume({(0, 1, 3): 1})
        scores = score_volume_slices(pred, truth, "v", [False, False], classes=(1,))
        assert scores[0].msd == pytest.approx(1.0)  # two columns x 0.5 mm

    def test_3d_slice_spacing_is_sz(self):
        pred = self.make_label_volume({(0, 1, 1): 1})
        truth = self.make_label_volume({(1, 1, 1): 1})
        scores = score_volume_3d(pred, truth, "v", classes=(1,))
        assert scores[0].msd == pytest.approx(1.0)  # one slice x sz=1.0 mm

    def test_score_slice_pair_all_classes(self, rng):
        pred = rng.integers(0, 8, size=(8, 8))
        truth = rng.integers(0, 8, size=(8, 8))
        out = score_slice_pair(pred, truth, (0.7, 0.7))
        assert set(out) == set(range(1, 8))
        for c, (dc, msd) in out.items():
            assert dc == dice_oracle(pred == c, truth == c)
            want = msd_oracle(pred == c, truth == c, (0.7, 0.7))
            if want is None:
                assert msd is None
            else:
                assert msd == pytest.approx(want, abs=1e-12)

    def test_perfect_prediction(self):
        truth = self.make_label_volume({(0, 1, 1): 3, (1, 2, 2): 3})
        scores = score_volume_slices(truth, truth, "v", [False, True], classes=(3,))
        assert all(s.dice == 1.0 and s.msd == 0.0 for s in scores)

    def test_artifact_flags_propagate(self):
        truth = self.make_label_volume({(0, 1, 1): 1, (1, 1, 1): 1})
        scores = score_volume_slices(truth, truth, "v", [True, False], classes=(1,))
        assert [s.with_artifact for s in scores] == [True, False]

    def test_shape_mismatch_rejected(self):
        a = self.make_label_volume({}, shape=(2, 6, 6))
        b = self.make_label_volume({}, shape=(2, 5, 6))
        with pytest.raises(ValueError):
            score_volume_slices(a, b, "v", [False, False])
        with pytest.raises(ValueError):
            score_volume_3d(a, b, "v")

    def test_flag_count_checked(self):
        a = self.make_label_volume({})
        with pytest.raises(ValueError):
            score_volume_slices(a, a, "v", [False])


def make_scores():
    return [
        SliceClassScore("va", 0, 1, 0.8, 1.0, True),
        SliceClassScore("va", 0, 2, 0.6, 2.0, True),
        SliceClassScore("va", 1, 1, 0.4, 3.0, False),
        SliceClassScore("va", 1, 2, None, None, False),
        SliceClassScore("vb", 0, 1, 1.0, 0.0, False),
        SliceClassScore("vb", 0, 2, 0.0, None, False),
    ]


class TestSummaries:
    def test_per_class_means_skip_undefined(self):
        s = summarize(make_scores(), "all", classes=(1, 2))
        assert s.per_class_dice[1] == pytest.approx((0.8 + 0.4 + 1.0) / 3)
        assert s.per_class_dice[2] == pytest.approx((0.6 + 0.0) / 2)
        assert s.per_class_msd[2] == pytest.approx(2.0)

    def test_grand_mean_weighs_classes_equally(self):
        s = summarize(make_scores(), "all", classes=(1, 2))
        assert s.mean_dice == pytest.approx(
            ((0.8 + 0.4 + 1.0) / 3 + (0.6 + 0.0) / 2) / 2
        )

    def test_subset_filtering(self):
        with_s = summarize(make_scores(), "with-artifact", classes=(1, 2))
        assert with_s.per_class_dice[1] == pytest.approx(0.8)
        assert with_s.n_slices == 1
        without = summarize(make_scores(), "without-artifact", classes=(1, 2))
        assert without.n_slices == 2

    def test_subsets_partition_slices(self):
        subs = summarize_subsets(make_scores(), classes=(1, 2))
        assert set(subs) == set(SUBSET_NAMES)
        assert (
            subs["with-artifact"].n_slices + subs["without-artifact"].n_slices
            == subs["all"].n_slices
        )

    def test_all_undefined_gives_none(self):
        scores = [SliceClassScore("v", 0, 1, None, None, False)]
        s = summarize(scores, "all", classes=(1,))
        assert s.mean_dice is None and s.mean_msd is None

    def test_unknown_subset_rejected(self):
        with pytest.raises(ValueError):
            summarize(make_scores(), "bogus")


class TestCsv:
    def test_slice_scores_round_trip(self, tmp_path):
        p = tmp_path / "slices.csv"
        write_slice_scores(p, make_scores())
        back = read_slice_scores(p)
        assert back == sorted(
            make_scores(), key=lambda s: (s.volume_id, s.slice_index, s.class_code)
        )

    def test_writes_are_byte_deterministic(self, tmp_path):
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_slice_scores(p1, make_scores())
        write_slice_scores(p2, list(reversed(make_scores())))
        assert p1.read_bytes() == p2.read_bytes()

    def test_na_encoding(self, tmp_path):
        p = tmp_path / "slices.csv"
        write_slice_scores(p, make_scores())
        text = p.read_text()
        assert "NA" in text
        assert format_metric(None) == "NA"
        assert format_metric(0.25) == "0.25"

    def test_report_matches_recomputation_from_slice_csv(self, tmp_path):
        """Spreadsheet-level oracle: report rows must equal averages taken
        straight from the per-slice CSV."""
        slice_csv = tmp_path / "slices.csv"
        report_csv = tmp_path / "report.csv"
        write_slice_scores(slice_csv, make_scores())
        back = read_slice_scores(slice_csv)
        write_report(report_csv, summarize_subsets(back, classes=(1, 2)), classes=(1, 2))

        with open(report_csv, newline="") as fh:
            rows = list(csv.DictReader(fh))
        for row in rows:
            if row["class"] == "mean":
                continue
            code = int(row["class"])
            subset = row["subset"]
            if subset == "all":
                kept = back
            elif subset == "with-artifact":
                kept = [s for s in back if s.with_artifact]
            else:
                kept = [s for s in back if not s.with_artifact]
            dcs = [s.dice for s in kept if s.class_code == code and s.dice is not None]
            want = "NA" if not dcs else repr(float(np.mean(dcs)))
            assert row["dc_mean"] == want

    def test_report_row_count(self, tmp_path):
        p = tmp_path / "report.csv"
        write_report(p, summarize_subsets(make_scores(), classes=(1, 2)), classes=(1, 2))
        with open(p, newline="") as fh:
            rows = list(csv.reader(fh))
        # header + 3 subsets x (2 classes + 1 mean row)
        assert len(rows) == 1 + 3 * 3
