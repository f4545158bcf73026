import numpy as np
import pytest

from binaural_doa.doa import (
    PrototypeDatabase,
    UndefinedAngleError,
    accuracy,
    angle_table,
    build_prototype_db,
    hermitian_angle,
    pick_doas,
    spectrum,
)
from binaural_doa.geometry import (
    angular_distance,
    binaural_geometry,
    far_field_delays,
    load_geometry,
    save_geometry,
    unit_vector,
    wrap_degrees,
)
from binaural_doa.rtf import RtfEstimate
from binaural_doa.stft import StftConfig


@pytest.fixture(scope="module")
def db():
    return build_prototype_db(binaural_geometry()[:4], 5.0, StftConfig())


class TestGeometry:
    def test_convention(self):
        np.testing.assert_allclose(unit_vector(0), [0, 1, 0], atol=1e-15)
        np.testing.assert_allclose(unit_vector(90), [1, 0, 0], atol=1e-15)

    def test_delay_oracle(self):
        # a source on +x reaches the right device first by r / c
        tau = far_field_delays([[-0.09, 0], [0.09, 0]], 90.0)
        assert tau[0] - tau[1] == pytest.approx(0.18 / 343.0)

    def test_wrap(self):
        assert wrap_degrees(180) == -180
        assert wrap_degrees(-190) == 170
        assert angular_distance(-178, 180) == pytest.approx(2.0)
        assert angular_distance(10, 350) == pytest.approx(20.0)

    def test_file_roundtrip(self, tmp_path):
        geo = binaural_geometry()
        save_geometry(tmp_path / "g.txt", geo)
        np.testing.assert_array_equal(load_geometry(tmp_path / "g.txt"), geo)
        (tmp_path / "h.txt").write_text("# two mics\n0 0.09\n0, -0.09  # rear\n")
        np.testing.assert_array_equal(load_geometry(tmp_path / "h.txt"), [[0, 0.09, 0], [0, -0.09, 0]])


class TestPrototypeDatabase:
    def test_grid(self, db):
        assert len(db.directions) == 72
        assert db.directions[0] == -180 and db.directions[-1] == 175
        assert db.resolution == 5.0
        assert db.vectors.shape == (257, 72, 4)

    def test_reference_is_one(self, db):
        np.testing.assert_array_equal(db.vectors[..., 0], 1.0)

    def test_broadside_pair(self):
        small = build_prototype_db([[0, 0.09], [0, -0.09]], 5.0, StftConfig())
        i = np.flatnonzero(small.directions == 90)[0]
        np.testing.assert_allclose(small.vectors[:, i], 1.0, atol=1e-12)

    def test_phase_oracle(self, db):
        # independent phase computation from path-length differences
        k, i = 50, 30
        theta = np.deg2rad(db.directions[i])
        pos = binaural_geometry()[:4]
        path = pos[:, 0] * np.sin(theta) + pos[:, 1] * np.cos(theta)
        f = k * 16000 / 512
        expected = np.exp(2j * np.pi * f * (path - path[0]) / 343.0)
        np.testing.assert_allclose(db.vectors[k, i], expected, atol=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            build_prototype_db([[0, 0], [0, 0]], 5.0, StftConfig())
        with pytest.raises(ValueError):
            build_prototype_db(binaural_geometry()[:4], 7.0, StftConfig())
        with pytest.raises(ValueError):
            build_prototype_db([[0, 0]], 5.0, StftConfig())

    def test_save_load(self, tmp_path):
        small = build_prototype_db(binaural_geometry()[:4], 30.0, StftConfig(window_len=32, hop=16))
        small.save(tmp_path / "db.csv")
        back = PrototypeDatabase.load(tmp_path / "db.csv")
        np.testing.assert_array_equal(back.directions, small.directions)
        np.testing.assert_array_equal(back.vectors, small.vectors)
        np.testing.assert_array_equal(back.geometry, small.geometry)
        assert (back.sample_rate, back.window_len) == (16000, 32)


class TestHermitianAngle:
    def test_examples(self):
        g = np.array([1, 0.3j, -2])
        assert hermitian_angle(g, g) == pytest.approx(0.0, abs=1e-7)
        assert hermitian_angle([1, 0], [0, 1]) == pytest.approx(np.pi / 2)
        assert hermitian_angle(2j * g, g) == pytest.approx(0.0, abs=1e-7)

    def test_range_and_oracle(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((100, 4)) + 1j * rng.standard_normal((100, 4))
        b = rng.standard_normal((100, 4)) + 1j * rng.standard_normal((100, 4))
        h = hermitian_angle(a, b)
        assert np.all((h >= 0) & (h <= np.pi / 2))
        ref = [np.arccos(abs(np.vdot(y, x)) / np.linalg.norm(x) / np.linalg.norm(y)) for x, y in zip(a, b)]
        np.testing.assert_allclose(h, ref, atol=1e-12)

    def test_zero_vector(self):
        with pytest.raises(UndefinedAngleError):
            hermitian_angle([0, 0], [1, 0])

    def test_table_matches_pairwise(self, db):
        rng = np.random.default_rng(1)
        g = rng.standard_normal((257, 4)) + 1j * rng.standard_normal((257, 4))
        table = angle_table(g, db)
        assert table.shape == (257, 72)
        assert table[17, 5] == pytest.approx(hermitian_angle(g[17], db.vectors[17, 5]))
        sub = angle_table(g[[3, 9]], db, bins=[3, 9])
        np.testing.assert_array_equal(sub, table[[3, 9]])


def _rtf_from_db(db, i, valid=True):
    return RtfEstimate(db.vectors[:, i].copy(), np.full(db.num_bins, valid), "SC")


class TestSpectrum:
    def test_single_bin(self, db):
        rng = np.random.default_rng(2)
        g = rng.standard_normal((257, 4)) + 1j * rng.standard_normal((257, 4))
        est = RtfEstimate(g, np.ones(257, bool), "CW")
        spec = spectrum(est, db, [40])
        np.testing.assert_allclose(spec.scores, -hermitian_angle(g[40], db.vectors[40]))
        assert spec.contributing_bins == 1

    def test_self_consistency(self, db):
        i = int(np.flatnonzero(db.directions == 40)[0])
        spec = spectrum(_rtf_from_db(db, i), db, np.arange(4, 257))
        assert db.directions[np.argmax(spec.scores)] == 40
        assert pick_doas(spec, 1, db=db).azimuths[0] == 40

    def test_empty_subset(self, db):
        spec = spectrum(_rtf_from_db(db, 0), db, [])
        assert spec.empty and not spec.scores.any()

    def test_invalid_bins_skipped(self, db):
        est = _rtf_from_db(db, 10)
        est.valid[5:10] = False
        spec = spectrum(est, db, np.arange(20))
        assert (spec.contributing_bins, spec.skipped_bins) == (15, 5)


class TestPickDoas:
    def test_single_peak(self):
        scores = -np.abs(np.arange(72) - 8.0)
        assert pick_doas(scores, 1).indices.tolist() == [8]
        assert pick_doas(scores, 1).azimuths[0] == -180 + 40

    def test_two_peaks_any_height(self):
        scores = np.zeros(72)
        scores[10], scores[40] = 1.0, 5.0
        assert sorted(pick_doas(scores, 2).indices.tolist()) == [10, 40]
        scores[10], scores[40] = 5.0, 1.0
        assert sorted(pick_doas(scores, 2).indices.tolist()) == [10, 40]

    def test_wraparound_peak_counted_once(self):
        scores = np.zeros(72)
        scores[0] = scores[71] = 3.0  # plateau across -180 / 175
        scores[30] = 1.0
        est = pick_doas(scores, 2)
        assert sorted(est.indices.tolist()) == [30, 71]

    def test_plateau_leftmost(self):
        scores = np.zeros(72)
        scores[20:23] = 2.0
        assert pick_doas(scores, 1).indices.tolist() == [20]

    def test_fill_with_non_peaks(self):
        scores = -np.abs(np.arange(72) - 30.0)
        est = pick_doas(scores, 3)
        # one peak at 30, then best remaining with ties to lower azimuth
        assert est.indices.tolist() == [30, 29, 31]

    def test_flat_is_degenerate(self):
        est = pick_doas(np.zeros(72), 2)
        assert est.degenerate
        assert est.azimuths.tolist() == [-180, -175]

    def test_invalid_j(self):
        with pytest.raises(ValueError):
            pick_doas(np.arange(72.0), 0)
        with pytest.raises(ValueError):
            pick_doas(np.arange(72.0), 73)


class TestAccuracy:
    def test_examples(self):
        assert accuracy([10, 50], [50, 10]) == 1.0
        assert accuracy([10, 90], [50, 10]) == 0.5
        assert accuracy([-178], [180]) == 1.0

    def test_tolerance_inclusive(self):
        assert accuracy([5], [0]) == 1.0
        assert accuracy([5.5], [0]) == 0.0

    def test_one_to_one(self):
        # both estimates near the first truth: only one can match it
        assert accuracy([0, 2], [1, 90]) == 0.5

    def test_greedy_prefers_closest(self):
        assert accuracy([0, 8], [4, 9]) == 1.0
        # closest pair (6, 4) is taken first, leaving 0 vs 10 unmatched
        assert accuracy([0, 6], [4, 10]) == 0.5

    def test_empty_truth(self):
        with pytest.raises(ValueError):
            accuracy([0], [])
