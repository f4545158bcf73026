import numpy as np
import pytest

from binaural_doa.doa import build_prototype_db
from binaural_doa.geometry import binaural_geometry
from binaural_doa.pipeline import (
    NoiseFloorTracker,
    PipelineSettings,
    estimated_labels,
    localize,
    track_covariances,
)
from binaural_doa.scene import SceneSpec, render_scene
from binaural_doa.spatial_stats import CoherenceModel
from binaural_doa.stft import StftConfig, analyze


@pytest.fixture(scope="module")
def cfg():
    return StftConfig()


@pytest.fixture(scope="module")
def db(cfg):
    return build_prototype_db(binaural_geometry()[:4], 5.0, cfg)


def test_analysis_bins(cfg):
    bins = PipelineSettings().analysis_bins(cfg)
    f = cfg.bin_frequencies()
    assert f[bins[0]] >= 100 and f[bins[0] - 1] < 100
    assert bins[-1] == 256


def test_noise_floor_tracks_minimum():
    tracker = NoiseFloorTracker((3,), window_frames=10, smoothing=0.0, bias=1.0)
    for p in [5.0, 1.0, 7.0, 9.0]:
        est = tracker.update(np.full(3, p))
    np.testing.assert_allclose(est, 1.0)
    for _ in range(10):
        est = tracker.update(np.full(3, 4.0))
    np.testing.assert_allclose(est, 4.0)


def test_track_covariances_matches_manual_recursion(cfg):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 4000))
    spec = analyze(x, cfg)
    labels = rng.random((cfg.num_bins, spec.num_frames)) > 0.5
    settings = PipelineSettings(num_head=2)
    phi_y, phi_u = track_covariances(spec, labels, settings, bins=[20])
    lam_y = np.exp(-cfg.hop_seconds / 0.25)
    lam_u = np.exp(-cfg.hop_seconds / 0.5)
    scale = np.mean(np.abs(spec.data[:, 20, 0]) ** 2)
    ry = np.eye(3) * 1e-6 * scale
    ru = ry.copy()
    for l in range(spec.num_frames):
        y = spec.data[:, 20, l]
        if labels[20, l]:
            ry = lam_y * ry + (1 - lam_y) * np.outer(y, y.conj())
        else:
            ru = lam_u * ru + (1 - lam_u) * np.outer(y, y.conj())
    np.testing.assert_allclose(phi_y[-1, 0], ry, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(phi_u[-1, 0], ru, rtol=1e-10, atol=1e-14)


def test_estimated_labels_detect_speech(cfg):
    spec = SceneSpec(binaural_geometry(), [(40, "speech-like")], snr_db=10.0, duration=4.0, seed=1)
    r = render_scene(spec, CoherenceModel(), cfg)
    labels = estimated_labels(analyze(r.mixture, cfg))
    truth = r.oracle_presence
    # skip the tracker warm-up
    hit = np.mean(labels[:, 70:][truth[:, 70:]])
    false_alarm = np.mean(labels[:, 70:][~truth[:, 70:]])
    assert hit > 0.5
    assert false_alarm < 0.2


@pytest.mark.parametrize("azimuth", [-180, -95, 0, 35, 120])
def test_noiseless_single_speaker(azimuth, cfg, db):
    spec = SceneSpec(binaural_geometry(), [(azimuth, "speech-like")], noise="none",
                     snr_db=np.inf, duration=2.0, seed=2)
    r = render_scene(spec, CoherenceModel(), cfg)
    out = localize(analyze(r.mixture, cfg), r.oracle_presence, db, 1, truth=[azimuth])
    for key in out.acc:
        assert out.mean_acc(key, exclude_seconds=0.5) == 1.0


def test_two_speakers_at_high_snr(cfg, db):
    spec = SceneSpec(binaural_geometry(), [(-80, "speech-like"), (40, "speech-like")],
                     snr_db=20.0, duration=3.0, seed=3)
    r = render_scene(spec, CoherenceModel(), cfg)
    out = localize(analyze(r.mixture, cfg), r.oracle_presence, db, 2, truth=[-80, 40])
    for key in out.acc:
        assert out.mean_acc(key, 0.5) > 0.8
    # subset selection keeps fewer bins than the unrestricted variant
    assert out.contributing[("CW", 0.0)].mean() < out.contributing[("CW", -np.inf)].mean()


def test_causal(cfg, db):
    spec = SceneSpec(binaural_geometry(), [(-40, "speech-like"), (100, "speech-like")],
                     snr_db=0.0, duration=3.0, seed=4)
    r = render_scene(spec, CoherenceModel(), cfg)
    full = analyze(r.mixture, cfg)
    cut = analyze(r.mixture[:, :cfg.window_len + 99 * cfg.hop], cfg)
    assert cut.num_frames == 100
    a = localize(full, r.oracle_presence, db, 2)
    b = localize(cut, r.oracle_presence[:, :100], db, 2)
    for key in a.doas:
        np.testing.assert_array_equal(a.doas[key][:100], b.doas[key])


def test_rejects_mismatched_database(cfg):
    small = build_prototype_db(binaural_geometry()[:4], 5.0, StftConfig(window_len=256, hop=128))
    spec = analyze(np.zeros((5, 2000)), cfg)
    with pytest.raises(ValueError):
        localize(spec, np.zeros((257, spec.num_frames), bool), small, 1)


def test_unknown_estimator(cfg, db):
    spec = analyze(np.random.default_rng(5).standard_normal((5, 2000)), cfg)
    with pytest.raises(ValueError):
        localize(spec, np.ones((257, spec.num_frames), bool), db, 1,
                 PipelineSettings(estimators=("MUSIC",)))
