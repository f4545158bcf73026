import numpy as np
import pytest

from binaural_doa.stft import StftConfig, analysis_window, analyze, read_wav, write_wav


@pytest.fixture
def config():
    return StftConfig()


def test_default_parameters():
    cfg = StftConfig.from_duration(16000, 32.0)
    assert (cfg.window_len, cfg.hop, cfg.num_bins) == (512, 256, 257)


def test_window_perfect_reconstruction(config):
    w = analysis_window(config)
    h = config.hop
    np.testing.assert_allclose(w[:h] ** 2 + w[h:] ** 2, 1.0, atol=1e-15)


@pytest.mark.parametrize("kwargs", [
    dict(window_len=511, hop=255),
    dict(window_len=512, hop=128),
    dict(sample_rate=0),
    dict(window_kind="hamming"),
])
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        StftConfig(**kwargs)


def test_zero_input(config):
    spec = analyze(np.zeros((2, 16000)), config)
    assert spec.data.shape == (2, 257, 61)
    assert not spec.data.any()


def test_frame_count(config):
    for n in (512, 767, 768, 5000):
        spec = analyze(np.ones((3, n)), config)
        assert spec.num_frames == (n - 512) // 256 + 1


def test_rejects_short_and_ragged_input(config):
    with pytest.raises(ValueError):
        analyze(np.zeros((2, 100)), config)
    with pytest.raises(ValueError):
        analyze([np.zeros(1000), np.zeros(999)], config)


def test_matches_direct_dft(config):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 2000))
    spec = analyze(x, config)
    w = analysis_window(config)
    n = np.arange(512)
    l, k = 3, 17
    frame = x[1, l * 256:l * 256 + 512] * w
    expected = np.sum(frame * np.exp(-2j * np.pi * k * n / 512))
    assert spec.data[1, k, l] == pytest.approx(expected, abs=1e-10)


def _window_dft(offset, n=512):
    # direct DFT of the window itself at an integer bin offset
    idx = np.arange(n)
    w = np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * idx / n))
    return np.sum(w * np.exp(-2j * np.pi * offset * idx / n))


def _cosine_oracle(k, k0):
    # a real cosine is two exponentials, at +k0 and -k0
    return abs(0.5 * (_window_dft(k - k0) + _window_dft(k + k0)))


def test_bin_centred_sinusoid(config):
    k0 = 40
    t = np.arange(4096)
    x = np.cos(2 * np.pi * k0 * t / 512)
    mag = np.abs(analyze(x, config).data[0, :, 2])
    assert np.argmax(mag) == k0
    rel_db = 20 * np.log10(mag / mag[k0] + 1e-300)
    oracle_db = [20 * np.log10(_cosine_oracle(k0 + d, k0) / _cosine_oracle(k0, k0))
                 for d in range(1, 9)]
    np.testing.assert_allclose(rel_db[k0 + 1:k0 + 9], oracle_db, atol=1e-6)
    # sine window: 1/(4k^2 - 1) side lobes, -30.9 dB at 3 bins, < -40 dB from 6 bins
    leak = [20 * np.log10(abs(_window_dft(d) / _window_dft(0))) for d in range(1, 7)]
    np.testing.assert_allclose(leak, 20 * np.log10(1 / (4 * np.arange(1, 7) ** 2 - 1)), atol=0.01)
    assert rel_db[k0 + 3] == pytest.approx(-30.88, abs=0.05)
    assert np.all(rel_db[k0 + 6:k0 + 30] < -40)
    assert np.all(rel_db[k0 - 30:k0 - 5] < -40)


def test_parseval(config):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 3000))
    spec = analyze(x, config)
    w = analysis_window(config)
    for l in range(spec.num_frames):
        frame = x[0, l * 256:l * 256 + 512] * w
        X = spec.data[0, :, l]
        weights = np.full(257, 2.0)
        weights[[0, -1]] = 1.0
        assert np.sum(weights * np.abs(X) ** 2) / 512 == pytest.approx(np.sum(frame**2), rel=1e-9)


def test_wav_roundtrip(tmp_path, config):
    rng = np.random.default_rng(2)
    x = 0.1 * rng.standard_normal((3, 1600))
    write_wav(tmp_path / "x.wav", x, 16000)
    fs, y = read_wav(tmp_path / "x.wav", expected_rate=16000)
    assert fs == 16000
    np.testing.assert_allclose(y, x, atol=1e-7)
    with pytest.raises(ValueError):
        read_wav(tmp_path / "x.wav", expected_rate=48000)


def test_wav_channel_files(tmp_path):
    from scipy.io import wavfile

    a = (np.arange(800) % 100 * 100).astype(np.int16)
    wavfile.write(tmp_path / "a.wav", 16000, a)
    wavfile.write(tmp_path / "b.wav", 16000, -a)
    fs, y = read_wav([tmp_path / "a.wav", tmp_path / "b.wav"])
    assert y.shape == (2, 800)
    np.testing.assert_allclose(y[0], a / 32768.0)
    np.testing.assert_allclose(y[1], -a / 32768.0)
