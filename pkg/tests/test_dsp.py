import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vitscore import dsp
from vitscore.dsp import DSPError, StftConfig, Waveform
from vitscore.verify import direct_dft


def write_pcm(path, values, rate=22050):
    import wave

    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(rate)
        f.writeframes(np.asarray(values, dtype="<i2").tobytes())


def test_zero_pcm(tmp_path):
    write_pcm(tmp_path / "z.wav", np.zeros(1024))
    w = dsp.load_wav(tmp_path / "z.wav")
    assert w.samples.shape == (1024,) and not w.samples.any()


def test_pcm_scaling(tmp_path):
    write_pcm(tmp_path / "s.wav", [16384, -32768, 0])
    np.testing.assert_array_equal(dsp.load_wav(tmp_path / "s.wav").samples, [0.5, -1.0, 0.0])


def test_wav_roundtrip(tmp_path, rng):
    pcm = rng.integers(-32768, 32768, size=500)
    w = Waveform(pcm / 32768.0, 16000)
    dsp.save_wav(tmp_path / "r.wav", w)
    back = dsp.load_wav(tmp_path / "r.wav")
    assert back.sample_rate == 16000
    np.testing.assert_array_equal(back.samples, w.samples)


def test_stereo_rejected(tmp_path):
    import wave

    with wave.open(str(tmp_path / "st.wav"), "wb") as f:
        f.setnchannels(2)
        f.setsampwidth(2)
        f.setframerate(8000)
        f.writeframes(b"\0" * 16)
    with pytest.raises(DSPError, match="mono"):
        dsp.load_wav(tmp_path / "st.wav")


def test_waveform_range():
    with pytest.raises(DSPError):
        Waveform([0.0, 1.5])


def test_frame_count():
    assert dsp.stft_magnitude(Waveform(np.zeros(22050))).frames == 87


def test_zero_signal_linear():
    spec = dsp.stft_magnitude(Waveform(np.zeros(4096)))
    assert spec.bins == 513
    np.testing.assert_allclose(spec.values, math.sqrt(1e-9))
    assert np.all(dsp.stft_magnitude(Waveform(np.zeros(4096)), eps=0.0).values == 0)


def test_sine_peak_bin():
    cfg = StftConfig()
    t = np.arange(22050)
    w = Waveform(0.5 * np.sin(2 * np.pi * 32 * t / cfg.fft_size))
    spec = dsp.stft_magnitude(w, cfg)
    interior = spec.values[4:-4]
    assert np.all(np.argmax(interior, axis=1) == 32)


def test_rfft_matches_direct_dft(rng):
    cfg = StftConfig(fft_size=64, window_size=64, hop_size=16)
    w = Waveform(rng.uniform(-0.9, 0.9, size=300))
    frames = dsp.frame_signal(w.samples, cfg) * dsp.hann_window(cfg)
    ref = np.abs(np.array([direct_dft(f) for f in frames]))[:, : cfg.n_bins]
    np.testing.assert_allclose(dsp.stft_magnitude(w, cfg, eps=0.0).values, ref, atol=1e-10)


def test_window_is_periodic_hann():
    win = dsp.hann_window(StftConfig())
    assert win[0] == 0.0 and win[512] == 1.0
    np.testing.assert_allclose(win[1:], win[1:][::-1], atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(alpha=st.floats(0, 1), seed=st.integers(0, 1000))
def test_magnitude_scales_linearly(alpha, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, size=2000)
    a = dsp.stft_magnitude(Waveform(alpha * x), eps=0.0).values
    b = dsp.stft_magnitude(Waveform(x), eps=0.0).values
    np.testing.assert_allclose(a, alpha * b, rtol=0, atol=1e-10)


def test_filterbank_rows_and_centers():
    fb = dsp.mel_filterbank()
    assert fb.shape == (80, 513)
    assert np.all(fb.sum(axis=1) > 0)
    assert np.all(np.diff(dsp.mel_edges(80, 0.0, 11025.0)) > 0)
    assert np.all(np.diff(np.argmax(fb, axis=1)) >= 0)


@pytest.mark.parametrize("norm", ["slaney", "none"])
def test_filterbank_all_ones_direct_sum(norm):
    cfg = StftConfig()
    fb = dsp.mel_filterbank(80, 0.0, None, cfg, norm=norm)
    got = fb @ np.ones(cfg.n_bins)
    edges = [700.0 * (10 ** (m / 2595.0) - 1) for m in np.linspace(0, 2595.0 * math.log10(1 + 11025 / 700), 82)]
    for i in range(80):
        lo, c, hi = edges[i], edges[i + 1], edges[i + 2]
        total = 0.0
        for k in range(cfg.n_bins):
            f = k * cfg.sample_rate / cfg.fft_size
            if lo < f < c:
                total += (f - lo) / (c - lo)
            elif c <= f < hi:
                total += (hi - f) / (hi - c)
        if norm == "slaney":
            total *= 2.0 / (hi - lo)
        assert abs(got[i] - total) < 1e-10


def test_zero_signal_mel():
    spec = dsp.mel_spectrogram(Waveform(np.zeros(22050)))
    assert spec.bins == 80
    assert np.all(spec.values == math.log(1e-5))


def test_mel_is_composition(rng):
    w = Waveform(rng.uniform(-0.5, 0.5, size=5000))
    cfg = StftConfig()
    lin = dsp.stft_magnitude(w, cfg)
    fb = dsp.mel_filterbank(cfg.n_mels, cfg.fmin, cfg.mel_fmax, cfg)
    ref = np.log(np.maximum(lin.values @ fb.T, cfg.log_floor))
    mel = dsp.mel_spectrogram(w, cfg)
    assert mel.frames == lin.frames
    np.testing.assert_array_equal(mel.values, ref)


def test_parseval(rng):
    cfg = StftConfig(fft_size=256, window_size=256, hop_size=64)
    w = Waveform(rng.uniform(-1, 1, size=1000))
    frames = dsp.frame_signal(w.samples, cfg) * dsp.hann_window(cfg)
    mag = dsp.stft_magnitude(w, cfg, eps=0.0).values
    for f, m in zip(frames, mag):
        energy = m[0] ** 2 + m[-1] ** 2 + 2 * np.sum(m[1:-1] ** 2)
        full = np.sum(np.abs(direct_dft(f)) ** 2)
        assert abs(energy - full) / full < 1e-6


def test_invalid_mel_range():
    with pytest.raises(DSPError):
        dsp.mel_filterbank(80, 5000.0, 4000.0)


def test_binary_roundtrip(tmp_path, rng):
    spec = dsp.Spectrogram(rng.normal(size=(5, 7)), "log-mel")
    dsp.write_spec_binary(tmp_path / "a.bin", spec)
    raw = (tmp_path / "a.bin").read_bytes()
    assert raw[:4] == b"SPEC" and len(raw) == 13 + 8 * 35
    back = dsp.read_spec_binary(tmp_path / "a.bin")
    assert back.scale == "log-mel"
    np.testing.assert_array_equal(back.values, spec.values)


def test_binary_rejects_garbage(tmp_path):
    (tmp_path / "g.bin").write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(DSPError, match="magic"):
        dsp.read_spec_binary(tmp_path / "g.bin")
    spec = dsp.Spectrogram(np.zeros((2, 2)), "linear")
    dsp.write_spec_binary(tmp_path / "t.bin", spec)
    (tmp_path / "t.bin").write_bytes((tmp_path / "t.bin").read_bytes()[:-1])
    with pytest.raises(DSPError, match="expected"):
        dsp.read_spec_binary(tmp_path / "t.bin")


def test_csv_roundtrip(tmp_path, rng):
    m = rng.normal(size=(4, 3))
    m[0, 0] = 2.0
    dsp.write_matrix_csv(tmp_path / "m.csv", m)
    assert (tmp_path / "m.csv").read_text().startswith("2,")
    np.testing.assert_array_equal(dsp.read_matrix_csv(tmp_path / "m.csv"), m)


def test_csv_rejects_ragged(tmp_path):
    (tmp_path / "r.csv").write_text("1,2\n3\n")
    with pytest.raises(DSPError):
        dsp.read_matrix_csv(tmp_path / "r.csv")
