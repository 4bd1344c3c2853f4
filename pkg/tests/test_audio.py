import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adhoc_css.audio import (AudioClip, AudioError, StftConfig, apply_mask,
                             istft, magnitude_tensor, read_wav, stft, write_wav)


def test_default_config_has_257_bins():
    assert StftConfig().num_bins == 257


def test_stft_frame_count_one_second_zero_clip():
    spec = stft(AudioClip(np.zeros(16000)))
    assert spec.shape == (61, 257)
    assert np.all(spec == 0)


def test_stft_rejects_short_input():
    with pytest.raises(AudioError, match="too short"):
        stft(AudioClip(np.zeros(100)))


def test_stft_sine_bin_concentration_vs_dft_oracle():
    # rectangular-window variant: sine at an exact bin center lands in that bin
    cfg = StftConfig(window=np.ones(512))
    k = 40
    freq = k * 16000 / 512
    t = np.arange(4096) / 16000
    x = np.sin(2 * np.pi * freq * t)
    spec = stft(AudioClip(x), cfg)
    mags = np.abs(spec[1])
    assert np.argmax(mags) == k
    # direct O(N^2) DFT of the same frame
    frame = x[cfg.hop:cfg.hop + cfg.fft_size]
    n = np.arange(512)
    oracle = np.array([np.sum(frame * np.exp(-2j * np.pi * b * n / 512))
                       for b in range(257)])
    np.testing.assert_allclose(spec[1], oracle, atol=1e-8)


@pytest.mark.parametrize("length", [4096, 16000, 16384])
def test_roundtrip_interior(length, rng):
    x = 0.5 * rng.standard_normal(length)
    y = istft(stft(AudioClip(x)))
    n = min(len(x), len(y))
    assert np.max(np.abs(y[512:n - 512] - x[512:n - 512])) < 1e-6


def test_roundtrip_preserves_tone_rms(tone_clip):
    cfg = StftConfig()
    y = istft(stft(tone_clip, cfg), cfg)
    x = tone_clip.samples
    interior = slice(512, len(y) - 512)
    rms_in = np.sqrt(np.mean(x[interior] ** 2))
    rms_out = np.sqrt(np.mean(y[interior] ** 2))
    assert abs(rms_out - rms_in) / rms_in < 1e-3


def test_istft_zero_spectrogram():
    assert np.all(istft(np.zeros((10, 257), dtype=complex)) == 0)


def test_istft_bin_mismatch():
    with pytest.raises(AudioError, match="bin count"):
        istft(np.zeros((10, 100), dtype=complex))


def test_apply_mask_identity_and_zero(rng):
    spec = rng.standard_normal((8, 257)) + 1j * rng.standard_normal((8, 257))
    np.testing.assert_array_equal(apply_mask(spec, np.ones((8, 257))), spec)
    assert np.all(apply_mask(spec, np.zeros((8, 257))) == 0)


def test_apply_mask_shape_mismatch(rng):
    with pytest.raises(AudioError, match="shape"):
        apply_mask(np.zeros((8, 257), dtype=complex), np.zeros((9, 257)))


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 32 - 1))
def test_apply_mask_preserves_phase(seed):
    r = np.random.default_rng(seed)
    spec = r.standard_normal((4, 257)) + 1j * r.standard_normal((4, 257))
    mask = r.uniform(0.1, 2.0, size=(4, 257))
    out = apply_mask(spec, mask)
    np.testing.assert_allclose(np.angle(out), np.angle(spec), atol=1e-12)


def test_oracle_mask_improves_si_snr(rng):
    # ideal-ratio-style mask on a synthetic 2-source mixture
    from adhoc_css.metrics import si_snr
    fs = 16000
    t = np.arange(2 * fs) / fs
    s1 = 0.5 * np.sin(2 * np.pi * 300 * t) * (1 + 0.3 * np.sin(2 * np.pi * 2 * t))
    s2 = 0.4 * np.sin(2 * np.pi * 1700 * t) * (1 + 0.3 * np.cos(2 * np.pi * 3 * t))
    mix = s1 + s2
    cfg = StftConfig()
    spec_mix = stft(AudioClip(mix), cfg)
    m1 = np.abs(stft(AudioClip(s1), cfg))
    m2 = np.abs(stft(AudioClip(s2), cfg))
    irm = m1 / (m1 + m2 + 1e-9)
    est = istft(apply_mask(spec_mix, irm), cfg, length=len(mix))
    assert si_snr(est, s1) > si_snr(mix, s1) + 5.0


def test_magnitude_tensor_stacks_channels(rng):
    specs = [rng.standard_normal((5, 257)) + 1j * rng.standard_normal((5, 257))
             for _ in range(3)]
    mag = magnitude_tensor(specs)
    assert mag.shape == (3, 5, 257)
    assert np.all(mag >= 0)


def test_wav_roundtrip(tmp_path, tone_clip):
    path = tmp_path / "tone.wav"
    write_wav(path, tone_clip)
    clip = read_wav(path)
    assert clip.sample_rate == 16000
    assert np.max(np.abs(clip.samples - tone_clip.samples)) < 1.0 / 32767


def test_clip_rejects_nonfinite():
    with pytest.raises(AudioError, match="finite"):
        AudioClip(np.array([0.0, np.nan]))
