"""Waveform <-> time-frequency conversion and WAV/manifest I/O.

Conventions shared by every other module:
  * waveforms are 1-D float64 arrays with amplitudes nominally in [-1, 1]
  * spectrograms are frame-major complex128 arrays of shape (frames, bins)
  * multi-channel magnitude tensors are (channels, frames, bins)
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

DEFAULT_SAMPLE_RATE = 16000


class AudioError(ValueError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError("AudioClip expects a mono 1-D sample array")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("AudioClip samples must be finite")
        if self.sample_rate <= 0:
            raise AudioError("sample_rate must be positive")

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


def _sqrt_hann(n: int) -> np.ndarray:
    # periodic Hann so that w^2[k] + w^2[k + n/2] == 1 exactly (COLA at 50%)
    return np.sqrt(0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n)))


@dataclass
class StftConfig:
    fft_size: int = 512
    hop: int = 256
    window: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.fft_size <= 0 or self.hop <= 0:
            raise AudioError("fft_size and hop must be positive")
        if self.window is None:
            self.window = _sqrt_hann(self.fft_size)
        self.window = np.asarray(self.window, dtype=np.float64)
        if len(self.window) != self.fft_size:
            raise AudioError("window length must equal fft_size")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1


def stft(clip: AudioClip, cfg: StftConfig | None = None) -> np.ndarray:
    """STFT of a mono clip. Returns (frames, bins) complex128, no padding."""
    if cfg is None:
        cfg = StftConfig()
    x = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    if len(x) < cfg.fft_size:
        raise AudioError("input too short: need at least one full frame")
    n_frames = (len(x) - cfg.fft_size) // cfg.hop + 1
    idx = np.arange(cfg.fft_size)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    frames = x[idx] * cfg.window[None, :]
    return np.fft.rfft(frames, axis=1)


def istft(spec: np.ndarray, cfg: StftConfig | None = None, length: int | None = None) -> np.ndarray:
    """Overlap-add synthesis with the matched square-root window pair.

    Interior samples (fft_size away from either edge) reconstruct exactly;
    edge samples are compensated by the accumulated window energy.
    """
    if cfg is None:
        cfg = StftConfig()
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[1] != cfg.num_bins:
        raise AudioError(
            f"spectrogram bin count {spec.shape[-1]} does not match config ({cfg.num_bins})"
        )
    n_frames = spec.shape[0]
    out_len = (n_frames - 1) * cfg.hop + cfg.fft_size
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=1) * cfg.window[None, :]
    out = np.zeros(out_len)
    wsum = np.zeros(out_len)
    w2 = cfg.window ** 2
    for t in range(n_frames):
        s = t * cfg.hop
        out[s:s + cfg.fft_size] += frames[t]
        wsum[s:s + cfg.fft_size] += w2
    out /= np.maximum(wsum, 1e-12)
    if length is not None:
        if length <= out_len:
            out = out[:length]
        else:
            out = np.pad(out, (0, length - out_len))
    return out


def apply_mask(mix: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Element-wise mask on a complex spectrogram; mixture phase retained."""
    mix = np.asarray(mix)
    mask = np.asarray(mask, dtype=np.float64)
    if mix.shape != mask.shape:
        raise AudioError(f"shape mismatch: mix {mix.shape} vs mask {mask.shape}")
    return mask * mix


def magnitude_tensor(channel_specs: list[np.ndarray]) -> np.ndarray:
    """Stack per-channel spectrograms into a (C, T, F) magnitude tensor."""
    if not channel_specs:
        raise AudioError("need at least one channel")
    shapes = {s.shape for s in channel_specs}
    if len(shapes) != 1:
        raise AudioError(f"channels disagree on shape: {sorted(shapes)}")
    return np.abs(np.stack(channel_specs, axis=0))


def read_wav(path: str | os.PathLike) -> AudioClip:
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise AudioError(f"{path}: expected mono WAV, got shape {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported sample format {data.dtype}")
    return AudioClip(samples, rate)


def write_wav(path: str | os.PathLike, clip: AudioClip) -> None:
    x = np.clip(clip.samples, -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype(np.int16)
    wavfile.write(path, clip.sample_rate, pcm)


def read_session_manifest(path: str | os.PathLike) -> list[str]:
    """One WAV path per line; channel order = line order. Relative paths are
    resolved against the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    channels = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            channels.append(line if os.path.isabs(line) else os.path.join(base, line))
    if not channels:
        raise AudioError(f"{path}: empty session manifest")
    return channels


def load_session(manifest_path: str | os.PathLike) -> list[AudioClip]:
    clips = [read_wav(p) for p in read_session_manifest(manifest_path)]
    rates = {c.sample_rate for c in clips}
    if len(rates) != 1:
        raise AudioError(f"sample rates differ across channels: {sorted(rates)}")
    return clips
