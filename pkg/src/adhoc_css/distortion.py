"""Device-distortion augmentation: band-pass filtering, amplitude clipping,
and constant delay perturbation, each applied independently per device."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioClip

BANDPASS_LOW_RANGE = (50.0, 200.0)
BANDPASS_HIGH_RANGE = (4000.0, 7000.0)
CLIP_RATIO_RANGE = (0.55, 0.9)
DELAY_MS_RANGE = (-20.0, 20.0)


class DistortionError(ValueError):
    pass


@dataclass
class DistortionParams:
    bandpass: tuple[float, float] | None = None  # (low_cut, high_cut) Hz
    clip_ratio: float | None = None
    delay_ms: float | None = None


@dataclass
class DistortionPolicy:
    p_bandpass: float = 0.40
    p_clip: float = 0.05
    p_delay: float = 0.80

    def __post_init__(self):
        for p in (self.p_bandpass, self.p_clip, self.p_delay):
            if not 0.0 <= p <= 1.0:
                raise DistortionError(f"probability {p} outside [0, 1]")


def sample_params(policy: DistortionPolicy, rng: np.random.Generator) -> DistortionParams:
    params = DistortionParams()
    if rng.random() < policy.p_bandpass:
        params.bandpass = (rng.uniform(*BANDPASS_LOW_RANGE),
                           rng.uniform(*BANDPASS_HIGH_RANGE))
    if rng.random() < policy.p_clip:
        params.clip_ratio = rng.uniform(*CLIP_RATIO_RANGE)
    if rng.random() < policy.p_delay:
        params.delay_ms = rng.uniform(*DELAY_MS_RANGE)
    return params


def _bandpass_gain(freqs: np.ndarray, low_cut: float, high_cut: float) -> np.ndarray:
    """Zero-phase brick-wall band-pass with raised-cosine transitions one
    third of an octave wide around each cutoff."""
    ratio = 2.0 ** (1.0 / 6.0)  # half of a third-octave on either side
    gain = np.ones_like(freqs)

    lo0, lo1 = low_cut / ratio, low_cut * ratio
    gain[freqs <= lo0] = 0.0
    rise = (freqs > lo0) & (freqs < lo1)
    gain[rise] = 0.5 * (1.0 - np.cos(np.pi * (freqs[rise] - lo0) / (lo1 - lo0)))

    hi0, hi1 = high_cut / ratio, high_cut * ratio
    gain[freqs >= hi1] = 0.0
    fall = (freqs > hi0) & (freqs < hi1)
    gain[fall] *= 0.5 * (1.0 + np.cos(np.pi * (freqs[fall] - hi0) / (hi1 - hi0)))
    return gain


def apply_distortion(clip: AudioClip, params: DistortionParams) -> AudioClip:
    """Apply filter -> clip -> delay. Output length equals input length."""
    x = clip.samples.copy()
    fs = clip.sample_rate

    if params.bandpass is not None:
        low, high = params.bandpass
        if not low < high < fs / 2:
            raise DistortionError(f"invalid cutoffs ({low}, {high}) at fs {fs}")
        spec = np.fft.rfft(x)
        freqs = np.fft.rfftfreq(len(x), d=1.0 / fs)
        x = np.fft.irfft(spec * _bandpass_gain(freqs, low, high), n=len(x))

    if params.clip_ratio is not None:
        threshold = params.clip_ratio * np.max(np.abs(x)) if len(x) else 0.0
        x = np.clip(x, -threshold, threshold)

    if params.delay_ms is not None:
        shift = int(round(params.delay_ms * fs / 1000.0))
        if shift > 0:
            x = np.concatenate([np.zeros(shift), x[:-shift] if shift < len(x) else x[:0]])
        elif shift < 0:
            shift = -shift
            x = np.concatenate([x[shift:], np.zeros(min(shift, len(x)))])
        x = x[:len(clip.samples)]

    return AudioClip(x, fs)
