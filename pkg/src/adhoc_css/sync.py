"""Cross-correlation alignment of asynchronous per-device recordings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .audio import AudioClip

DEFAULT_MAX_LAG_S = 2.0
DEFAULT_SCORE_FLOOR = 0.1


class SyncError(ValueError):
    pass


@dataclass
class AlignmentResult:
    lags: list[int]            # per-channel offset relative to channel 0
    peak_scores: list[float]   # normalized correlation peak per channel
    low_confidence: list[bool]


def estimate_lag(ref, other, max_lag: int, score_floor: float = DEFAULT_SCORE_FLOOR):
    """Return (lag, score, low_confidence) maximizing normalized cross-correlation.

    Positive lag means `other` is delayed relative to `ref` by that many
    samples. Search range is [-max_lag, max_lag].
    """
    a = ref.samples if isinstance(ref, AudioClip) else np.asarray(ref, dtype=np.float64)
    b = other.samples if isinstance(other, AudioClip) else np.asarray(other, dtype=np.float64)
    if max_lag < 0:
        raise SyncError("max_lag must be nonnegative")
    if len(a) < 2 * max_lag or len(b) < 2 * max_lag:
        raise SyncError("clips too short for requested max_lag")
    # full cross-correlation via frequency-domain product
    corr = fftconvolve(b, a[::-1], mode="full")
    # index len(a)-1 corresponds to zero lag of b relative to a
    center = len(a) - 1
    lo = max(center - max_lag, 0)
    hi = min(center + max_lag, len(corr) - 1)
    window = corr[lo:hi + 1]
    norm = np.linalg.norm(a) * np.linalg.norm(b)
    if norm == 0:
        raise SyncError("cannot correlate silent signals")
    scores = window / norm
    k = int(np.argmax(scores))
    lag = lo + k - center
    score = float(scores[k])
    return lag, score, score < score_floor


def align_session(channels: list[AudioClip], max_lag: int | None = None,
                  score_floor: float = DEFAULT_SCORE_FLOOR):
    """Shift every channel onto channel 0's timeline and trim to common support.

    Returns (aligned_channels, AlignmentResult). Channels whose correlation
    peak falls below `score_floor` abort the alignment.
    """
    if len(channels) < 2:
        raise SyncError("need at least 2 channels to align")
    rate = channels[0].sample_rate
    if max_lag is None:
        max_lag = int(DEFAULT_MAX_LAG_S * rate)
    lags = [0]
    scores = [1.0]
    flags = [False]
    bad = []
    for i, ch in enumerate(channels[1:], start=1):
        if ch.sample_rate != rate:
            raise SyncError(f"channel {i}: sample rate mismatch")
        lag, score, low = estimate_lag(channels[0], ch, max_lag, score_floor)
        lags.append(lag)
        scores.append(score)
        flags.append(low)
        if low:
            bad.append(i)
    if bad:
        raise SyncError(f"sub-floor correlation for channel(s) {bad}")

    # channel i starts lag_i samples late; drop its first lag_i samples
    # (or pad when it leads), then trim all to the shortest
    shifted = []
    for ch, lag in zip(channels, lags):
        x = ch.samples
        if lag > 0:
            x = x[lag:]
        elif lag < 0:
            x = np.pad(x, (-lag, 0))
        shifted.append(x)
    n = min(len(x) for x in shifted)
    aligned = [AudioClip(x[:n], rate) for x in shifted]
    return aligned, AlignmentResult(lags, scores, flags)
