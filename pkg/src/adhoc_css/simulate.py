"""Synthetic multi-device mixture generation.

Builds training/validation material: shoebox image-method reverberation,
overlap-style scheduling between two speakers, per-channel Gaussian noise,
and optional per-device distortion augmentation.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .audio import AudioClip, StftConfig, read_wav, write_wav
from .distortion import DistortionPolicy, DistortionParams, sample_params, apply_distortion

logger = logging.getLogger(__name__)

SPEED_OF_SOUND = 343.0

OVERLAP_STYLES = ("single", "inclusive", "sequential", "full_overlap", "partial_overlap")
STYLE_WEIGHTS = (0.40, 0.09, 0.06, 0.36, 0.09)


class SimulationError(ValueError):
    pass


@dataclass
class RoomSpec:
    dims: tuple[float, float, float]
    absorption: float
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        if not 0.0 < self.absorption <= 1.0:
            raise SimulationError("absorption must be in (0, 1]")
        if any(d <= 0 for d in self.dims):
            raise SimulationError("room dimensions must be positive")


def image_method_rir(room: RoomSpec, src, mic, max_order: int,
                     fs: int = 16000, rir_len_s: float = 0.5) -> np.ndarray:
    """Shoebox image-method impulse response.

    Each image source up to `max_order` total wall reflections contributes a
    tap beta^order / (4*pi*distance) at the nearest-sample delay distance/c,
    where beta = sqrt(1 - absorption).
    """
    src = np.asarray(src, dtype=np.float64)
    mic = np.asarray(mic, dtype=np.float64)
    if max_order < 0:
        raise SimulationError("max_order must be nonnegative")
    if np.allclose(src, mic):
        raise SimulationError("source and microphone positions coincide")
    for p, name in ((src, "source"), (mic, "microphone")):
        if np.any(p < 0) or np.any(p > room.dims):
            raise SimulationError(f"{name} position outside room")

    beta = np.sqrt(1.0 - room.absorption)
    n_taps = int(round(rir_len_s * fs))
    rir = np.zeros(n_taps)
    l_max = (max_order + 1) // 2

    # per-axis image coordinates and their reflection counts
    axes = []
    for ax in range(3):
        entries = []
        for u in (0, 1):
            for l in range(-l_max, l_max + 1):
                order = abs(l - u) + abs(l)
                if order <= max_order:
                    coord = (1 - 2 * u) * src[ax] + 2 * l * room.dims[ax]
                    entries.append((coord, order))
        axes.append(entries)

    c = room.speed_of_sound
    for x, ox in axes[0]:
        for y, oy in axes[1]:
            oxy = ox + oy
            if oxy > max_order:
                continue
            for z, oz in axes[2]:
                order = oxy + oz
                if order > max_order:
                    continue
                d = np.sqrt((x - mic[0]) ** 2 + (y - mic[1]) ** 2 + (z - mic[2]) ** 2)
                tap = int(round(d / c * fs))
                if tap < n_taps:
                    rir[tap] += (beta ** order) / (4.0 * np.pi * d)
    return rir


def render_source(dry: np.ndarray, rir: np.ndarray) -> np.ndarray:
    """Linear convolution, length len(dry) + len(rir) - 1."""
    rir = np.asarray(rir, dtype=np.float64)
    if rir.size == 0:
        raise SimulationError("empty impulse response")
    return fftconvolve(np.asarray(dry, dtype=np.float64), rir, mode="full")


def sample_style(rng: np.random.Generator, weights=STYLE_WEIGHTS) -> str:
    weights = np.asarray(weights, dtype=np.float64)
    if not np.isclose(weights.sum(), 1.0):
        raise SimulationError("style weights must sum to 1")
    return OVERLAP_STYLES[int(rng.choice(len(OVERLAP_STYLES), p=weights))]


def schedule_overlap(style: str, utt_a_len: int, utt_b_len: int,
                     rng: np.random.Generator):
    """Sample onsets (in samples) realizing the requested overlap style.

    Returns (onset_a, onset_b); onset_b is None for single-speaker segments.
    """
    if utt_a_len <= 0 or (style != "single" and utt_b_len <= 0):
        raise SimulationError("utterance lengths must be positive")
    if style == "single":
        return 0, None
    if style == "full_overlap":
        return 0, 0
    if style == "sequential":
        gap = int(rng.integers(0, utt_a_len // 4 + 1))
        return 0, utt_a_len + gap
    if style == "inclusive":
        if utt_b_len >= utt_a_len - 1:
            raise SimulationError("inclusive overlap needs utt_b strictly shorter")
        return 0, int(rng.integers(1, utt_a_len - utt_b_len))
    if style == "partial_overlap":
        lo = max(1, utt_a_len - utt_b_len + 1)
        if lo > utt_a_len - 1:
            raise SimulationError("partial overlap impossible for these lengths")
        return 0, int(rng.integers(lo, utt_a_len))
    raise SimulationError(f"unknown overlap style {style!r}")


def add_noise(channels: list[np.ndarray], snr_db: float,
              rng: np.random.Generator) -> list[np.ndarray]:
    """Independent Gaussian noise per channel at the requested per-channel SNR.
    snr_db = +inf is the no-noise mode."""
    if np.isinf(snr_db) and snr_db > 0:
        return [np.array(c, dtype=np.float64) for c in channels]
    if not np.isfinite(snr_db):
        raise SimulationError("snr_db must be finite (or +inf for no noise)")
    out = []
    for i, x in enumerate(channels):
        p_sig = np.mean(np.asarray(x) ** 2)
        if p_sig == 0:
            raise SimulationError(f"channel {i} is silent; SNR undefined")
        sigma = np.sqrt(p_sig / 10.0 ** (snr_db / 10.0))
        noise = rng.standard_normal(len(x)) * sigma
        out.append(x + noise)
    return out


@dataclass
class SimConfig:
    sample_rate: int = 16000
    num_devices: int = 3
    duration_s: float = 4.0
    room_dim_ranges: tuple = ((3.0, 8.0), (3.0, 8.0), (2.5, 4.0))
    absorption_range: tuple[float, float] = (0.3, 0.9)
    max_order: int = 4
    rir_len_s: float = 0.25
    snr_db_range: tuple[float, float] = (-5.0, 15.0)
    style_weights: tuple = STYLE_WEIGHTS
    distortion: DistortionPolicy | None = None
    ref_channel: int = 0
    position_margin: float = 0.3
    stft: StftConfig = field(default_factory=StftConfig)


@dataclass
class MixtureSample:
    mixture: list[np.ndarray]       # one waveform per device
    clean_refs: list[np.ndarray]    # two reverberant images at the reference channel
    activity: np.ndarray            # (2, T_frames)
    counts: np.ndarray              # (T_frames,)
    style: str
    snr_db: float
    distortion: list[DistortionParams]
    room: RoomSpec


def _random_point(room: RoomSpec, margin: float, rng) -> np.ndarray:
    return np.array([rng.uniform(margin, d - margin) for d in room.dims])


def _frame_activity(onset, length, total, stft_cfg: StftConfig) -> np.ndarray:
    n_frames = (total - stft_cfg.fft_size) // stft_cfg.hop + 1
    centers = np.arange(n_frames) * stft_cfg.hop + stft_cfg.fft_size // 2
    return ((centers >= onset) & (centers < onset + length)).astype(np.float64)


def generate_mixture(catalog: dict[str, list[np.ndarray]], cfg: SimConfig,
                     rng: np.random.Generator) -> MixtureSample:
    """Sample style, room, and layout; render, mix, and label one example."""
    speakers = sorted(catalog)
    if len(speakers) < 2:
        raise SimulationError("catalog needs at least 2 distinct speakers")
    fs = cfg.sample_rate
    total = int(round(cfg.duration_s * fs))

    style = sample_style(rng, cfg.style_weights)
    n_spk = 1 if style == "single" else 2
    chosen = list(rng.choice(speakers, size=n_spk, replace=False))

    # crop dry utterances to lengths that fit the configured duration
    def draw_utt(spk, max_len):
        utts = catalog[spk]
        utt = utts[int(rng.integers(0, len(utts)))]
        if len(utt) > max_len:
            start = int(rng.integers(0, len(utt) - max_len + 1))
            utt = utt[start:start + max_len]
        return np.asarray(utt, dtype=np.float64)

    for _ in range(20):
        if style == "single":
            utt_a = draw_utt(chosen[0], total)
            utt_b = np.zeros(0)
        elif style == "sequential":
            utt_a = draw_utt(chosen[0], int(total * 0.45))
            utt_b = draw_utt(chosen[1], int(total * 0.45))
        elif style == "full_overlap":
            utt_a = draw_utt(chosen[0], total)
            utt_b = draw_utt(chosen[1], total)
            n = min(len(utt_a), len(utt_b))
            utt_a, utt_b = utt_a[:n], utt_b[:n]
        else:
            utt_a = draw_utt(chosen[0], total)
            utt_b = draw_utt(chosen[1], max(1, int(len(utt_a) * 0.6)))
        try:
            onset_a, onset_b = schedule_overlap(style, len(utt_a), len(utt_b), rng)
            break
        except SimulationError:
            continue
    else:
        raise SimulationError(f"could not schedule style {style!r}")

    room = RoomSpec(tuple(rng.uniform(lo, hi) for lo, hi in cfg.room_dim_ranges),
                    rng.uniform(*cfg.absorption_range))
    src_pos = [_random_point(room, cfg.position_margin, rng) for _ in range(n_spk)]
    mic_pos = [_random_point(room, cfg.position_margin, rng)
               for _ in range(cfg.num_devices)]

    placed = []
    for utt, onset in zip((utt_a, utt_b), (onset_a, onset_b)):
        x = np.zeros(total)
        if onset is not None and len(utt):
            end = min(onset + len(utt), total)
            x[onset:end] = utt[:end - onset]
        placed.append(x)

    rendered = np.zeros((2, cfg.num_devices, total))
    for s in range(n_spk):
        for d in range(cfg.num_devices):
            rir = image_method_rir(room, src_pos[s], mic_pos[d], cfg.max_order,
                                   fs, cfg.rir_len_s)
            rendered[s, d] = render_source(placed[s], rir)[:total]

    mixture = list(rendered.sum(axis=0))
    lo, hi = cfg.snr_db_range
    snr_db = np.inf if np.isinf(lo) and np.isinf(hi) else float(rng.uniform(lo, hi))
    mixture = add_noise(mixture, snr_db, rng)

    clean_refs = [rendered[0, cfg.ref_channel], rendered[1, cfg.ref_channel]]
    dist_params = []
    if cfg.distortion is not None:
        for d in range(cfg.num_devices):
            params = sample_params(cfg.distortion, rng)
            dist_params.append(params)
            mixture[d] = apply_distortion(AudioClip(
                np.clip(mixture[d], -1e6, 1e6), fs), params).samples
        # the reference device's front end colors everything it records, so
        # its linear components (filter, delay) apply to the targets as well;
        # clipping is level-dependent and only makes sense on the mixture
        rp = dist_params[cfg.ref_channel]
        linear = DistortionParams(bandpass=rp.bandpass, delay_ms=rp.delay_ms)
        clean_refs = [apply_distortion(AudioClip(r, fs), linear).samples
                      for r in clean_refs]
    else:
        dist_params = [DistortionParams() for _ in range(cfg.num_devices)]

    act_a = _frame_activity(onset_a, len(utt_a), total, cfg.stft)
    if onset_b is None:
        act_b = np.zeros_like(act_a)
    else:
        act_b = _frame_activity(onset_b, len(utt_b), total, cfg.stft)
    activity = np.stack([act_a, act_b])

    return MixtureSample(mixture=mixture,
                         clean_refs=clean_refs,
                         activity=activity,
                         counts=activity.sum(axis=0),
                         style=style, snr_db=snr_db,
                         distortion=dist_params, room=room)


def synthesize_catalog(num_speakers: int, utts_per_speaker: int,
                       duration_s: float, rng: np.random.Generator,
                       fs: int = 16000) -> dict[str, list[np.ndarray]]:
    """Deterministic harmonic 'speech-like' corpus for tests and toy runs.

    Each speaker owns a distinct fundamental; utterances are amplitude-
    modulated harmonic stacks with random pauses, so different speakers
    occupy distinct spectral patterns.
    """
    catalog = {}
    n = int(duration_s * fs)
    t = np.arange(n) / fs
    for s in range(num_speakers):
        f0 = 110.0 * (1.3 ** s)
        utts = []
        for _ in range(utts_per_speaker):
            x = np.zeros(n)
            for k in range(1, 9):
                if k * f0 >= fs / 2:
                    break
                amp = rng.uniform(0.2, 1.0) / k
                phase = rng.uniform(0, 2 * np.pi)
                # slow random vibrato so frames differ
                fm = 1.0 + 0.01 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + phase)
                x += amp * np.sin(2 * np.pi * k * f0 * fm * t + phase)
            # syllable-like energy bursts
            env = np.clip(rng.normal(0.6, 0.4, size=max(1, int(duration_s * 4))), 0.05, 1.2)
            env = np.interp(np.linspace(0, 1, n), np.linspace(0, 1, len(env)), env)
            x *= env
            x /= max(1e-9, np.max(np.abs(x))) / 0.6
            utts.append(x)
        catalog[f"spk{s}"] = utts
    return catalog


def load_catalog(root: str) -> dict[str, list[np.ndarray]]:
    """Speaker-labeled folders of 16 kHz mono WAVs."""
    catalog = {}
    for spk in sorted(os.listdir(root)):
        spk_dir = os.path.join(root, spk)
        if not os.path.isdir(spk_dir):
            continue
        utts = [read_wav(os.path.join(spk_dir, f)).samples
                for f in sorted(os.listdir(spk_dir)) if f.endswith(".wav")]
        if utts:
            catalog[spk] = utts
    if not catalog:
        raise SimulationError(f"no speaker folders with WAVs under {root}")
    return catalog


def write_corpus(out_dir: str, catalog, cfg: SimConfig, num_samples: int,
                 seed: int) -> str:
    """Generate `num_samples` mixtures; returns the manifest path.

    Each sample owns an independent RNG stream spawned from the seed, so the
    corpus is reproducible regardless of generation order.
    """
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    streams = np.random.SeedSequence(seed).spawn(num_samples)
    with open(manifest_path, "w") as mf:
        for i, ss in enumerate(streams):
            sample = generate_mixture(catalog, cfg, np.random.default_rng(ss))
            sid = f"sample_{i:05d}"
            mix_paths, ref_paths = [], []
            peak = max(np.max(np.abs(np.concatenate(sample.mixture))), 1e-9)
            scale = min(1.0, 0.95 / peak)
            for d, ch in enumerate(sample.mixture):
                p = f"{sid}_mix_ch{d}.wav"
                write_wav(os.path.join(out_dir, p),
                          AudioClip(ch * scale, cfg.sample_rate))
                mix_paths.append(p)
            for s, ref in enumerate(sample.clean_refs):
                p = f"{sid}_ref{s}.wav"
                write_wav(os.path.join(out_dir, p),
                          AudioClip(ref * scale, cfg.sample_rate))
                ref_paths.append(p)
            label_path = f"{sid}_labels.npz"
            np.savez(os.path.join(out_dir, label_path),
                     activity=sample.activity, counts=sample.counts)
            mf.write(json.dumps({
                "id": sid, "mixture": mix_paths, "refs": ref_paths,
                "labels": label_path, "style": sample.style,
                "snr_db": round(sample.snr_db, 4), "scale": scale,
                "distortion": [dataclasses.asdict(p) for p in sample.distortion],
            }) + "\n")
    return manifest_path
