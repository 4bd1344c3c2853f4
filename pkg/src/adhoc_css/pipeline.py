"""Sliding-window continuous separation: per-window inference, posterior-SNR
channel selection, inter-window permutation alignment, speaker-count-gated
merging, and overlap-add stitching into exactly two output streams."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .audio import StftConfig, stft, istft
from .counting import DecisionRule, decide_multi_speaker

logger = logging.getLogger(__name__)

POSTERIOR_SNR_EPS = 1e-8

_PERMS = ((0, 1), (1, 0))


class PipelineError(ValueError):
    pass


@dataclass
class CssConfig:
    window_s: float = 4.0
    hop_s: float = 2.0
    num_outputs: int = 2
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if not 0 < self.hop_s < self.window_s:
            raise PipelineError("hop_s must be positive and below window_s")

    def window_frames(self, sample_rate: int) -> int:
        return int(round(self.window_s * sample_rate / self.stft.hop))

    def hop_frames(self, sample_rate: int) -> int:
        return int(round(self.hop_s * sample_rate / self.stft.hop))


@dataclass
class WindowResult:
    index: int
    start_frame: int
    n_frames: int
    selected_channel: int
    permutation: tuple[int, int]
    multi_speaker: bool
    posterior_snrs: list[float]
    truncated: bool = False


def select_channel(masks: np.ndarray, channel_specs) -> tuple[int, list[float]]:
    """Posterior-SNR channel choice.

    SNR_c = sum((mbar*|X_c|)^2) / (sum(((1-mbar)*|X_c|)^2) + eps) with
    mbar = min(mask1 + mask2, 1). Ties go to the lowest index.
    """
    mbar = np.minimum(masks[0] + masks[1], 1.0)
    snrs = []
    for spec in channel_specs:
        mag = np.abs(spec)
        speech = np.sum((mbar * mag) ** 2)
        residual = np.sum(((1.0 - mbar) * mag) ** 2)
        snrs.append(float(speech / (residual + POSTERIOR_SNR_EPS)))
    return int(np.argmax(snrs)), snrs


def align_permutation(prev_tail_mag: np.ndarray, cur_head_mag: np.ndarray) -> tuple[int, int]:
    """Permutation minimizing the summed Euclidean distance between the
    previous window's committed magnitudes and the current candidates over
    the overlapped frames."""
    if prev_tail_mag.shape[1] == 0:
        raise PipelineError("empty overlap region")
    best = None
    for perm in _PERMS:
        dist = sum(np.linalg.norm(prev_tail_mag[i] - cur_head_mag[perm[i]])
                   for i in range(2))
        if best is None or dist < best[0]:
            best = (dist, perm)
    return best[1]


def _crossfade(n: int) -> np.ndarray:
    # raised-cosine fade-in; its reversal is the exact complement
    return 0.5 * (1.0 - np.cos(np.pi * (np.arange(n) + 0.5) / n))


def run_css(channels, sep_model, count_model=None, cfg: CssConfig | None = None,
            seed: int = 0, head: str = "s2", rule: DecisionRule | None = None,
            count_merge: bool = True, mask_override=None, decision_override=None,
            sample_rate: int = 16000):
    """Process an aligned multi-channel session into two output streams.

    `mask_override(index, mag_tensor) -> masks` and
    `decision_override(index) -> bool` bypass the separation model and the
    counting gate respectively (oracle/ablation hooks).

    Returns (stream1, stream2, [WindowResult]).
    """
    if cfg is None:
        cfg = CssConfig()
    if rule is None:
        rule = DecisionRule()
    channels = [np.asarray(c, dtype=np.float64) for c in channels]
    if not channels:
        raise PipelineError("session has no channels")
    n_samples = len(channels[0])
    if any(len(c) != n_samples for c in channels):
        raise PipelineError("channels differ in length; run alignment first")

    win_samples = int(round(cfg.window_s * sample_rate))
    truncated_session = n_samples < win_samples
    if truncated_session:
        channels = [np.pad(c, (0, win_samples - n_samples)) for c in channels]

    specs = [stft(c, cfg.stft) for c in channels]
    t_total, n_bins = specs[0].shape
    wf = cfg.window_frames(sample_rate)
    hf = cfg.hop_frames(sample_rate)

    starts = []
    s = 0
    while True:
        starts.append(s)
        if s + wf >= t_total:
            break
        s += hf

    rng = np.random.default_rng(seed)
    out_spec = np.zeros((2, t_total, n_bins), dtype=complex)
    prev_mag = None      # committed magnitudes of the previous window
    prev_end = 0
    reports = []

    for w, s in enumerate(starts):
        end = min(s + wf, t_total)
        wsl = slice(s, end)
        mag = np.abs(np.stack([sp[wsl] for sp in specs]))
        if mask_override is not None:
            masks = np.asarray(mask_override(w, mag), dtype=np.float64)
        else:
            masks = sep_model.forward(mag)

        chan, snrs = select_channel(masks, [sp[wsl] for sp in specs])
        sel = specs[chan][wsl]
        sep_spec = masks * sel[None]
        sep_mag = masks * np.abs(sel)[None]

        if decision_override is not None:
            multi = bool(decision_override(w))
        elif count_model is not None and count_merge:
            rc = int(rng.integers(0, len(specs)))
            count_out, _ = count_model.forward(np.abs(specs[rc][wsl]))
            multi = decide_multi_speaker(count_out, rule, head)
        else:
            multi = True

        if multi:
            cand_spec, cand_mag = sep_spec, sep_mag
        else:
            cand_spec = np.stack([sep_spec[0] + sep_spec[1],
                                  np.zeros_like(sep_spec[0])])
            cand_mag = np.stack([sep_mag[0] + sep_mag[1],
                                 np.zeros_like(sep_mag[0])])

        if w == 0:
            perm = (0, 1)
        else:
            ov = prev_end - s
            perm = align_permutation(prev_mag[:, -ov:], cand_mag[:, :ov])
        committed_spec = cand_spec[list(perm)]
        committed_mag = cand_mag[list(perm)]

        profile = np.ones(end - s)
        if w > 0:
            ov = prev_end - s
            profile[:ov] = _crossfade(ov)
        if w < len(starts) - 1:
            next_s = starts[w + 1]
            ov_next = end - next_s
            profile[-ov_next:] = _crossfade(ov_next)[::-1]
        out_spec[:, wsl] += committed_spec * profile[None, :, None]

        prev_mag = committed_mag
        prev_end = end
        reports.append(WindowResult(
            index=w, start_frame=s, n_frames=end - s, selected_channel=chan,
            permutation=perm, multi_speaker=multi, posterior_snrs=snrs,
            truncated=truncated_session))

    streams = [istft(out_spec[i], cfg.stft, length=n_samples) for i in range(2)]
    return streams[0], streams[1], reports
