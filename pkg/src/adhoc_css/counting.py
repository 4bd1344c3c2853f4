"""Single-channel speaker-counting models and window-level decision rules.

Two head variants:
  * s1 — two sigmoid nodes producing per-speaker voice-activity tracks
  * s2 — one linear node regressing the per-frame active-speaker count

Both share the separation model's cross-frame attention + BLSTM trunk
(no cross-channel attention; the input is one channel) and carry an
auxiliary mask head for multi-task training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import Layer, Linear, LayerNorm, EncoderSublayer, Blstm, sigmoid, check_finite

HEAD_KINDS = ("s1", "s2")


@dataclass
class CountModelConfig:
    head: str = "s2"
    num_layers: int = 3
    d_model: int = 32
    num_heads: int = 4
    rnn_cells: int = 64
    num_bins: int = 257

    def __post_init__(self):
        if self.head not in HEAD_KINDS:
            raise nn.NnError(f"head must be one of {HEAD_KINDS}")
        if self.d_model % self.num_heads != 0:
            raise nn.NnError("d_model must be divisible by num_heads")


@dataclass
class DecisionRule:
    s1_threshold: float = 0.5
    s2_threshold: float = 1.2
    run_length: int = 3


class CountModel(Layer):
    def __init__(self, cfg: CountModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.input_norm = LayerNorm(cfg.num_bins)
        self.embed = Linear(cfg.num_bins, cfg.d_model, rng)
        self.layers = [EncoderSublayer(cfg.d_model, cfg.num_heads, rng)
                       for _ in range(cfg.num_layers)]
        self.blstm1 = Blstm(cfg.d_model, cfg.rnn_cells, rng)
        self.blstm2 = Blstm(2 * cfg.rnn_cells, cfg.rnn_cells, rng)
        out_nodes = 2 if cfg.head == "s1" else 1
        self.count_head = Linear(2 * cfg.rnn_cells, out_nodes, rng)
        self.mask_head = Linear(2 * cfg.rnn_cells, 2 * cfg.num_bins, rng)

    def forward(self, mag: np.ndarray):
        """mag: single-channel (T, F) magnitudes.

        Returns (count_out, aux_masks): count_out is (T, 2) in (0, 1) for s1
        or (T,) unbounded for s2; aux_masks is (2, T, F) nonnegative.
        """
        mag = np.asarray(mag, dtype=np.float64)
        if mag.ndim != 2:
            raise nn.NnError(f"counting model takes one channel (T, F); got {mag.shape}")
        t, f = mag.shape
        if f != self.cfg.num_bins:
            raise nn.NnError(f"bin count {f} != configured {self.cfg.num_bins}")
        h = self.embed.forward(self.input_norm.forward(mag)[None])
        for layer in self.layers:
            h = layer.forward(h)
        check_finite(h, "attention stack")
        r = self.blstm2.forward(self.blstm1.forward(h[0]))
        z = self.count_head.forward(r)
        if self.cfg.head == "s1":
            count_out = sigmoid(z)
            self._sig = count_out
        else:
            count_out = z[:, 0]
        m = self.mask_head.forward(r)
        self._mask_sign = m > 0
        masks = (m * self._mask_sign).reshape(t, 2, f)
        return count_out, np.ascontiguousarray(masks.transpose(1, 0, 2))

    def backward(self, d_count, d_masks):
        """Gradients w.r.t. the post-activation head outputs."""
        t = self._mask_sign.shape[0]
        if self.cfg.head == "s1":
            dz = d_count * self._sig * (1.0 - self._sig)
        else:
            dz = np.asarray(d_count, dtype=np.float64).reshape(t, 1)
        dm = np.asarray(d_masks).transpose(1, 0, 2).reshape(t, -1) * self._mask_sign
        dr = self.count_head.backward(dz) + self.mask_head.backward(dm)
        dh = self.blstm1.backward(self.blstm2.backward(dr))[None]
        for layer in reversed(self.layers):
            dh = layer.backward(dh)
        self.input_norm.backward(self.embed.backward(dh))


def _has_run(active: np.ndarray, run_length: int) -> bool:
    count = 0
    for a in active:
        count = count + 1 if a else 0
        if count >= run_length:
            return True
    return False


def decide_multi_speaker(count_out: np.ndarray, rule: DecisionRule, head: str) -> bool:
    """True iff the head output crosses its threshold for `run_length` or
    more consecutive frames (both nodes simultaneously for s1)."""
    if head == "s1":
        out = np.asarray(count_out)
        active = (out[:, 0] > rule.s1_threshold) & (out[:, 1] > rule.s1_threshold)
    elif head == "s2":
        active = np.asarray(count_out).reshape(-1) > rule.s2_threshold
    else:
        raise nn.NnError(f"unknown head kind {head!r}")
    return _has_run(active, rule.run_length)


def merge_outputs(sig_a: np.ndarray, sig_b: np.ndarray):
    """Sum the two separated signals into channel 1; channel 2 is exact zeros."""
    sig_a = np.asarray(sig_a)
    sig_b = np.asarray(sig_b)
    if sig_a.shape != sig_b.shape:
        raise ValueError(f"length mismatch: {sig_a.shape} vs {sig_b.shape}")
    return sig_a + sig_b, np.zeros_like(sig_a)
