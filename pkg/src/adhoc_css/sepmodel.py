"""Spatio-temporal mask-estimation network.

Input: a (channels, frames, bins) magnitude tensor.
Pipeline: per-vector global normalization -> linear embedding -> stacked
(cross-channel self-attention + cross-frame self-attention) encoder blocks
-> mean pooling over channels -> two bidirectional LSTM layers -> linear
head with ReLU producing two nonnegative time-frequency masks.

The channel axis carries no positional encoding, so masks are invariant to
channel permutations of the input.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import nn
from .nn import Layer, Linear, LayerNorm, EncoderSublayer, Blstm, check_finite


@dataclass
class SepModelConfig:
    num_blocks: int = 2
    d_model: int = 32
    num_heads: int = 4
    rnn_cells: int = 64          # per direction
    num_outputs: int = 2
    num_bins: int = 257

    def __post_init__(self):
        if self.d_model % self.num_heads != 0:
            raise nn.NnError("d_model must be divisible by num_heads")
        if self.num_outputs != 2:
            raise nn.NnError("model emits exactly two masks")


class SpatioTemporalBlock(Layer):
    def __init__(self, cfg: SepModelConfig, rng):
        self.channel_layer = EncoderSublayer(cfg.d_model, cfg.num_heads, rng)
        self.frame_layer = EncoderSublayer(cfg.d_model, cfg.num_heads, rng)

    def forward(self, x):
        # x: (C, T, D). Channel attention treats frames as the batch axis.
        y = self.channel_layer.forward(x.transpose(1, 0, 2)).transpose(1, 0, 2)
        return self.frame_layer.forward(y)

    def backward(self, dout):
        dy = self.frame_layer.backward(dout)
        return self.channel_layer.backward(dy.transpose(1, 0, 2)).transpose(1, 0, 2)


class SepModel(Layer):
    def __init__(self, cfg: SepModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.input_norm = LayerNorm(cfg.num_bins)
        self.embed = Linear(cfg.num_bins, cfg.d_model, rng)
        self.blocks = [SpatioTemporalBlock(cfg, rng) for _ in range(cfg.num_blocks)]
        self.blstm1 = Blstm(cfg.d_model, cfg.rnn_cells, rng)
        self.blstm2 = Blstm(2 * cfg.rnn_cells, cfg.rnn_cells, rng)
        self.head = Linear(2 * cfg.rnn_cells, cfg.num_outputs * cfg.num_bins, rng)

    def forward(self, mag: np.ndarray) -> np.ndarray:
        """mag: (C, T, F) nonnegative. Returns masks (2, T, F), entries >= 0."""
        mag = np.asarray(mag, dtype=np.float64)
        if mag.ndim != 3:
            raise nn.NnError(f"expected (C, T, F) input, got shape {mag.shape}")
        c, t, f = mag.shape
        if f != self.cfg.num_bins:
            raise nn.NnError(f"bin count {f} != configured {self.cfg.num_bins}")
        x = self.input_norm.forward(mag)
        h = self.embed.forward(x)
        check_finite(h, "embedding")
        for i, block in enumerate(self.blocks):
            h = block.forward(h)
            check_finite(h, f"block {i}")
        self._channels = c
        pooled = h.mean(axis=0)
        r = self.blstm2.forward(self.blstm1.forward(pooled))
        check_finite(r, "recurrent stack")
        z = self.head.forward(r)
        self._head_mask = z > 0
        masks = (z * self._head_mask).reshape(t, self.cfg.num_outputs, f)
        return np.ascontiguousarray(masks.transpose(1, 0, 2))

    def backward(self, dmasks: np.ndarray) -> None:
        """Accumulate parameter gradients for a loss gradient w.r.t. masks."""
        dmasks = np.asarray(dmasks, dtype=np.float64)
        n_out, t, f = dmasks.shape
        dz = dmasks.transpose(1, 0, 2).reshape(t, n_out * f) * self._head_mask
        dr = self.head.backward(dz)
        dpooled = self.blstm1.backward(self.blstm2.backward(dr))
        dh = np.broadcast_to(dpooled / self._channels,
                             (self._channels,) + dpooled.shape).copy()
        for block in reversed(self.blocks):
            dh = block.backward(dh)
        self.input_norm.backward(self.embed.backward(dh))
