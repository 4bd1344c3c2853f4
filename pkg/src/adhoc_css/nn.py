"""Neural-network building blocks with hand-written backward passes.

Everything runs in float64 on numpy. Each layer owns its parameters
(`Param` pairs of value + gradient buffer), caches forward activations on
the instance, and implements `backward(dout) -> din`, accumulating into the
gradient buffers. Instances are therefore single-threaded per forward/
backward pair; distinct instances are independent.
"""

from __future__ import annotations

import numpy as np


class NnError(ValueError):
    pass


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_last(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Layer:
    """Base: parameter registry plus grad bookkeeping."""

    def named_params(self) -> dict[str, Param]:
        out = {}
        for name, attr in vars(self).items():
            if isinstance(attr, Param):
                out[name] = attr
            elif isinstance(attr, Layer):
                for sub, p in attr.named_params().items():
                    out[f"{name}.{sub}"] = p
            elif isinstance(attr, (list, tuple)):
                for i, item in enumerate(attr):
                    if isinstance(item, Layer):
                        for sub, p in item.named_params().items():
                            out[f"{name}.{i}.{sub}"] = p
        return out

    def zero_grad(self):
        for p in self.named_params().values():
            p.grad[...] = 0.0


class Linear(Layer):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.w = Param(fan_in_uniform(rng, (d_in, d_out), d_in))
        self.b = Param(fan_in_uniform(rng, (d_out,), d_in))

    def forward(self, x):
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, dy):
        x = self._x
        flat_x = x.reshape(-1, x.shape[-1])
        flat_dy = dy.reshape(-1, dy.shape[-1])
        self.w.grad += flat_x.T @ flat_dy
        self.b.grad += flat_dy.sum(axis=0)
        return dy @ self.w.value.T


class LayerNorm(Layer):
    """Normalizes the last axis to zero mean / unit variance with a clipped
    variance floor, then applies learned gain and bias."""

    def __init__(self, dim: int, var_floor: float = 1e-5):
        self.gain = Param(np.ones(dim))
        self.bias = Param(np.zeros(dim))
        self.var_floor = var_floor

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc ** 2).mean(axis=-1, keepdims=True)
        self._floored = var < self.var_floor
        std = np.sqrt(np.maximum(var, self.var_floor))
        xhat = xc / std
        self._xhat, self._std = xhat, std
        return self.gain.value * xhat + self.bias.value

    def backward(self, dy):
        xhat, std = self._xhat, self._std
        d = xhat.shape[-1]
        flat = dy.reshape(-1, d)
        self.gain.grad += (flat * xhat.reshape(-1, d)).sum(axis=0)
        self.bias.grad += flat.sum(axis=0)
        dxhat = dy * self.gain.value
        active = ~self._floored  # variance-floored rows: std is locally constant
        mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - mean_dxhat - np.where(active, xhat * mean_dxhat_xhat, 0.0)) / std
        return dx


class MultiHeadSelfAttention(Layer):
    """Scaled dot-product self-attention on (batch, tokens, d_model)."""

    def __init__(self, d_model: int, num_heads: int, rng: np.random.Generator):
        if d_model % num_heads != 0:
            raise NnError(f"d_model {d_model} not divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        self.d_head = d_model // num_heads
        self.q_proj = Linear(d_model, d_model, rng)
        self.k_proj = Linear(d_model, d_model, rng)
        self.v_proj = Linear(d_model, d_model, rng)
        self.out_proj = Linear(d_model, d_model, rng)

    def _split(self, x):
        b, n, d = x.shape
        return x.reshape(b, n, self.num_heads, self.d_head).transpose(0, 2, 1, 3)

    def _merge(self, x):
        b, h, n, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)

    def forward(self, x):
        q = self._split(self.q_proj.forward(x))
        k = self._split(self.k_proj.forward(x))
        v = self._split(self.v_proj.forward(x))
        scale = 1.0 / np.sqrt(self.d_head)
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        attn = softmax_last(scores)
        ctx = attn @ v
        self._q, self._k, self._v, self._attn = q, k, v, attn
        return self.out_proj.forward(self._merge(ctx))

    def backward(self, dy):
        q, k, v, attn = self._q, self._k, self._v, self._attn
        scale = 1.0 / np.sqrt(self.d_head)
        dctx = self._split(self.out_proj.backward(dy))
        dattn = dctx @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ dctx
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dq = (dscores @ k) * scale
        dk = (dscores.transpose(0, 1, 3, 2) @ q) * scale
        dx = self.q_proj.backward(self._merge(dq))
        dx += self.k_proj.backward(self._merge(dk))
        dx += self.v_proj.backward(self._merge(dv))
        return dx


class FeedForward(Layer):
    """Position-wise two-layer network with ReLU, hidden width 4 * d_model."""

    def __init__(self, d_model: int, rng: np.random.Generator, hidden: int | None = None):
        hidden = hidden or 4 * d_model
        self.fc1 = Linear(d_model, hidden, rng)
        self.fc2 = Linear(hidden, d_model, rng)

    def forward(self, x):
        h = self.fc1.forward(x)
        self._mask = h > 0
        return self.fc2.forward(h * self._mask)

    def backward(self, dy):
        dh = self.fc2.backward(dy) * self._mask
        return self.fc1.backward(dh)


class EncoderSublayer(Layer):
    """Post-norm transformer encoder layer:
    y = LN(x + attn(x)); out = LN(y + ffn(y))."""

    def __init__(self, d_model: int, num_heads: int, rng: np.random.Generator):
        self.attn = MultiHeadSelfAttention(d_model, num_heads, rng)
        self.norm1 = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, rng)
        self.norm2 = LayerNorm(d_model)

    def forward(self, x):
        y = self.norm1.forward(x + self.attn.forward(x))
        return self.norm2.forward(y + self.ffn.forward(y))

    def backward(self, dout):
        dr2 = self.norm2.backward(dout)
        dy = dr2 + self.ffn.backward(dr2)
        dr1 = self.norm1.backward(dy)
        return dr1 + self.attn.backward(dr1)


class LstmDirection(Layer):
    """One direction of an LSTM over a (T, d_in) sequence; gates ordered
    input, forget, cell, output."""

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator,
                 reverse: bool = False):
        self.hidden = hidden
        self.reverse = reverse
        self.wx = Param(fan_in_uniform(rng, (d_in, 4 * hidden), d_in))
        self.wh = Param(fan_in_uniform(rng, (hidden, 4 * hidden), hidden))
        self.b = Param(np.zeros(4 * hidden))

    def forward(self, x):
        if self.reverse:
            x = x[::-1]
        t_len = x.shape[0]
        hh = self.hidden
        zx = x @ self.wx.value + self.b.value
        i = np.empty((t_len, hh)); f = np.empty((t_len, hh))
        g = np.empty((t_len, hh)); o = np.empty((t_len, hh))
        c = np.empty((t_len, hh)); tc = np.empty((t_len, hh))
        h = np.empty((t_len, hh))
        h_prev = np.zeros(hh)
        c_prev = np.zeros(hh)
        wh = self.wh.value
        for t in range(t_len):
            z = zx[t] + h_prev @ wh
            i[t] = sigmoid(z[:hh])
            f[t] = sigmoid(z[hh:2 * hh])
            g[t] = np.tanh(z[2 * hh:3 * hh])
            o[t] = sigmoid(z[3 * hh:])
            c[t] = f[t] * c_prev + i[t] * g[t]
            tc[t] = np.tanh(c[t])
            h[t] = o[t] * tc[t]
            h_prev = h[t]
            c_prev = c[t]
        self._cache = (x, i, f, g, o, c, tc, h)
        return h[::-1] if self.reverse else h

    def backward(self, dout):
        if self.reverse:
            dout = dout[::-1]
        x, i, f, g, o, c, tc, h = self._cache
        t_len, hh = h.shape
        dz_all = np.empty((t_len, 4 * hh))
        dh_next = np.zeros(hh)
        dc_next = np.zeros(hh)
        wh_t = self.wh.value.T
        for t in range(t_len - 1, -1, -1):
            dh = dout[t] + dh_next
            do = dh * tc[t]
            dc = dc_next + dh * o[t] * (1.0 - tc[t] ** 2)
            di = dc * g[t]
            dg = dc * i[t]
            c_prev = c[t - 1] if t > 0 else 0.0
            df = dc * c_prev
            dc_next = dc * f[t]
            dz = dz_all[t]
            dz[:hh] = di * i[t] * (1.0 - i[t])
            dz[hh:2 * hh] = df * f[t] * (1.0 - f[t])
            dz[2 * hh:3 * hh] = dg * (1.0 - g[t] ** 2)
            dz[3 * hh:] = do * o[t] * (1.0 - o[t])
            dh_next = dz @ wh_t
        h_prev = np.vstack([np.zeros(hh), h[:-1]])
        self.wx.grad += x.T @ dz_all
        self.wh.grad += h_prev.T @ dz_all
        self.b.grad += dz_all.sum(axis=0)
        dx = dz_all @ self.wx.value.T
        return dx[::-1] if self.reverse else dx


class Blstm(Layer):
    """Bidirectional LSTM; outputs forward and backward states concatenated
    per frame: (T, 2 * hidden)."""

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator):
        self.fwd = LstmDirection(d_in, hidden, rng, reverse=False)
        self.bwd = LstmDirection(d_in, hidden, rng, reverse=True)

    def forward(self, x):
        return np.concatenate([self.fwd.forward(x), self.bwd.forward(x)], axis=-1)

    def backward(self, dout):
        hh = self.fwd.hidden
        return self.fwd.backward(dout[:, :hh]) + self.bwd.backward(dout[:, hh:])


def check_finite(x, where: str):
    if not np.all(np.isfinite(x)):
        raise NnError(f"non-finite activation in {where}")
