"""Small neural-network building blocks on top of :mod:`spikecast.diffcore`.

All layers are channel-last. Biases start at zero so a zero input maps to a
zero pre-activation, which several symmetry checks rely on.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor


class Module:
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        bufs = self.__dict__.setdefault("_buffer_names", [])
        if name not in bufs:
            bufs.append(name)
        setattr(self, name, np.asarray(value, dtype=np.float64))

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, (Tensor, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            else:
                yield from value.named_parameters(full + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self.__dict__.get("_buffer_names", []):
            yield f"{prefix}{name}", getattr(self, name)
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({f"buffer:{name}": b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = [k for k in params if k not in state]
        if missing:
            raise KeyError(f"state is missing parameters: {missing[:5]}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise dc.ShapeError(f"parameter {name}: expected {p.shape}, got {value.shape}")
            p.data = value.copy()
        for name, _ in list(self.named_buffers()):
            key = f"buffer:{name}"
            if key in state:
                owner, attr = self._resolve(name)
                setattr(owner, attr, np.asarray(state[key], dtype=np.float64).copy())

    def _resolve(self, dotted: str):
        owner = self
        parts = dotted.split(".")
        for part in parts[:-1]:
            owner = owner[int(part)] if isinstance(owner, (list, tuple)) else getattr(owner, part)
        return owner, parts[-1]

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            if isinstance(child, Module):
                child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def count_params(model: Module | None) -> int:
    if model is None:
        return 0
    return int(sum(p.size for p in model.parameters()))


def param(values: np.ndarray) -> Tensor:
    return Tensor(values, requires_grad=True)


def uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return param(rng.uniform(-bound, bound, size=shape))


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = uniform_init(rng, n_in, (n_in, n_out))
        self.bias = param(np.zeros(n_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = dc.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = param(np.ones(dim))
        self.beta = param(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / dc.sqrt(var + self.eps) * self.gamma + self.beta


class BatchNorm(Module):
    """Normalizes over every axis but the last (channels)."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = param(np.ones(channels))
        self.beta = param(np.zeros(channels))
        self.momentum = momentum
        self.eps = eps
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        axes = tuple(range(x.ndim - 1))
        if self.training:
            mu = x.mean(axis=axes)
            centered = x - mu
            var = (centered * centered).mean(axis=axes)
            if dc.grad_enabled():
                m = self.momentum
                self.running_mean = (1 - m) * self.running_mean + m * mu.data
                self.running_var = (1 - m) * self.running_var + m * var.data
            return centered / dc.sqrt(var + self.eps) * self.gamma + self.beta
        scale = 1.0 / np.sqrt(self.running_var + self.eps)
        return (x - self.running_mean) * (self.gamma * scale) + self.beta


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


class LSTM(Module):
    """Single-layer LSTM over (batch, time, features); returns the last hidden state."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.w_x = uniform_init(rng, hidden, (n_in, 4 * hidden))
        self.w_h = uniform_init(rng, hidden, (hidden, 4 * hidden))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget gate
        self.bias = param(b)

    def forward(self, x: Tensor) -> Tensor:
        # input projection for every step at once, then the fused recurrence
        xw = dc.matmul(x, self.w_x) + self.bias
        return lstm_recurrence(xw, self.w_h)


def _sig(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


@dc.primitive("lstm")
def lstm_recurrence(xw, w_h):
    """Last hidden state of an LSTM given pre-projected inputs ``xw`` (N, T, 4H).

    Gate order is input, forget, cell, output. Fused into one node so the
    backward pass is a single BPTT sweep instead of hundreds of slices.
    """
    n, steps, four_h = xw.shape
    hd = four_h // 4
    h = np.zeros((n, hd))
    c = np.zeros((n, hd))
    cache = []
    for t in range(steps):
        z = xw[:, t] + h @ w_h
        i, f, o = _sig(z[:, :hd]), _sig(z[:, hd:2 * hd]), _sig(z[:, 3 * hd:])
        g = np.tanh(z[:, 2 * hd:3 * hd])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        cache.append((i, f, g, o, tc, c_prev, h_prev))

    def backward(grad):
        dxw = np.empty_like(xw)
        dw = np.zeros_like(w_h)
        dh = grad
        dcell = np.zeros((n, hd))
        for t in range(steps - 1, -1, -1):
            i, f, g, o, tc, c_prev, h_prev = cache[t]
            dcell = dcell + dh * o * (1.0 - tc * tc)
            dz = dxw[:, t]
            dz[:, :hd] = dcell * g * i * (1.0 - i)
            dz[:, hd:2 * hd] = dcell * c_prev * f * (1.0 - f)
            dz[:, 2 * hd:3 * hd] = dcell * i * (1.0 - g * g)
            dz[:, 3 * hd:] = dh * tc * o * (1.0 - o)
            dw += h_prev.T @ dz
            dh = dz @ w_h.T
            dcell = dcell * f
        return dxw, dw
    return h, backward


def attention_mask_bias(mask: np.ndarray | None) -> np.ndarray | None:
    """(batch, keys) bool mask -> additive bias broadcastable to scores."""
    if mask is None:
        return None
    return np.where(mask, 0.0, -1e9)[:, None, None, :]


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        # a key bias shifts every score of a query equally, which softmax ignores
        self.k = Linear(dim, dim, rng, bias=False)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        return x.reshape(b, n, self.heads, d // self.heads).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        b, n, d = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        scores = dc.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(d // self.heads))
        bias = attention_mask_bias(mask)
        if bias is not None:
            scores = scores + bias
        attn = dc.softmax(scores, axis=-1)
        ctx = dc.matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.out(ctx)


class GraphAttention(Module):
    """Single-head graph attention over a fully connected agent graph with self-loops."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.proj = Linear(n_in, n_out, rng, bias=False)
        self.a_src = uniform_init(rng, n_out, (n_out, 1))
        self.a_dst = uniform_init(rng, n_out, (n_out, 1))
        self.bias = param(np.zeros(n_out))

    def forward(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        wh = self.proj(x)                           # (B, A, out)
        src = dc.matmul(wh, self.a_src)             # (B, A, 1)
        dst = dc.matmul(wh, self.a_dst).transpose(0, 2, 1)  # (B, 1, A)
        e = dc.leaky_relu(src + dst, 0.2)
        if mask is not None:
            e = e + np.where(mask, 0.0, -1e9)[:, None, :]
        alpha = dc.softmax(e, axis=-1)
        return dc.elu(dc.matmul(alpha, wh) + self.bias)


class Conv3x3(Module):
    """3x3 convolution over the two middle axes of (B, H, W, C), replicate padding."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = uniform_init(rng, 9 * c_in, (3, 3, c_in, c_out))
        self.bias = param(np.zeros(c_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        _, h, w, _ = x.shape
        x = dc.concatenate([x[:, :1], x, x[:, -1:]], axis=1)
        x = dc.concatenate([x[:, :, :1], x, x[:, :, -1:]], axis=2)
        out = None
        for i in range(3):
            for j in range(3):
                term = dc.matmul(x[:, i:i + h, j:j + w, :], self.weight[i, j])
                out = term if out is None else out + term
        return out + self.bias if self.bias is not None else out
