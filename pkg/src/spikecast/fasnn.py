"""Fourier adaptive spiking layer.

Per input frame the membrane is charged by a weighted input, leaks toward the
equilibrium voltage, and fires with a soft reset against a learnable
threshold. The post-firing voltage sequence is then summarized by a per-bin
power spectrum ``(|Re F| + |Im F|)**2`` of its DFT over time.

The firing step is discontinuous; its backward pass is the surrogate

    G = (s / w_a) * exp(-|v' - u0| / w_a),   w_a = u0 * w_g

applied to the voltage and, negated, to the threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor, primitive, _unbroadcast
from .layers import Module, param, uniform_init

THRESHOLD_FLOOR = 1e-3


class FasnnStateError(RuntimeError):
    pass


def surrogate_grad(v_prime, u0, grad_width: float = 0.5, grad_scale: float = 1.0):
    """Surrogate derivative of the firing step, evaluated at the post-firing voltage."""
    u0 = np.asarray(u0, dtype=np.float64)
    if np.any(u0 <= 0):
        raise ValueError("spike threshold must be positive")
    w_a = u0 * grad_width
    out = grad_scale / w_a * np.exp(-np.abs(np.asarray(v_prime, dtype=np.float64) - u0) / w_a)
    return float(out) if out.ndim == 0 else out


@primitive("fire")
def fire_op(v, u0, grad_width: float = 0.5, grad_scale: float = 1.0):
    """Soft-reset firing: v - u0 where v > u0, else v."""
    out = np.where(v > u0, v - u0, v)

    def backward(g):
        gs = g * surrogate_grad(out, np.broadcast_to(u0, out.shape), grad_width, grad_scale)
        return gs, _unbroadcast(-gs, np.shape(u0))
    return out, backward


@primitive("dft_power")
def dft_power(x):
    """Per-bin ``(|A| + |B|)**2`` of the DFT along the last axis."""
    spectrum = np.fft.fft(x, axis=-1)
    a, b = spectrum.real, spectrum.imag
    n = x.shape[-1]
    # Bins 0 and n/2 of a real signal have no imaginary part.
    b[..., 0] = 0.0
    if n % 2 == 0:
        b[..., n // 2] = 0.0
    mag = np.abs(a) + np.abs(b)
    out = mag * mag

    def backward(g):
        ga = g * 2 * mag * np.sign(a)
        gb = g * 2 * mag * np.sign(b)
        # A_k = sum_n x_n cos(2 pi k n / N), B_k = -sum_n x_n sin(2 pi k n / N)
        return (np.fft.fft(ga - 1j * gb, axis=-1).real,)
    return out, backward


@dataclass
class FasnnParams:
    input_weights: Tensor
    thresholds: Tensor
    leak_rate: float = 1.0
    equilibrium: float = 0.0
    dt: float = 1.0
    grad_width: float = 0.5
    grad_scale: float = 1.0

    def __post_init__(self):
        if self.leak_rate <= 0 or self.dt < 0:
            raise ValueError("leak rate must be positive and dt non-negative")
        if np.any(self.thresholds.data <= 0):
            raise ValueError("thresholds must be positive")

    @property
    def in_dim(self) -> int:
        return self.input_weights.shape[0]

    @property
    def neurons(self) -> int:
        return self.input_weights.shape[1]

    @property
    def decay(self) -> float:
        return math.exp(-self.dt / self.leak_rate)


@dataclass
class MembraneState:
    v: Tensor
    step: int = 0
    history: list[Tensor] = field(default_factory=list)

    @classmethod
    def rest(cls, neurons: int, batch: tuple = ()) -> "MembraneState":
        return cls(Tensor(np.zeros(batch + (neurons,))))

    @property
    def voltage_history(self) -> np.ndarray:
        """(steps, ..., neurons) post-firing voltages."""
        if not self.history:
            return np.zeros((0,) + self.v.shape)
        return np.stack([h.data for h in self.history])


@dataclass
class SpectralFeatures:
    w: Tensor  # (..., neurons, bins)


def charge(state: MembraneState, input_frame, params: FasnnParams) -> MembraneState:
    x = dc.as_tensor(input_frame)
    if x.shape[-1] != params.in_dim:
        raise dc.ShapeError(f"input frame has {x.shape[-1]} features, layer expects {params.in_dim}")
    if x.ndim == 1:
        drive = dc.matmul(x.reshape(1, params.in_dim), params.input_weights).reshape(params.neurons)
    else:
        drive = dc.matmul(x, params.input_weights)
    v = state.v + drive
    return MembraneState(v, state.step, state.history)


def leak(state: MembraneState, params: FasnnParams) -> MembraneState:
    u = params.equilibrium
    v = (state.v - u) * params.decay + u
    return MembraneState(v, state.step, state.history)


def fire(state: MembraneState, params: FasnnParams) -> MembraneState:
    v_prime = fire_op(state.v, params.thresholds, grad_width=params.grad_width,
                      grad_scale=params.grad_scale)
    return MembraneState(v_prime, state.step + 1, state.history + [v_prime])


def spectral_features(state: MembraneState) -> SpectralFeatures:
    if not state.history:
        raise FasnnStateError("no recorded steps to transform")
    series = dc.stack(state.history, axis=-1)          # (..., neurons, steps)
    return SpectralFeatures(dft_power(series))


def dft_components(state: MembraneState) -> tuple[np.ndarray, np.ndarray]:
    """Real and imaginary parts of the per-neuron DFT of the voltage history."""
    if not state.history:
        raise FasnnStateError("no recorded steps to transform")
    spectrum = np.fft.fft(np.stack([h.data for h in state.history], axis=-1), axis=-1)
    return spectrum.real, spectrum.imag


def fasnn_forward(sequence, params: FasnnParams, state: MembraneState | None = None,
                  fourier: bool = True) -> tuple[Tensor, MembraneState]:
    """Run charge -> leak -> fire over the frames of ``sequence`` (..., T, in_dim).

    Returns the student feature vector ``[W flattened, final V']`` (or the raw
    voltage history in place of W when ``fourier`` is off) and the final state.
    """
    seq = dc.as_tensor(sequence)
    steps = seq.shape[-2]
    if steps < 1:
        raise FasnnStateError("sequence has no frames")
    batch = seq.shape[:-2]
    state = state or MembraneState.rest(params.neurons, batch)
    for t in range(steps):
        state = fire(leak(charge(state, seq[..., t, :], params), params), params)
    if fourier:
        feats = spectral_features(state).w
    else:
        feats = dc.stack(state.history, axis=-1)
    flat = feats.reshape(batch + (params.neurons * steps,))
    return dc.concatenate([flat, state.v], axis=-1), state


class FASNN(Module):
    """Trainable spiking layer; ``adaptive`` toggles the learnable threshold, ``fourier`` the spectrum."""

    def __init__(self, in_dim: int, neurons: int, rng: np.random.Generator,
                 adaptive: bool = True, fourier: bool = True, leak_rate: float = 1.0,
                 equilibrium: float = 0.0, dt: float = 1.0, grad_width: float = 0.5,
                 grad_scale: float = 1.0, init_threshold: float = 1.0):
        self.input_weights = uniform_init(rng, in_dim, (in_dim, neurons))
        self.thresholds = Tensor(np.full(neurons, init_threshold), requires_grad=adaptive)
        self.adaptive = adaptive
        self.fourier = fourier
        self.leak_rate, self.equilibrium, self.dt = leak_rate, equilibrium, dt
        self.grad_width, self.grad_scale = grad_width, grad_scale
        self.neurons = neurons

    def params(self) -> FasnnParams:
        return FasnnParams(self.input_weights, self.thresholds, self.leak_rate, self.equilibrium,
                           self.dt, self.grad_width, self.grad_scale)

    def forward(self, sequence) -> Tensor:
        feats, _ = fasnn_forward(sequence, self.params(), fourier=self.fourier)
        return feats

    def clamp_thresholds(self) -> None:
        np.maximum(self.thresholds.data, THRESHOLD_FLOOR, out=self.thresholds.data)
