"""Lightweight student: pooled visual vectors through the spiking layer into a small GMM decoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .batching import Batch
from .fasnn import FASNN
from .layers import Module, count_params
from .scene import EGO_DIM
from .teacher import MultimodalDecoder, MultimodalPrediction

INPUT_DIM = 4 + EGO_DIM  # mean neighbor row + ego motion


@dataclass
class StudentConfig:
    t_obs: int = 8
    neurons: int = 48
    decoder_hidden: int = 48
    maneuver_hidden: int = 16
    maneuvers: int = 6
    t_f: int = 25
    pos_scale: float = 10.0
    adaptive_threshold: bool = True
    fourier: bool = True
    multimodal: bool = True
    leak_rate: float = 1.0
    equilibrium: float = 0.0
    dt: float = 1.0
    grad_width: float = 0.5
    grad_scale: float = 1.0
    init_threshold: float = 1.0

    @property
    def modes(self) -> int:
        return self.maneuvers if self.multimodal else 1


def student_inputs(batch: Batch) -> np.ndarray:
    """(B, T, INPUT_DIM) per-frame FA-SNN drive: mean of valid neighbor rows, then ego motion.

    The target's own row of S~ is a difference with itself and always zero, so it is left out.
    """
    s, _, ego = batch.scaled_inputs()
    nb_mask = batch.mask.copy()
    nb_mask[:, 0] = False
    counts = nb_mask.sum(axis=1)
    nb_sum = (s * nb_mask[:, :, None, None]).sum(axis=1)
    nb_mean = nb_sum / np.maximum(counts, 1)[:, None, None]
    return np.concatenate([nb_mean, ego], axis=-1)


class Student(Module):
    def __init__(self, config: StudentConfig | None = None, seed: int = 0):
        self.config = config or StudentConfig()
        c = self.config
        rng = np.random.default_rng(seed)
        self.snn = FASNN(INPUT_DIM, c.neurons, rng, adaptive=c.adaptive_threshold, fourier=c.fourier,
                         leak_rate=c.leak_rate, equilibrium=c.equilibrium, dt=c.dt,
                         grad_width=c.grad_width, grad_scale=c.grad_scale,
                         init_threshold=c.init_threshold)
        self.decoder = MultimodalDecoder(c.neurons * (c.t_obs + 1), c.decoder_hidden, c.modes, c.t_f,
                                         rng, c.pos_scale, c.maneuver_hidden, EGO_DIM * c.t_obs)
        # spectral power grows with the square of the window length
        n = c.t_obs
        self._feature_scale = np.concatenate([
            np.full(c.neurons * n, 1.0 / n ** 2 if c.fourier else 1.0), np.ones(c.neurons)])

    def set_dropout_rng(self, rng) -> None:
        pass

    def features(self, batch: Batch) -> dc.Tensor:
        if batch.t_obs != self.config.t_obs:
            raise dc.ShapeError(f"student expects {self.config.t_obs} observed frames, got {batch.t_obs}")
        return self.snn(student_inputs(batch)) * self._feature_scale

    def forward(self, batch: Batch) -> MultimodalPrediction:
        _, _, ego = batch.scaled_inputs()
        return self.decoder(self.features(batch), batch.cv_anchor(self.config.t_f),
                            ego.reshape(len(batch), -1))

    def clamp(self) -> None:
        self.snn.clamp_thresholds()


def student_forward(batch: Batch, model: Student) -> MultimodalPrediction:
    return model(batch)


__all__ = ["Student", "StudentConfig", "student_forward", "student_inputs", "count_params"]
