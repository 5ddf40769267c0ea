"""Teacher network: temporal and spatial encoders, inverted-attention fusion, GMM decoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .batching import Batch
from .diffcore import Tensor
from .scene import EGO_DIM
from .layers import (BatchNorm, Conv3x3, GraphAttention, LayerNorm, Linear, LSTM, Module,
                     MultiHeadAttention, dropout)


SIGMA_FLOOR = 1e-6
RHO_LIMIT = 1.0 - 1e-6


@dataclass
class TeacherConfig:
    hidden_dim: int = 64
    heads: int = 4
    fusion_heads: int = 1
    maneuvers: int = 6
    t_obs: int = 16
    t_f: int = 25
    dropout: float = 0.1
    decoder_hidden: int = 128
    maneuver_hidden: int = 64
    max_agents: int = 9
    pos_scale: float = 10.0
    use_spatial: bool = True
    use_fusion: bool = True
    multimodal: bool = True

    def __post_init__(self):
        if self.hidden_dim % self.heads or self.hidden_dim % self.fusion_heads:
            raise ValueError("hidden_dim must be divisible by heads and fusion_heads")
        if self.maneuvers < 1:
            raise ValueError("need at least one maneuver")
        if self.t_obs % 4:
            raise ValueError("t_obs must be divisible by 4")

    @property
    def modes(self) -> int:
        return self.maneuvers if self.multimodal else 1


@dataclass
class MultimodalPrediction:
    """Maneuver probabilities and per-maneuver bivariate Gaussian trajectories.

    ``probs`` is (B, C); ``mu`` and ``sigma`` are (B, C, T_f, 2); ``rho`` is (B, C, T_f).
    """
    probs: Tensor
    mu: Tensor
    sigma: Tensor
    rho: Tensor

    @property
    def modes(self) -> int:
        return self.probs.shape[-1]

    @property
    def t_f(self) -> int:
        return self.mu.shape[-2]

    def params(self) -> Tensor:
        """(B, C, T_f, 5) stack of mu_x, mu_y, sigma_x, sigma_y, rho."""
        return dc.concatenate([self.mu, self.sigma, self.rho.reshape(self.rho.shape + (1,))], axis=-1)

    def detach(self) -> "MultimodalPrediction":
        return MultimodalPrediction(self.probs.detach(), self.mu.detach(), self.sigma.detach(),
                                    self.rho.detach())

    def best_mode_track(self, mixture_mean: bool = False) -> np.ndarray:
        """(B, T_f, 2): mean of the most probable mode, or the probability-weighted mean."""
        probs, mu = self.probs.data, self.mu.data
        if mixture_mean:
            return np.einsum("bc,bctd->btd", probs, mu)
        return mu[np.arange(len(probs)), probs.argmax(axis=-1)]


class MultimodalDecoder(Module):
    """Hidden state -> maneuver softmax and per-maneuver Gaussian trajectory parameters."""

    def __init__(self, n_in: int, hidden: int, modes: int, t_f: int, rng: np.random.Generator,
                 pos_scale: float = 10.0, man_hidden: int = 32, man_extra: int = 0):
        self.modes, self.t_f, self.pos_scale = modes, t_f, pos_scale
        self.hidden = Linear(n_in, hidden, rng)
        self.trajectory = Linear(hidden, modes * t_f * 5, rng)
        # the maneuver head keeps its own hidden layer so the much larger NLL
        # gradients do not drown its signal
        self.man_hidden = Linear(n_in + man_extra, man_hidden, rng)
        self.maneuver = Linear(man_hidden, modes, rng)

    def forward(self, x: Tensor, anchor: np.ndarray | None = None,
                man_extra: np.ndarray | None = None) -> MultimodalPrediction:
        """``anchor`` (B, T_f, 2), when given, is added to every mode's mean as a fixed offset.

        ``man_extra`` (B, k) is appended to the maneuver head's input only.
        """
        if not np.all(np.isfinite(x.data)):
            raise ValueError("decoder input contains non-finite values")
        h = dc.elu(self.hidden(x))
        man_in = x if man_extra is None else dc.concatenate([x, dc.as_tensor(man_extra)], axis=-1)
        probs = dc.softmax(self.maneuver(dc.elu(self.man_hidden(man_in))), axis=-1)
        raw = self.trajectory(h).reshape(x.shape[0], self.modes, self.t_f, 5)
        mu = raw[..., 0:2] * self.pos_scale
        if anchor is not None:
            mu = mu + anchor[:, None]
        sigma = dc.exp(raw[..., 2:4]) + SIGMA_FLOOR
        # tanh saturates to exactly 1.0 in float64 for |x| > ~19
        rho = dc.tanh(raw[..., 4]) * RHO_LIMIT
        return MultimodalPrediction(probs, mu, sigma, rho)


class TemporalEncoder(Module):
    def __init__(self, n_in: int, hidden: int, heads: int, rng: np.random.Generator):
        self.lstm = LSTM(n_in, hidden, rng)
        self.attention = MultiHeadAttention(hidden, heads, rng)

    def forward(self, seq: np.ndarray | Tensor, mask: np.ndarray) -> Tensor:
        b, a, t, f = seq.shape
        seq = dc.as_tensor(seq)
        h = self.lstm(seq.reshape(b * a, t, f)).reshape(b, a, -1)
        out = h + self.attention(h, mask)
        return out * mask[..., None]


class SpatialEncoder(Module):
    def __init__(self, hidden: int, frames: int, dropout_rate: float, rng: np.random.Generator):
        # 1x1 then 3x3 convolution; biases are dropped since batch norm removes them
        self.expand = Linear(2, hidden, rng, bias=False)
        self.conv = Conv3x3(hidden, hidden, rng, bias=False)
        self.norm = BatchNorm(hidden)
        self.graph = GraphAttention(frames * hidden, hidden, rng)
        self.dropout_rate = dropout_rate
        self.rng: np.random.Generator | None = None

    def forward(self, context: np.ndarray | Tensor, mask: np.ndarray) -> Tensor:
        context = dc.as_tensor(context)
        b, a, t, _ = context.shape
        if t < 4:
            raise dc.ShapeError(f"spatial encoder needs at least 4 frames, got {t}")
        # every 4th frame, most recent last
        idx = np.arange(t - 1, -1, -4)[::-1]
        sub = context[:, :, idx, :]
        m = mask[:, :, None, None]
        x = self.expand(sub) * m
        x = dc.elu(self.norm(self.conv(x)))
        x = dropout(x, self.dropout_rate, self.rng, self.training) * m
        x = x.reshape(b, a, -1)
        return self.graph(x, mask) * mask[..., None]


class InvertedBlock(Module):
    """One pre-norm transformer block whose tokens are feature variates."""

    def __init__(self, agents: int, dim: int, heads: int, rng: np.random.Generator):
        self.embed = Linear(agents, dim, rng)
        self.norm1 = LayerNorm(dim)
        self.attention = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ff1 = Linear(dim, 2 * dim, rng)
        self.ff2 = Linear(2 * dim, dim, rng)
        self.project = Linear(dim, agents, rng)

    def forward(self, x: Tensor) -> Tensor:
        tokens = self.embed(x.transpose(0, 2, 1))      # (B, variates, dim)
        tokens = tokens + self.attention(self.norm1(tokens))
        tokens = tokens + self.ff2(dc.elu(self.ff1(self.norm2(tokens))))
        return self.project(tokens).transpose(0, 2, 1)  # (B, agents, variates)


class Teacher(Module):
    def __init__(self, config: TeacherConfig | None = None, seed: int = 0):
        self.config = config or TeacherConfig()
        c = self.config
        rng = np.random.default_rng(seed)
        self.temporal = TemporalEncoder(4 + EGO_DIM, c.hidden_dim, c.heads, rng)
        self.spatial = SpatialEncoder(c.hidden_dim, c.t_obs // 4, c.dropout, rng) if c.use_spatial else None
        self.fusion = InvertedBlock(c.max_agents, c.hidden_dim, c.fusion_heads, rng) if c.use_fusion else None
        self.proj_t = Linear(c.hidden_dim, c.hidden_dim, rng, bias=False) if c.use_spatial else None
        self.proj_s = Linear(c.hidden_dim, c.hidden_dim, rng, bias=False) if c.use_spatial else None
        self.decoder = MultimodalDecoder(2 * c.hidden_dim, c.decoder_hidden, c.modes, c.t_f, rng,
                                         c.pos_scale, c.maneuver_hidden, EGO_DIM * c.t_obs)

    def set_dropout_rng(self, rng: np.random.Generator | None) -> None:
        if self.spatial is not None:
            self.spatial.rng = rng

    def _check(self, batch: Batch) -> None:
        c = self.config
        if batch.t_obs != c.t_obs:
            raise dc.ShapeError(f"teacher expects {c.t_obs} observed frames, got {batch.t_obs}")
        if batch.s_tilde.shape[1] != c.max_agents:
            raise dc.ShapeError(f"teacher expects {c.max_agents} agent rows, got {batch.s_tilde.shape[1]}")

    def temporal_encode(self, batch: Batch) -> Tensor:
        s, _, ego = batch.scaled_inputs()
        ego_rows = np.broadcast_to(ego[:, None], s.shape[:3] + (EGO_DIM,))
        return self.temporal(np.concatenate([s, ego_rows], axis=-1), batch.mask)

    def spatial_encode(self, batch: Batch) -> Tensor:
        _, ctx, _ = batch.scaled_inputs()
        return self.spatial(ctx, batch.mask)

    def fuse(self, o_t: Tensor, o_s: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        if o_t.shape != o_s.shape:
            raise dc.ShapeError(f"temporal features {o_t.shape} and spatial features {o_s.shape} differ")
        x = dc.concatenate([o_t, o_s], axis=-1)
        target = x[:, 0, :]
        hidden = target + self.fusion(x)[:, 0, :] if self.fusion is not None else target
        if self.proj_t is None:
            return hidden, Tensor(0.0)
        return hidden, temporal_spatial_loss(self.proj_t(o_t), self.proj_s(o_s), mask)

    def forward(self, batch: Batch) -> tuple[MultimodalPrediction, Tensor]:
        self._check(batch)
        o_t = self.temporal_encode(batch)
        o_s = self.spatial_encode(batch) if self.spatial is not None else Tensor(np.zeros(o_t.shape))
        hidden, l_st = self.fuse(o_t, o_s, batch.mask)
        _, _, ego = batch.scaled_inputs()
        pred = self.decoder(hidden, batch.cv_anchor(self.config.t_f), ego.reshape(len(batch), -1))
        return pred, l_st


def temporal_spatial_loss(p_t: Tensor, p_s: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Mean squared difference of projected temporal and spatial features over valid agents."""
    diff = p_t - p_s
    sq = diff * diff
    if mask is None:
        return sq.mean()
    weights = mask[..., None].astype(np.float64)
    return (sq * weights).sum() * (1.0 / (weights.sum() * sq.shape[-1]))
