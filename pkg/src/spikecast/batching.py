"""Padded mini-batches of encoded scenes, shared by teacher and student."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scene import EGO_DIM, SceneWindow, SectorConfig, encode_window

# Fixed input normalisation (meters, m/s, m/s^2, radians -> O(1)).
S_SCALE = np.array([0.05, 0.2, 0.2, 0.5])       # dpx, dpy, ds, da
CTX_SCALE = np.array([0.2, 10.0])               # ds, dtheta
# x, y rel. to last position; vx, vy; vx, vy rel. to last velocity
EGO_SCALE = np.array([0.05, 0.5, 0.1, 1.0, 0.5, 1.0])


@dataclass
class Batch:
    s_tilde: np.ndarray   # (B, A, T, 4)
    context: np.ndarray   # (B, A, T, 2)
    ego: np.ndarray       # (B, T, EGO_DIM)
    mask: np.ndarray      # (B, A) bool, row 0 always True
    future: np.ndarray    # (B, T_f, 2) target positions relative to its last observed one
    labels: np.ndarray    # (B,) int

    def __len__(self) -> int:
        return self.s_tilde.shape[0]

    @property
    def t_obs(self) -> int:
        return self.s_tilde.shape[2]

    def last(self, frames: int) -> "Batch":
        if frames > self.t_obs:
            raise ValueError(f"batch has {self.t_obs} frames, cannot take {frames}")
        return Batch(self.s_tilde[:, :, -frames:], self.context[:, :, -frames:], self.ego[:, -frames:],
                     self.mask, self.future, self.labels)

    def subset(self, idx) -> "Batch":
        idx = np.asarray(idx)
        return Batch(self.s_tilde[idx], self.context[idx], self.ego[idx], self.mask[idx],
                     self.future[idx], self.labels[idx])

    def cv_anchor(self, t_f: int | None = None) -> np.ndarray:
        """(B, T_f, 2) constant-velocity extrapolation from the last observed target velocity."""
        t_f = t_f or self.future.shape[1]
        frames = self.ego.shape[1]
        # ego positions are relative to the last frame, so the last step is -p[-2]
        if frames < 2:
            return np.zeros((len(self), t_f, 2))
        step = -self.ego[:, -2, :2]
        return step[:, None, :] * np.arange(1, t_f + 1)[None, :, None]

    def scaled_inputs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.s_tilde * S_SCALE, self.context * CTX_SCALE, self.ego * EGO_SCALE


def future_relative(window: SceneWindow, future_xy: np.ndarray) -> np.ndarray:
    return np.asarray(future_xy, dtype=np.float64) - window.target.xy[-1]


def collate(windows: Sequence[SceneWindow], futures: Sequence[np.ndarray], labels: Sequence[int],
            max_agents: int, sector: SectorConfig | None = None, pooling: bool = True) -> Batch:
    """Encode and zero-pad scenes to ``max_agents`` rows (target first)."""
    if not windows:
        raise ValueError("cannot collate an empty list of scenes")
    t_obs = windows[0].t_obs
    b = len(windows)
    s = np.zeros((b, max_agents, t_obs, 4))
    m = np.zeros((b, max_agents, t_obs, 2))
    ego = np.zeros((b, t_obs, EGO_DIM))
    mask = np.zeros((b, max_agents), dtype=bool)
    fut = np.stack([future_relative(w, f) for w, f in zip(windows, futures)])
    for i, w in enumerate(windows):
        if w.n_agents > max_agents:
            raise ValueError(f"scene has {w.n_agents} agents, batch allows {max_agents}")
        feats = encode_window(w, sector, pooling)
        a = w.n_agents
        s[i, :a], m[i, :a], ego[i] = feats.s_tilde, feats.context, feats.ego
        mask[i, :a] = True
    return Batch(s, m, ego, mask, fut, np.asarray(labels, dtype=np.int64))
