"""Scene windows, relative-motion features and speed-adaptive visual pooling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

KMH_PER_MS = 3.6


class SceneError(ValueError):
    pass


class SectorConfigError(ValueError):
    pass


@dataclass
class TrajectoryTrack:
    agent_id: int
    frames: np.ndarray
    xy: np.ndarray
    lane_id: np.ndarray | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        if self.lane_id is not None:
            self.lane_id = np.asarray(self.lane_id, dtype=np.int64)
            if self.lane_id.shape != self.frames.shape:
                raise SceneError(f"agent {self.agent_id}: lane_id length differs from frames")
        if self.xy.shape[0] != self.frames.shape[0]:
            raise SceneError(f"agent {self.agent_id}: {len(self.frames)} frames but {len(self.xy)} positions")
        if np.any(np.diff(self.frames) <= 0):
            raise SceneError(f"agent {self.agent_id}: frame indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)

    def window(self, start_frame: int, end_frame: int) -> "TrajectoryTrack":
        """Frames in [start_frame, end_frame] inclusive."""
        sel = (self.frames >= start_frame) & (self.frames <= end_frame)
        lane = None if self.lane_id is None else self.lane_id[sel]
        return TrajectoryTrack(self.agent_id, self.frames[sel], self.xy[sel], lane)

    def position_at(self, frame: int) -> np.ndarray:
        idx = np.searchsorted(self.frames, frame)
        if idx >= len(self.frames) or self.frames[idx] != frame:
            raise SceneError(f"agent {self.agent_id} has no frame {frame}")
        return self.xy[idx]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrajectoryTrack):
            return NotImplemented
        lanes_equal = (self.lane_id is None and other.lane_id is None) or (
            self.lane_id is not None and other.lane_id is not None
            and np.array_equal(self.lane_id, other.lane_id))
        return (self.agent_id == other.agent_id and np.array_equal(self.frames, other.frames)
                and np.array_equal(self.xy, other.xy) and lanes_equal)


@dataclass
class SceneWindow:
    target: TrajectoryTrack
    neighbors: list[TrajectoryTrack]
    t_obs: int
    frame_rate: float = 5.0

    def __post_init__(self):
        if self.frame_rate <= 0:
            raise SceneError("frame_rate must be positive")
        for track in [self.target, *self.neighbors]:
            if len(track) != self.t_obs:
                raise SceneError(f"agent {track.agent_id} spans {len(track)} frames, window needs {self.t_obs}")

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate

    @property
    def n_agents(self) -> int:
        return 1 + len(self.neighbors)

    def positions(self) -> np.ndarray:
        """(n+1, T_obs, 2) with the target in row 0."""
        return np.stack([self.target.xy] + [nb.xy for nb in self.neighbors])

    def last(self, frames: int) -> "SceneWindow":
        """The most recent ``frames`` frames of every track."""
        cut = lambda tr: TrajectoryTrack(tr.agent_id, tr.frames[-frames:], tr.xy[-frames:],
                                         None if tr.lane_id is None else tr.lane_id[-frames:])
        return SceneWindow(cut(self.target), [cut(nb) for nb in self.neighbors], frames, self.frame_rate)


@dataclass
class VisualVectors:
    values: np.ndarray  # (n+1, T, 4): dpx, dpy, ds, da


@dataclass
class ContextMatrices:
    values: np.ndarray  # (n+1, T, 2): ds, dtheta


@dataclass
class SectorBand:
    lo_kmh: float
    hi_kmh: float
    half_angle_deg: float
    in_weight: float = 1.0
    peripheral_weight: float = 0.5


@dataclass
class SectorConfig:
    bands: list[SectorBand] = field(default_factory=lambda: [
        SectorBand(0.0, 30.0, 60.0),
        SectorBand(30.0, 60.0, 40.0),
        SectorBand(60.0, 90.0, 25.0),
        SectorBand(90.0, math.inf, 15.0),
    ])

    def __post_init__(self):
        self.bands = [b if isinstance(b, SectorBand) else SectorBand(**b) for b in self.bands]
        self.validate()

    def validate(self) -> None:
        if not self.bands:
            raise SectorConfigError("sector config has no bands")
        if self.bands[0].lo_kmh != 0.0:
            raise SectorConfigError("first speed band must start at 0 km/h")
        if not math.isinf(self.bands[-1].hi_kmh):
            raise SectorConfigError("last speed band must be open-ended")
        for a, b in zip(self.bands, self.bands[1:]):
            if a.hi_kmh != b.lo_kmh:
                kind = "overlap" if a.hi_kmh > b.lo_kmh else "gap"
                raise SectorConfigError(f"{kind} between bands at {a.hi_kmh} and {b.lo_kmh} km/h")
            if b.half_angle_deg > a.half_angle_deg:
                raise SectorConfigError("half-angles must not increase with speed")
        for band in self.bands:
            if band.lo_kmh >= band.hi_kmh:
                raise SectorConfigError(f"empty band [{band.lo_kmh}, {band.hi_kmh})")
            if not (0 <= band.peripheral_weight <= 1 and 0 <= band.in_weight <= 1):
                raise SectorConfigError("weights must lie in [0, 1]")

    def band_for(self, speed_kmh: float) -> SectorBand:
        for band in self.bands:
            if band.lo_kmh <= speed_kmh < band.hi_kmh:
                return band
        return self.bands[-1]

    def to_dict(self) -> dict:
        return {"bands": [
            {"lo_kmh": b.lo_kmh, "hi_kmh": "inf" if math.isinf(b.hi_kmh) else b.hi_kmh,
             "half_angle_deg": b.half_angle_deg, "in_weight": b.in_weight,
             "peripheral_weight": b.peripheral_weight} for b in self.bands]}

    @classmethod
    def from_dict(cls, d: dict) -> "SectorConfig":
        bands = []
        for b in d["bands"]:
            b = dict(b)
            b["hi_kmh"] = math.inf if b["hi_kmh"] in ("inf", None) else float(b["hi_kmh"])
            bands.append(SectorBand(**b))
        return cls(bands)


@dataclass
class VisualWeightMatrix:
    weights: np.ndarray  # (n+1, T, 1)
    sector_config: SectorConfig


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=np.float64), 2 * np.pi)


def _second_difference(x: np.ndarray, dt: float) -> np.ndarray:
    out = np.empty_like(x)
    out[..., 1:-1] = (x[..., 2:] - 2 * x[..., 1:-1] + x[..., :-2]) / dt ** 2
    out[..., 0] = out[..., 1]
    out[..., -1] = out[..., -2]
    return out


def velocities(window: SceneWindow) -> np.ndarray:
    """(n+1, T, 2) central-difference velocities, one-sided at the ends."""
    if window.t_obs < 2:
        raise SceneError("need at least 2 frames to difference")
    return np.gradient(window.positions(), window.dt, axis=1)


def target_headings(window: SceneWindow) -> np.ndarray:
    """Unit heading of the target per frame from its latest displacement; +x when stationary."""
    xy = window.target.xy
    disp = np.empty_like(xy)
    disp[1:] = xy[1:] - xy[:-1]
    disp[0] = disp[1] if len(xy) > 1 else 0.0
    norm = np.linalg.norm(disp, axis=1, keepdims=True)
    return np.where(norm > 1e-12, disp / np.where(norm > 1e-12, norm, 1.0), np.array([1.0, 0.0]))


def derive_visual_vectors(window: SceneWindow) -> VisualVectors:
    if window.t_obs < 3:
        raise SceneError("visual vectors need at least 3 frames (second difference)")
    pos = window.positions()
    dp = pos - pos[:1]
    axis = target_headings(window)[-1]
    along = dp @ axis                                  # (n+1, T)
    ds = np.gradient(along, window.dt, axis=1)
    da = _second_difference(along, window.dt)
    return VisualVectors(np.concatenate([dp, ds[..., None], da[..., None]], axis=-1))


def _fill_headings(vel: np.ndarray) -> np.ndarray:
    speed = np.linalg.norm(vel, axis=-1)
    heading = np.arctan2(vel[..., 1], vel[..., 0])
    out = np.zeros_like(heading)
    for a in range(vel.shape[0]):
        last = 0.0
        for t in range(vel.shape[1]):
            if speed[a, t] > 1e-9:
                last = heading[a, t]
            out[a, t] = last
    return out


def derive_context_matrices(window: SceneWindow) -> ContextMatrices:
    if window.t_obs < 3:
        raise SceneError("context matrices need at least 3 frames")
    vel = velocities(window)
    speed = np.linalg.norm(vel, axis=-1)
    heading = _fill_headings(vel)
    ds = speed - speed[:1]
    dtheta = wrap_angle(heading - heading[:1])
    dtheta[0] = 0.0
    return ContextMatrices(np.stack([ds, dtheta], axis=-1))


def visual_weight_matrix(window: SceneWindow, config: SectorConfig | None = None) -> VisualWeightMatrix:
    config = config or SectorConfig()
    config.validate()
    pos = window.positions()
    dp = pos - pos[:1]
    heading = target_headings(window)                  # (T, 2)
    speed_kmh = np.linalg.norm(velocities(window)[0], axis=-1) * KMH_PER_MS
    along = dp[..., 0] * heading[:, 0] + dp[..., 1] * heading[:, 1]
    across = heading[:, 0] * dp[..., 1] - heading[:, 1] * dp[..., 0]
    bearing = np.abs(np.arctan2(across, along))        # (n+1, T)
    weights = np.ones(pos.shape[:2])
    for t in range(window.t_obs):
        band = config.band_for(speed_kmh[t])
        inside = bearing[1:, t] <= np.deg2rad(band.half_angle_deg)
        weights[1:, t] = np.where(inside, band.in_weight, band.peripheral_weight)
    return VisualWeightMatrix(weights[..., None], config)


def apply_visual_pooling(h: VisualWeightMatrix, s: VisualVectors) -> VisualVectors:
    if h.weights.shape[:2] != s.values.shape[:2]:
        raise SceneError(f"weight extents {h.weights.shape[:2]} differ from vectors {s.values.shape[:2]}")
    return VisualVectors(h.weights * s.values)


EGO_DIM = 6


def ego_features(window: SceneWindow) -> np.ndarray:
    """(T, 6): target position relative to its last observed position, its velocity,
    and its velocity relative to the last observed velocity."""
    rel = window.target.xy - window.target.xy[-1]
    vel = np.gradient(window.target.xy, window.dt, axis=0)
    return np.concatenate([rel, vel, vel - vel[-1]], axis=-1)


@dataclass
class SceneFeatures:
    s_tilde: np.ndarray   # (n+1, T, 4)
    context: np.ndarray   # (n+1, T, 2)
    ego: np.ndarray       # (T, EGO_DIM)


def encode_window(window: SceneWindow, config: SectorConfig | None = None,
                  pooling: bool = True) -> SceneFeatures:
    s = derive_visual_vectors(window)
    if pooling:
        s = apply_visual_pooling(visual_weight_matrix(window, config), s)
    return SceneFeatures(s.values, derive_context_matrices(window).values, ego_features(window))
