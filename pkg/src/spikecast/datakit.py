"""Trajectory ingestion, synthetic highway scenes, missing-data protocol and RMSE metrics.

Coordinates: ``x`` is longitudinal (direction of travel), ``y`` lateral and
growing toward higher lane ids, as in NGSIM where lane 1 is the leftmost.
A decrease in lane id is therefore a change to the left.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .scene import SceneWindow, TrajectoryTrack

FEET_TO_M = 0.3048
FRAME_RATE = 5.0
LATERAL = ("left", "keep", "right")
LONGITUDINAL = ("normal", "braking")
MANEUVERS = tuple(f"{lat}/{lon}" for lat in LATERAL for lon in LONGITUDINAL)
MISSING_DURATIONS = (0.4, 0.8, 1.2, 1.6, 2.0, 2.4)
HORIZON_FRAMES = (5, 10, 15, 20, 25)  # 1..5 s at 5 Hz
MANIFEST_VERSION = 1


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    pass


def maneuver_index(lateral: int, longitudinal: int) -> int:
    return lateral * len(LONGITUDINAL) + longitudinal


def split_maneuver(label: int) -> tuple[int, int]:
    return divmod(int(label), len(LONGITUDINAL))


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------
@dataclass
class ColumnMap:
    vehicle_id: str = "vehicle_id"
    frame: str = "frame"
    x: str = "local_x"
    y: str = "local_y"
    lane_id: str | None = "lane_id"


def load_tracks(path, schema: ColumnMap | None = None, feet: bool = False) -> list[TrajectoryTrack]:
    """Group CSV rows into per-vehicle tracks sorted by frame; ids in ascending order."""
    schema = schema or ColumnMap()
    scale = FEET_TO_M if feet else 1.0
    rows: dict[int, list[tuple[int, float, float, int | None]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: missing header row")
        header = [h.strip() for h in header]
        col = {}
        for key in ("vehicle_id", "frame", "x", "y"):
            name = getattr(schema, key)
            if name not in header:
                raise SchemaError(f"{path}: missing column '{name}'")
            col[key] = header.index(name)
        lane_col = header.index(schema.lane_id) if schema.lane_id and schema.lane_id in header else None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vid = int(row[col["vehicle_id"]])
                frame = int(row[col["frame"]])
                x = float(row[col["x"]]) * scale
                y = float(row[col["y"]]) * scale
                lane = int(float(row[lane_col])) if lane_col is not None and row[lane_col] != "" else None
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}: line {lineno}: cannot parse row {row!r} ({exc})") from exc
            rows.setdefault(vid, []).append((frame, x, y, lane))
    tracks = []
    for vid in sorted(rows):
        recs = sorted(rows[vid], key=lambda r: r[0])
        frames = [r[0] for r in recs]
        if len(set(frames)) != len(frames):
            raise DataError(f"{path}: vehicle {vid} repeats a frame")
        lanes = [r[3] for r in recs]
        lane = None if any(v is None for v in lanes) else np.array(lanes)
        tracks.append(TrajectoryTrack(vid, np.array(frames), np.array([[r[1], r[2]] for r in recs]), lane))
    return tracks


def write_tracks(tracks: Sequence[TrajectoryTrack], path) -> None:
    """Write tracks in the default schema; floats use repr so a reload is exact."""
    with_lanes = bool(tracks) and all(t.lane_id is not None for t in tracks)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vehicle_id", "frame", "local_x", "local_y"] + (["lane_id"] if with_lanes else []))
        for t in tracks:
            for k in range(len(t)):
                row = [t.agent_id, int(t.frames[k]), repr(float(t.xy[k, 0])), repr(float(t.xy[k, 1]))]
                if with_lanes:
                    row.append(int(t.lane_id[k]))
                w.writerow(row)


# ---------------------------------------------------------------------------
# Maneuver labels
# ---------------------------------------------------------------------------
def lane_from_lateral(y, lane_width: float = 3.7) -> np.ndarray:
    return np.floor(np.asarray(y) / lane_width).astype(np.int64) + 1


def label_maneuvers(track: TrajectoryTrack, window_end_frame: int, horizon: int,
                    frame_rate: float = FRAME_RATE, lane_width: float = 3.7,
                    lane_window_s: float = 4.0, braking_ratio: float = 0.8) -> int:
    """Maneuver label for the window ending at ``window_end_frame``.

    Lateral: lane id at end + 4 s versus end - 4 s (clipped to the track).
    Longitudinal: braking if the mean speed over the next ``horizon`` frames
    is below ``braking_ratio`` times the speed at the window end.
    """
    frames = track.frames
    end = int(np.searchsorted(frames, window_end_frame))
    if end >= len(frames) or frames[end] != window_end_frame:
        raise DataError(f"agent {track.agent_id} has no frame {window_end_frame}")
    if end < 1:
        raise DataError("need at least one frame before the window end to measure speed")
    if end + horizon > len(frames) - 1:
        raise DataError(f"horizon of {horizon} frames exceeds the track of agent {track.agent_id}")
    lanes = track.lane_id if track.lane_id is not None else lane_from_lateral(track.xy[:, 1], lane_width)
    reach = int(round(lane_window_s * frame_rate))
    before, after = lanes[max(end - reach, 0)], lanes[min(end + reach, len(frames) - 1)]
    lateral = 0 if after < before else (2 if after > before else 1)

    dt = 1.0 / frame_rate
    steps = np.linalg.norm(np.diff(track.xy[end - 1:end + horizon + 1], axis=0), axis=1) / dt
    current, future = steps[0], steps[1:].mean()
    longitudinal = 1 if future < braking_ratio * current else 0
    return maneuver_index(lateral, longitudinal)


# ---------------------------------------------------------------------------
# Dataset containers and manifests
# ---------------------------------------------------------------------------
@dataclass
class Scene:
    scene_id: int
    window: SceneWindow          # observed history, T_obs frames
    future: np.ndarray           # (T_f, 2) absolute target positions
    label: int
    split: str = "train"
    future_lane: np.ndarray | None = None


@dataclass
class Dataset:
    scenes: list[Scene]
    frame_rate: float = FRAME_RATE
    maneuvers: int = len(MANEUVERS)

    def __post_init__(self):
        for s in self.scenes:
            if not 0 <= s.label < self.maneuvers:
                raise DataError(f"scene {s.scene_id}: label {s.label} outside 0..{self.maneuvers - 1}")

    def __len__(self) -> int:
        return len(self.scenes)

    @property
    def t_obs(self) -> int:
        return self.scenes[0].window.t_obs if self.scenes else 0

    @property
    def t_f(self) -> int:
        return len(self.scenes[0].future) if self.scenes else 0

    def split(self, tag: str) -> "Dataset":
        return Dataset([s for s in self.scenes if s.split == tag], self.frame_rate, self.maneuvers)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.scenes], dtype=np.int64)

    def head(self, n: int) -> "Dataset":
        return Dataset(self.scenes[:n], self.frame_rate, self.maneuvers)


def assign_splits(n: int, fractions: Sequence[float], seed: int) -> list[str]:
    """Seeded train/val/test assignment with exact counts from the fractions."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise DataError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    n_val = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    order = np.random.default_rng(seed).permutation(n)
    tags = ["train"] * n
    for i in order[:n_val]:
        tags[i] = "val"
    for i in order[n_val:n_val + n_test]:
        tags[i] = "test"
    return tags


def scene_tracks(dataset: Dataset) -> list[TrajectoryTrack]:
    """Flatten scenes into tracks: targets carry history + future, neighbors history only."""
    tracks = []
    for s in dataset.scenes:
        tracks.append(full_target(s))
        tracks.extend(s.window.neighbors)
    return tracks


def manifest_of(dataset: Dataset, t_obs: int, t_f: int) -> dict:
    return {
        "version": MANIFEST_VERSION,
        "frame_rate": dataset.frame_rate,
        "t_obs": t_obs,
        "t_f": t_f,
        "scenes": [
            {"id": s.scene_id, "target": s.window.target.agent_id,
             "neighbors": [n.agent_id for n in s.window.neighbors],
             "end_frame": int(s.window.target.frames[-1]), "label": int(s.label), "split": s.split}
            for s in dataset.scenes
        ],
    }


def write_manifest(manifest: dict, path) -> None:
    Path(path).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    m = json.loads(Path(path).read_text())
    if m.get("version") != MANIFEST_VERSION:
        raise DataError(f"{path}: unsupported manifest version {m.get('version')}")
    return m


def build_scenes(tracks: Sequence[TrajectoryTrack], manifest: dict) -> Dataset:
    """Rebuild scenes from loaded tracks and a manifest."""
    by_id = {t.agent_id: t for t in tracks}
    t_obs, t_f, rate = manifest["t_obs"], manifest["t_f"], manifest["frame_rate"]
    scenes = []
    for rec in manifest["scenes"]:
        end = rec["end_frame"]
        start = end - t_obs + 1
        try:
            target = by_id[rec["target"]]
            neighbors = [by_id[i].window(start, end) for i in rec["neighbors"]]
        except KeyError as exc:
            raise DataError(f"scene {rec['id']}: unknown vehicle {exc}") from None
        fut = target.window(end + 1, end + t_f)
        if len(fut) != t_f:
            raise DataError(f"scene {rec['id']}: target future has {len(fut)} of {t_f} frames")
        window = SceneWindow(target.window(start, end), neighbors, t_obs, rate)
        scenes.append(Scene(rec["id"], window, fut.xy.copy(), rec["label"], rec["split"], fut.lane_id))
    return Dataset(scenes, rate)


def extract_scenes(tracks: Sequence[TrajectoryTrack], t_obs: int = 16, t_f: int = 25, stride: int = 10,
                   max_neighbors: int = 8, radius: float = 90.0, frame_rate: float = FRAME_RATE,
                   fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0) -> Dataset:
    """Slide windows over real tracks; neighbors must cover the whole observed window.

    Frames must be consecutive at ``frame_rate`` (downsample raw 10 Hz NGSIM first).
    """
    scenes = []
    by_frame_span = [(t, set(t.frames.tolist())) for t in tracks]
    sid = 0
    for target, _ in by_frame_span:
        if len(target) < t_obs + t_f:
            continue
        if np.any(np.diff(target.frames) != 1):
            continue
        for end_idx in range(t_obs - 1, len(target) - t_f, stride):
            end = int(target.frames[end_idx])
            start = end - t_obs + 1
            here = target.xy[end_idx]
            cands = []
            for other, frames in by_frame_span:
                if other.agent_id == target.agent_id or start not in frames or end not in frames:
                    continue
                w = other.window(start, end)
                if len(w) != t_obs:
                    continue
                d = float(np.linalg.norm(w.xy[-1] - here))
                if d <= radius:
                    cands.append((d, other.agent_id, w))
            cands.sort(key=lambda c: (c[0], c[1]))
            neighbors = [c[2] for c in cands[:max_neighbors]]
            label = label_maneuvers(target, end, t_f, frame_rate)
            window = SceneWindow(target.window(start, end), neighbors, t_obs, frame_rate)
            fut = slice(end_idx + 1, end_idx + 1 + t_f)
            lanes = None if target.lane_id is None else target.lane_id[fut]
            scenes.append(Scene(sid, window, target.xy[fut].copy(), label, future_lane=lanes))
            sid += 1
    tags = assign_splits(len(scenes), fractions, seed)
    for s, tag in zip(scenes, tags):
        s.split = tag
    return Dataset(scenes, frame_rate)


# ---------------------------------------------------------------------------
# Synthetic highway scenes
# ---------------------------------------------------------------------------
@dataclass
class SyntheticConfig:
    scenes: int = 1000
    lanes: int = 3
    lane_width: float = 3.7
    speed_range: tuple[float, float] = (8.0, 32.0)
    # probabilities of left, keep, right (lateral) and of braking (longitudinal)
    lateral_mix: tuple[float, float, float] = (0.25, 0.5, 0.25)
    braking_prob: float = 0.3
    max_neighbors: int = 8
    t_obs: int = 16
    t_f: int = 25
    frame_rate: float = FRAME_RATE
    accel_bound: float = 6.0
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    lane_change_s: float = 4.0
    # lane-boundary crossing time relative to the window end, seconds
    crossing_range: tuple[float, float] = (-1.5, 1.5)
    braking_gain: tuple[float, float] = (0.10, 0.15)   # deceleration as a fraction of speed per second
    braking_onset: tuple[float, float] = (-1.5, -0.4)  # seconds relative to window end
    cruise_accel: float = 0.3

    def validate(self) -> None:
        if self.lanes < 1:
            raise DataError("synthetic config needs at least one lane")
        if self.scenes < 0:
            raise DataError("scene count must be non-negative")
        lo, hi = self.speed_range
        if not 0 < lo <= hi:
            raise DataError(f"bad speed range {self.speed_range}")
        if abs(sum(self.lateral_mix) - 1.0) > 1e-9 or min(self.lateral_mix) < 0:
            raise DataError("lateral_mix must be three non-negative probabilities summing to 1")
        if self.lanes == 1 and (self.lateral_mix[0] > 0 or self.lateral_mix[2] > 0):
            raise DataError("lane changes need at least two lanes")
        if not 0 <= self.braking_prob <= 1:
            raise DataError("braking_prob must lie in [0, 1]")
        if self.max_neighbors < 0:
            raise DataError("max_neighbors must be non-negative")
        if self.braking_gain[1] * self.t_f / self.frame_rate >= 1.0:
            raise DataError("braking gain would stop the vehicle within the horizon")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown synthetic config keys: {sorted(unknown)}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _lane_change_offset(t: np.ndarray, t_cross: float, duration: float) -> np.ndarray:
    """Fraction of one lane width covered at times ``t``: raised cosine over ``duration``."""
    u = np.clip((t - t_cross) / duration + 0.5, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * u))


def _longitudinal(t: np.ndarray, v_end: float, accel: float, onset: float) -> np.ndarray:
    """Position with speed ``v_end`` at t=0, constant speed before ``onset`` and acceleration after.

    Speed before the onset is v_end - accel * (0 - onset), so v(0) = v_end exactly.
    """
    v0 = v_end + accel * onset
    tau = np.maximum(t - onset, 0.0)
    return v0 * t + 0.5 * accel * tau ** 2 - 0.5 * accel * max(-onset, 0.0) ** 2


def _vehicle(t, x_end, lane, lanes_w, v_end, accel, onset, lat_dir, t_cross, change_s):
    x = x_end + _longitudinal(t, v_end, accel, onset)
    y = (lane - 0.5) * lanes_w + lat_dir * lanes_w * _lane_change_offset(t, t_cross, change_s)
    return np.stack([x, y], axis=1)


def gen_synthetic(config: SyntheticConfig | None = None, seed: int = 0) -> Dataset:
    """Multi-vehicle highway scenes with maneuver labels exact by construction.

    Scene k uses frames k*1000 .. k*1000 + T_obs + T_f - 1 and vehicle ids
    k*100 + j (j = 0 is the target) so scenes can share one CSV.
    """
    c = config or SyntheticConfig()
    c.validate()
    rng = np.random.default_rng(seed)
    total = c.t_obs + c.t_f
    t = (np.arange(total) - (c.t_obs - 1)) / c.frame_rate   # 0 at the window end
    scenes = []
    tags = assign_splits(c.scenes, c.split_fractions, seed)
    for k in range(c.scenes):
        base_frame, base_id = k * 1000, k * 100
        frames = base_frame + np.arange(total)
        lat = int(rng.choice(3, p=c.lateral_mix))
        lon = int(rng.random() < c.braking_prob)
        # choose a lane that allows the lateral move
        allowed = [ln for ln in range(1, c.lanes + 1) if 1 <= ln + (lat - 1) <= c.lanes]
        lane = int(rng.choice(allowed))
        v_end = rng.uniform(*c.speed_range)
        if lon:
            accel = -rng.uniform(*c.braking_gain) * v_end
            onset = rng.uniform(*c.braking_onset)
        else:
            accel = rng.uniform(-c.cruise_accel, c.cruise_accel)
            onset = -(c.t_obs - 1) / c.frame_rate
        t_cross = rng.uniform(*c.crossing_range)
        target_xy = _vehicle(t, 0.0, lane, c.lane_width, v_end, accel, onset, lat - 1, t_cross,
                             c.lane_change_s)
        lanes_t = lane_from_lateral(target_xy[:, 1], c.lane_width)

        n_nb = int(rng.integers(0, c.max_neighbors + 1))
        occupied = {lane: [0.0]}
        if lat != 1:
            occupied[lane + lat - 1] = [0.0]   # keep the destination lane clear beside the target
        neighbors = []
        start = -(c.t_obs - 1) / c.frame_rate
        for j in range(1, n_nb + 1):
            if lon and j == 1:
                # braking scenes get a slower leader ahead in the target lane
                nl, dx, v_nb = lane, rng.uniform(15.0, 35.0), v_end * rng.uniform(0.6, 0.8)
            else:
                nl = int(rng.integers(max(1, lane - 2), min(c.lanes, lane + 2) + 1))
                dx = rng.uniform(-60.0, 80.0)
                if any(abs(dx - o) < 10.0 for o in occupied.get(nl, [])):
                    continue
                v_nb = rng.uniform(*c.speed_range)
            occupied.setdefault(nl, []).append(dx)
            a_nb = rng.uniform(-c.cruise_accel, c.cruise_accel)
            xy = _vehicle(t[:c.t_obs], dx, nl, c.lane_width, v_nb, a_nb, start, 0, 0.0, 1.0)
            neighbors.append(TrajectoryTrack(base_id + j, frames[:c.t_obs], xy,
                                             lane_from_lateral(xy[:, 1], c.lane_width)))
        window = SceneWindow(TrajectoryTrack(base_id, frames[:c.t_obs], target_xy[:c.t_obs],
                                             lanes_t[:c.t_obs]), neighbors, c.t_obs, c.frame_rate)
        scenes.append(Scene(k, window, target_xy[c.t_obs:].copy(), maneuver_index(lat, lon), tags[k],
                            lanes_t[c.t_obs:].copy()))
    return Dataset(scenes, c.frame_rate)


def full_target(scene: Scene) -> TrajectoryTrack:
    """Target track over history and future."""
    t = scene.window.target
    frames = np.concatenate([t.frames, t.frames[-1] + 1 + np.arange(len(scene.future))])
    xy = np.vstack([t.xy, scene.future])
    lanes = None
    if t.lane_id is not None and scene.future_lane is not None:
        lanes = np.concatenate([t.lane_id, scene.future_lane])
    return TrajectoryTrack(t.agent_id, frames, xy, lanes)


def relabel_agreement(dataset: Dataset, frame_rate: float = FRAME_RATE) -> float:
    """Fraction of scenes whose stored label matches :func:`label_maneuvers`."""
    if not dataset.scenes:
        return 1.0
    hits = 0
    for s in dataset.scenes:
        full = full_target(s)
        end = int(s.window.target.frames[-1])
        hits += label_maneuvers(full, end, len(s.future), frame_rate) == s.label
    return hits / len(dataset.scenes)


# ---------------------------------------------------------------------------
# Missing-data protocol
# ---------------------------------------------------------------------------
def impute_missing(track: TrajectoryTrack, missing) -> TrajectoryTrack:
    """Fill frames flagged in ``missing`` (bool mask, or (start, stop) index range).

    Interior gaps are interpolated linearly per coordinate; gaps touching an
    end copy the nearest known position.
    """
    n = len(track)
    if isinstance(missing, tuple) and len(missing) == 2:
        mask = np.zeros(n, dtype=bool)
        mask[missing[0]:missing[1]] = True
    else:
        mask = np.asarray(missing, dtype=bool)
        if mask.shape != (n,):
            raise DataError(f"missing mask has shape {mask.shape}, track has {n} frames")
    if not mask.any():
        return TrajectoryTrack(track.agent_id, track.frames.copy(), track.xy.copy(),
                               None if track.lane_id is None else track.lane_id.copy())
    known = ~mask
    if not known.any():
        raise DataError(f"agent {track.agent_id}: every frame is missing")
    t = track.frames.astype(np.float64)
    xy = track.xy.copy()
    for d in range(2):
        # np.interp holds the end values constant outside the known range
        xy[mask, d] = np.interp(t[mask], t[known], track.xy[known, d])
    lane = None
    if track.lane_id is not None:
        idx = np.flatnonzero(known)
        nearest = idx[np.clip(np.searchsorted(idx, np.arange(n)), 0, len(idx) - 1)]
        lane = track.lane_id[nearest]
        lane[known] = track.lane_id[known]
    return TrajectoryTrack(track.agent_id, track.frames.copy(), xy, lane)


@dataclass
class MissingSpec:
    t_m: float
    frame_rate: float = FRAME_RATE

    def __post_init__(self):
        frames = self.t_m * self.frame_rate
        if self.t_m < 0 or abs(frames - round(frames)) > 1e-9:
            raise DataError(f"t_m = {self.t_m} s is not a whole number of frames at {self.frame_rate} Hz")

    @property
    def frames(self) -> int:
        return int(round(self.t_m * self.frame_rate))


def gap_start(u: float, t_obs: int, frames: int) -> int:
    """First deleted frame for relative offset ``u`` in [0, 1).

    floor(u * (T - k)) keeps gaps for one ``u`` nested as k grows and never
    removes the last observed frame.
    """
    return int(math.floor(u * (t_obs - frames)))


def make_missing_subsets(dataset: Dataset, spec: MissingSpec, seed: int) -> Dataset:
    """Delete ``spec.t_m`` seconds of every scene's history at a seeded offset, then impute."""
    if not dataset.scenes:
        return Dataset([], dataset.frame_rate, dataset.maneuvers)
    k = spec.frames
    t_obs = dataset.t_obs
    if k >= t_obs:
        raise DataError(f"t_m = {spec.t_m} s covers the whole {t_obs}-frame observation")
    if k == 0:
        return dataset
    rng = np.random.default_rng(seed)
    offsets = rng.random(len(dataset.scenes))
    scenes = []
    for s, u in zip(dataset.scenes, offsets):
        start = gap_start(float(u), t_obs, k)
        w = s.window
        window = SceneWindow(impute_missing(w.target, (start, start + k)),
                             [impute_missing(n, (start, start + k)) for n in w.neighbors],
                             w.t_obs, w.frame_rate)
        scenes.append(Scene(s.scene_id, window, s.future, s.label, s.split, s.future_lane))
    return Dataset(scenes, dataset.frame_rate, dataset.maneuvers)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------
def rmse(preds, gts, horizon: int) -> float:
    """RMSE of the Euclidean error at 1-based frame ``horizon``."""
    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if preds.shape[0] != gts.shape[0]:
        raise DataError(f"{preds.shape[0]} predictions for {gts.shape[0]} ground-truth tracks")
    if preds.shape[0] == 0:
        raise DataError("rmse of zero samples is undefined")
    if not 1 <= horizon <= min(preds.shape[1], gts.shape[1]):
        raise DataError(f"horizon {horizon} outside 1..{min(preds.shape[1], gts.shape[1])}")
    err = preds[:, horizon - 1] - gts[:, horizon - 1]
    return float(np.sqrt(np.mean(np.sum(err * err, axis=-1))))


def rmse_report(preds, gts, horizons: Sequence[int] = HORIZON_FRAMES) -> dict[str, float]:
    """Per-horizon RMSE keyed ``"1s"``.. plus their mean under ``"AVG"``."""
    out = {}
    for h in horizons:
        out[f"{h / FRAME_RATE:g}s"] = rmse(preds, gts, h)
    out["AVG"] = float(np.mean(list(out.values())))
    return out


def avg_rmse(preds, gts, horizons: Sequence[int] = HORIZON_FRAMES) -> float:
    return rmse_report(preds, gts, horizons)["AVG"]
