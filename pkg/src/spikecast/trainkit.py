"""Adam, cosine warm-restart schedule, teacher/student training loops and checkpoints."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from . import losses as L
from .batching import Batch, collate
from .datakit import Dataset
from .scene import SectorConfig
from .student import Student, StudentConfig
from .teacher import MultimodalPrediction, Teacher, TeacherConfig

MAGIC = b"HLTP"
FORMAT_VERSION = 1
METRIC_COLUMNS = ("step", "epoch", "lr", "loss_total", "loss_traj", "loss_man", "loss_dis_traj",
                  "loss_dis_man", "loss_st", "sigma_t", "sigma_m", "sigma_s", "sigma_d")


class TrainError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Optimizer and schedule
# ---------------------------------------------------------------------------
@dataclass
class OptimState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: Sequence[np.ndarray], lr: float = 1e-3) -> "OptimState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0, lr)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimState):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if not (len(params) == len(grads) == len(state.m)):
        raise dc.ShapeError(f"{len(params)} parameters, {len(grads)} gradients, {len(state.m)} moments")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise dc.ShapeError(f"parameter {p.shape}, gradient {g.shape}, moment {m.shape} disagree")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


@dataclass
class ScheduleConfig:
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    cycle_epochs: float = 25.0
    multiplier: float = 2.0

    def __post_init__(self):
        if not 0 < self.lr_min < self.lr_max:
            raise TrainError(f"need 0 < lr_min < lr_max, got {self.lr_min}, {self.lr_max}")
        if self.cycle_epochs < 1 or self.multiplier < 1:
            raise TrainError("cycle length and restart multiplier must be at least 1")


def lr_at(epoch_fraction: float, config: ScheduleConfig) -> float:
    """Cosine annealing within one cycle; ``epoch_fraction`` in [0, 1]."""
    return config.lr_min + 0.5 * (config.lr_max - config.lr_min) * (1.0 + math.cos(math.pi * epoch_fraction))


def lr_for_epoch(epoch: float, config: ScheduleConfig) -> float:
    """Learning rate at fractional ``epoch`` with warm restarts."""
    length, start = float(config.cycle_epochs), 0.0
    while epoch >= start + length:
        start += length
        length *= config.multiplier
    return lr_at((epoch - start) / length, config)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    clip_norm: float = 10.0
    traj_loss: str = "gt"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    # KDM log-variances are clamped to this box after each step
    log_var_bounds: tuple[float, float] = (-4.0, 4.0)

    def __post_init__(self):
        if isinstance(self.schedule, dict):
            self.schedule = ScheduleConfig(**self.schedule)
        self.log_var_bounds = tuple(self.log_var_bounds)
        if self.epochs < 0 or self.batch_size < 1:
            raise TrainError("epochs must be >= 0 and batch_size >= 1")
        if self.traj_loss not in ("gt", "weighted"):
            raise TrainError(f"unknown trajectory loss mode {self.traj_loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
def config_digest(obj) -> str:
    """sha256 of the canonical JSON form (sorted keys) of ``obj``."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class Checkpoint:
    role: str                          # "teacher" or "student"
    model_config: dict
    params: dict[str, np.ndarray]      # model parameters and buffers
    digest: str
    epoch: int = 0
    optim_m: dict[str, np.ndarray] = field(default_factory=dict)
    optim_v: dict[str, np.ndarray] = field(default_factory=dict)
    optim_step: int = 0
    kdm: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<I", self.version))
        _write_str(out, self.digest)
        header = {"role": self.role, "model_config": self.model_config, "epoch": self.epoch,
                  "optim_step": self.optim_step, "metadata": self.metadata}
        _write_str(out, json.dumps(header, sort_keys=True, separators=(",", ":")))
        blocks = ([(f"model/{k}", v) for k, v in self.params.items()]
                  + [(f"adam_m/{k}", v) for k, v in self.optim_m.items()]
                  + [(f"adam_v/{k}", v) for k, v in self.optim_v.items()]
                  + [(f"kdm/{k}", v) for k, v in self.kdm.items()])
        out.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks:
            arr = np.asarray(arr, dtype="<f8")
            _write_str(out, name)
            out.write(struct.pack("<I", arr.ndim))
            out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            out.write(arr.tobytes(order="C"))
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        buf = io.BytesIO(data)
        if buf.read(4) != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic bytes)")
        (version,) = _unpack(buf, "<I")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format version {version}")
        digest = _read_str(buf)
        header = json.loads(_read_str(buf))
        (count,) = _unpack(buf, "<I")
        groups: dict[str, dict[str, np.ndarray]] = {"model": {}, "adam_m": {}, "adam_v": {}, "kdm": {}}
        for _ in range(count):
            name = _read_str(buf)
            (ndim,) = _unpack(buf, "<I")
            shape = _unpack(buf, f"<{ndim}Q") if ndim else ()
            n = int(np.prod(shape)) if ndim else 1
            raw = buf.read(8 * n)
            if len(raw) != 8 * n:
                raise CheckpointError(f"truncated block {name!r}")
            group, _, key = name.partition("/")
            if group not in groups:
                raise CheckpointError(f"unknown block group {group!r}")
            groups[group][key] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
        if buf.read(1):
            raise CheckpointError("trailing bytes after the last block")
        return cls(header["role"], header["model_config"], groups["model"], digest, header["epoch"],
                   groups["adam_m"], groups["adam_v"], header["optim_step"], groups["kdm"],
                   header["metadata"], version)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        return cls.from_bytes(data)

    def build_model(self):
        """Instantiate the network described by ``model_config`` and load the parameters."""
        if self.role == "teacher":
            model = Teacher(TeacherConfig(**self.model_config))
        elif self.role == "student":
            model = Student(StudentConfig(**self.model_config))
        else:
            raise CheckpointError(f"unknown checkpoint role {self.role!r}")
        model.load_state_dict(self.params)
        return model.eval()


def _write_str(out, text: str) -> None:
    raw = text.encode()
    out.write(struct.pack("<I", len(raw)))
    out.write(raw)


def _unpack(buf, fmt: str):
    size = struct.calcsize(fmt)
    raw = buf.read(size)
    if len(raw) != size:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack(fmt, raw)


def _read_str(buf) -> str:
    (n,) = _unpack(buf, "<I")
    raw = buf.read(n)
    if len(raw) != n:
        raise CheckpointError("truncated checkpoint")
    return raw.decode()


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------
class MetricsWriter:
    """Per-step loss rows; the first line is a comment with digest and seed."""

    def __init__(self, path, digest: str, seed: int):
        self.path = path
        self.rows: list[list[str]] = []
        self.digest, self.seed = digest, seed

    def log(self, **values) -> None:
        self.rows.append([_fmt(values.get(c, 0.0)) for c in METRIC_COLUMNS])

    def text(self) -> str:
        out = io.StringIO()
        out.write(f"# config_digest={self.digest} seed={self.seed}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        w.writerows(self.rows)
        return out.getvalue()

    def close(self) -> None:
        if self.path is not None:
            Path(self.path).write_text(self.text())


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def read_metrics(path) -> dict[str, np.ndarray]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    cols = list(zip(*reader)) or [()] * len(header)
    return {h: np.array([float(x) for x in col]) for h, col in zip(header, cols)}


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------
def encode_dataset(dataset: Dataset, t_obs: int, max_agents: int, sector: SectorConfig | None = None,
                   pooling: bool = True) -> Batch:
    """Encode every scene once; windows longer than ``t_obs`` keep their last frames."""
    if not dataset.scenes:
        raise TrainError("dataset is empty")
    windows = [s.window if s.window.t_obs == t_obs else s.window.last(t_obs) for s in dataset.scenes]
    return collate(windows, [s.future for s in dataset.scenes], dataset.labels(), max_agents, sector, pooling)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def _step(params: list[dc.Tensor], state: OptimState, clip: float) -> float:
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
    norm = clip_global_norm(grads, clip)
    if not math.isfinite(norm):
        raise TrainError("non-finite gradient norm")
    adam_step([p.data for p in params], grads, state)
    for p in params:
        p.grad = None
    return norm


def _optim_dicts(names: list[str], state: OptimState):
    return dict(zip(names, state.m)), dict(zip(names, state.v))


def _restore_optim(names: list[str], params, ckpt: Checkpoint | None, lr: float) -> OptimState:
    state = OptimState.fresh([p.data for p in params], lr)
    if ckpt is not None and ckpt.optim_m:
        state.m = [ckpt.optim_m[n].copy() for n in names]
        state.v = [ckpt.optim_v[n].copy() for n in names]
        state.step = ckpt.optim_step
    return state


def teacher_losses(model: Teacher, batch: Batch, traj_mode: str = "gt"):
    pred, l_st = model(batch)
    traj = L.trajectory_loss(pred, batch.future, batch.labels, traj_mode)
    man = L.maneuver_loss(pred, batch.labels)
    return pred, traj, man, l_st


def train_teacher(dataset: Dataset, model_config: TeacherConfig | None = None,
                  train_config: TrainConfig | None = None, seed: int = 0, digest: str | None = None,
                  metrics_path=None, sector: SectorConfig | None = None, pooling: bool = True,
                  encoded: Batch | None = None, on_epoch=None) -> Checkpoint:
    """Minimize traj + man + st over ``dataset`` and return the final checkpoint."""
    mc = model_config or TeacherConfig()
    tc = train_config or TrainConfig()
    if len(dataset) == 0:
        raise TrainError("cannot train on an empty dataset")
    if dataset.t_f != mc.t_f or dataset.t_obs < mc.t_obs:
        raise TrainError(f"dataset has T_obs={dataset.t_obs}, T_f={dataset.t_f}; teacher needs "
                         f"{mc.t_obs}, {mc.t_f}")
    digest = digest or config_digest({"teacher": asdict(mc), "train": tc.to_dict()})
    data = encoded if encoded is not None else encode_dataset(dataset, mc.t_obs, mc.max_agents, sector, pooling)
    model = Teacher(mc, seed)
    rng = np.random.default_rng([seed, 1])
    model.set_dropout_rng(np.random.default_rng([seed, 2]))
    model.train()
    named = list(model.named_parameters())
    names, params = [n for n, _ in named], [p for _, p in named]
    state = OptimState.fresh([p.data for p in params], tc.schedule.lr_max)
    writer = MetricsWriter(metrics_path, digest, seed)
    n = len(data)
    steps_per_epoch = math.ceil(n / tc.batch_size)
    step = 0
    for epoch in range(tc.epochs):
        for k, idx in enumerate(_batches(n, tc.batch_size, rng)):
            state.lr = lr_for_epoch(epoch + k / steps_per_epoch, tc.schedule)
            batch = data.subset(idx)
            _, traj, man, st = teacher_losses(model, batch, tc.traj_loss)
            total = L.teacher_total(traj, man, st)
            if not np.isfinite(total.data):
                raise TrainError(f"non-finite teacher loss at step {step}")
            total.backward()
            _step(params, state, tc.clip_norm)
            step += 1
            writer.log(step=step, epoch=epoch, lr=state.lr, loss_total=total.data, loss_traj=traj.data,
                       loss_man=man.data, loss_st=st.data, sigma_t=1.0, sigma_m=1.0, sigma_s=1.0, sigma_d=1.0)
        if on_epoch is not None:
            on_epoch(epoch, model)
            model.train()
    writer.close()
    m, v = _optim_dicts(names, state)
    return Checkpoint("teacher", asdict(mc), model.state_dict(), digest, tc.epochs, m, v, state.step,
                      metadata={"seed": seed, "train": tc.to_dict(), "steps": step})


def teacher_targets(teacher: Teacher, batch: Batch, chunk: int = 256) -> MultimodalPrediction:
    """Teacher predictions in inference mode, as constants."""
    teacher.eval()
    parts = []
    with dc.no_grad():
        for i in range(0, len(batch), chunk):
            pred, _ = teacher(batch.subset(np.arange(i, min(i + chunk, len(batch)))))
            parts.append(pred)
    return MultimodalPrediction(*(dc.Tensor(np.concatenate([getattr(p, f).data for p in parts]))
                                  for f in ("probs", "mu", "sigma", "rho")))


def _subset_pred(pred: MultimodalPrediction, idx) -> MultimodalPrediction:
    return MultimodalPrediction(*(dc.Tensor(getattr(pred, f).data[idx]) for f in ("probs", "mu", "sigma", "rho")))


def student_losses(model: Student, batch: Batch, teacher_pred: MultimodalPrediction, traj_mode: str = "gt"):
    pred = model(batch)
    traj = L.trajectory_loss(pred, batch.future, batch.labels, traj_mode)
    man = L.maneuver_loss(pred, batch.labels)
    dis_traj, dis_man = L.distill_losses(pred, teacher_pred)
    return pred, traj, man, dis_traj, dis_man


def train_student(dataset: Dataset, teacher: Checkpoint, kdm_enabled: bool = True,
                  model_config: StudentConfig | None = None, train_config: TrainConfig | None = None,
                  seed: int = 0, digest: str | None = None, teacher_digest: str | None = None,
                  metrics_path=None, sector: SectorConfig | None = None, pooling: bool = True,
                  teacher_batch: Batch | None = None, student_batch: Batch | None = None,
                  teacher_pred: MultimodalPrediction | None = None, on_epoch=None) -> Checkpoint:
    """Distil ``teacher`` into a spiking student; KDM weighting or a plain sum of the four losses.

    ``teacher_digest``, when given, must equal the teacher checkpoint's digest.
    """
    sc = model_config or StudentConfig()
    tc = train_config or TrainConfig()
    if teacher.role != "teacher":
        raise CheckpointError(f"expected a teacher checkpoint, got role {teacher.role!r}")
    if teacher_digest is not None and teacher.digest != teacher_digest:
        raise CheckpointError(f"teacher checkpoint digest {teacher.digest[:12]} does not match the "
                              f"expected {teacher_digest[:12]}")
    t_model = teacher.build_model()
    t_cfg = t_model.config
    if (t_cfg.modes, t_cfg.t_f) != (sc.modes, sc.t_f):
        raise CheckpointError("teacher and student disagree on maneuver count or horizon")
    if len(dataset) == 0:
        raise TrainError("cannot train on an empty dataset")
    digest = digest or config_digest({"student": asdict(sc), "train": tc.to_dict(), "kdm": kdm_enabled,
                                      "teacher": teacher.digest})
    if teacher_pred is None:
        t_batch = teacher_batch if teacher_batch is not None else encode_dataset(
            dataset, t_cfg.t_obs, t_cfg.max_agents, sector, pooling)
        teacher_pred = teacher_targets(t_model, t_batch)
    data = student_batch if student_batch is not None else encode_dataset(
        dataset, sc.t_obs, t_cfg.max_agents, sector, pooling)

    model = Student(sc, seed)
    kdm = L.KdmState()
    rng = np.random.default_rng([seed, 1])
    named = list(model.named_parameters())
    if kdm_enabled:
        named += [(f"kdm.{k}", p) for k, p in kdm.named_parameters()]
    names, params = [n for n, _ in named], [p for _, p in named]
    state = OptimState.fresh([p.data for p in params], tc.schedule.lr_max)
    writer = MetricsWriter(metrics_path, digest, seed)
    n = len(data)
    steps_per_epoch = math.ceil(n / tc.batch_size)
    step = 0
    for epoch in range(tc.epochs):
        for k, idx in enumerate(_batches(n, tc.batch_size, rng)):
            state.lr = lr_for_epoch(epoch + k / steps_per_epoch, tc.schedule)
            batch = data.subset(idx)
            _, traj, man, dis_t, dis_m = student_losses(model, batch, _subset_pred(teacher_pred, idx),
                                                        tc.traj_loss)
            if kdm_enabled:
                total = L.kdm_total(traj, man, dis_t, dis_m, kdm)
            else:
                total = traj + man + dis_t + dis_m
            if not np.isfinite(total.data):
                raise TrainError(f"non-finite student loss at step {step}")
            total.backward()
            _step(params, state, tc.clip_norm)
            model.clamp()
            if kdm_enabled:
                kdm.clamp(*tc.log_var_bounds)
            step += 1
            sig = kdm.sigmas()
            writer.log(step=step, epoch=epoch, lr=state.lr, loss_total=total.data, loss_traj=traj.data,
                       loss_man=man.data, loss_dis_traj=dis_t.data, loss_dis_man=dis_m.data,
                       sigma_t=sig["t"], sigma_m=sig["m"], sigma_s=sig["s"], sigma_d=sig["d"])
        if on_epoch is not None:
            on_epoch(epoch, model)
            model.train()
    writer.close()
    m, v = _optim_dicts(names, state)
    return Checkpoint("student", asdict(sc), model.state_dict(), digest, tc.epochs, m, v, state.step,
                      {k: p.data.copy() for k, p in kdm.named_parameters()},
                      metadata={"seed": seed, "train": tc.to_dict(), "steps": step, "kdm": kdm_enabled,
                                "teacher_digest": teacher.digest})


# ---------------------------------------------------------------------------
# Evaluation helpers
# ---------------------------------------------------------------------------
def predict(model, batch: Batch, chunk: int = 256) -> MultimodalPrediction:
    model.eval()
    parts = []
    with dc.no_grad():
        for i in range(0, len(batch), chunk):
            out = model(batch.subset(np.arange(i, min(i + chunk, len(batch)))))
            parts.append(out[0] if isinstance(out, tuple) else out)
    return MultimodalPrediction(*(dc.Tensor(np.concatenate([getattr(p, f).data for p in parts]))
                                  for f in ("probs", "mu", "sigma", "rho")))


def kdm_balance_cv(metrics: dict[str, np.ndarray], tail: float = 0.1) -> float:
    """Coefficient of variation of the sigma-weighted trajectory/maneuver term ratio over the last steps."""
    s = {k: metrics[f"sigma_{k}"] for k in "tmsd"}
    w = {k: 1.0 / (2.0 * s[k] ** 2) for k in s}
    traj = w["s"] * w["t"] * metrics["loss_traj"] + w["d"] * w["t"] * metrics["loss_dis_traj"]
    man = w["s"] * w["m"] * metrics["loss_man"] + w["d"] * w["m"] * metrics["loss_dis_man"]
    n = max(1, int(round(len(traj) * tail)))
    ratio = traj[-n:] / man[-n:]
    return float(np.std(ratio) / abs(np.mean(ratio)))
