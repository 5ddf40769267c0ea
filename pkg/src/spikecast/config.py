"""One declarative JSON document holding every module's settings, with a stable digest."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .datakit import SyntheticConfig
from .scene import SectorConfig
from .student import StudentConfig
from .teacher import TeacherConfig
from .trainkit import ScheduleConfig, TrainConfig, config_digest


class ConfigError(ValueError):
    pass


def _check_keys(section: str, given: dict, allowed) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(unknown)}")


def _dataclass_from(section: str, cls, values: dict):
    if not isinstance(values, dict):
        raise ConfigError(f"section '{section}' must be an object")
    _check_keys(section, values, [f.name for f in fields(cls)])
    try:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in values.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section '{section}': {exc}") from exc


@dataclass
class DataPaths:
    tracks_csv: str | None = None
    manifest: str | None = None
    feet: bool = False


@dataclass
class EvalConfig:
    split: str = "test"
    mixture_mean: bool = False
    plot_scenes: int = 8


@dataclass
class RunConfig:
    seed: int = 0
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    data: DataPaths = field(default_factory=DataPaths)
    sector: SectorConfig = field(default_factory=SectorConfig)
    pooling: bool = True
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    student: StudentConfig = field(default_factory=StudentConfig)
    teacher_train: TrainConfig = field(default_factory=TrainConfig)
    student_train: TrainConfig = field(default_factory=TrainConfig)
    kdm: bool = True
    eval: EvalConfig = field(default_factory=EvalConfig)

    _SECTIONS = {"synthetic": SyntheticConfig, "data": DataPaths, "teacher": TeacherConfig,
                 "student": StudentConfig, "eval": EvalConfig}

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        _check_keys("<root>", doc, [f.name for f in fields(cls)])
        cfg = cls()
        for key, value in doc.items():
            if key in cls._SECTIONS:
                setattr(cfg, key, _dataclass_from(key, cls._SECTIONS[key], value))
            elif key == "sector":
                try:
                    cfg.sector = SectorConfig.from_dict(value)
                except (KeyError, TypeError, ValueError) as exc:
                    raise ConfigError(f"section 'sector': {exc}") from exc
            elif key in ("teacher_train", "student_train"):
                value = dict(value)
                schedule = value.pop("schedule", {})
                train = _dataclass_from(key, TrainConfig, value)
                train.schedule = _dataclass_from(f"{key}.schedule", ScheduleConfig, schedule)
                setattr(cfg, key, train)
            else:
                setattr(cfg, key, value)
        if not isinstance(cfg.seed, int) or cfg.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def validate(self) -> None:
        self.synthetic.validate()
        self.sector.validate()
        if (self.teacher.t_f, self.teacher.modes) != (self.student.t_f, self.student.modes):
            raise ConfigError("teacher and student must share the horizon and maneuver count")
        if self.student.t_obs > self.teacher.t_obs:
            raise ConfigError("student observes more frames than the teacher")
        if self.synthetic.t_obs != self.teacher.t_obs or self.synthetic.t_f != self.teacher.t_f:
            raise ConfigError("synthetic window lengths must match the teacher's")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        out = {}
        for k, v in d.items():
            if k == "sector":
                out[k] = v.to_dict()
            elif hasattr(v, "__dataclass_fields__"):
                out[k] = asdict(v)
            else:
                out[k] = v
        return json.loads(json.dumps(out))   # tuples -> lists

    def digest(self) -> str:
        """Hash of the whole document except the seed; independent of key order."""
        d = self.to_dict()
        d.pop("seed")
        return config_digest(d)

    def role_digest(self, role: str, kdm: bool | None = None) -> str:
        """Digest of the settings a checkpoint of ``role`` depends on."""
        d = self.to_dict()
        teacher_part = {k: d[k] for k in ("synthetic", "data", "sector", "pooling", "teacher", "teacher_train")}
        if role == "teacher":
            return config_digest(teacher_part)
        if role == "student":
            return config_digest({"teacher": config_digest(teacher_part), "student": d["student"],
                                  "student_train": d["student_train"],
                                  "kdm": self.kdm if kdm is None else kdm})
        raise ConfigError(f"unknown role {role!r}")

    def with_overrides(self, **changes) -> "RunConfig":
        cfg = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(cfg, k, v)
        return cfg
