"""Command-line entry point: gen, train-teacher, train-student, eval, ablate, plot."""
from __future__ import annotations

import os

# BLAS threads must be capped before numpy loads
_THREADS = os.environ.get("SPIKECAST_THREADS")
if _THREADS:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import argparse
import csv
import io
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import datakit as dk
from . import trainkit as tk
from .config import ConfigError, RunConfig
from .plotting import curves_svg, scene_svg

HORIZON_NAMES = [f"{h // 5}s" for h in dk.HORIZON_FRAMES]


class UsageError(ValueError):
    pass


def threads() -> int:
    try:
        return max(1, int(os.environ.get("SPIKECAST_THREADS", "1")))
    except ValueError:
        raise UsageError("SPIKECAST_THREADS must be a positive integer") from None


def run_digest(cfg: RunConfig, verb: str, **options) -> str:
    return tk.config_digest({"config": cfg.digest(), "verb": verb, "options": options})


def _stamp(cfg: RunConfig, digest: str) -> str:
    return f"config_digest={cfg.digest()} run_digest={digest} seed={cfg.seed}"


def _write_csv(path: Path, stamp: str, header: list[str], rows: list[list]) -> None:
    out = io.StringIO()
    out.write(f"# {stamp}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    path.write_text(out.getvalue())


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------
def load_dataset(cfg: RunConfig, data_dir: str | None = None) -> dk.Dataset:
    """Scenes from ``data_dir`` (tracks.csv + manifest.json), the config's paths, or the generator."""
    if data_dir is not None:
        tracks_csv, manifest = Path(data_dir) / "tracks.csv", Path(data_dir) / "manifest.json"
    elif cfg.data.tracks_csv:
        tracks_csv, manifest = Path(cfg.data.tracks_csv), cfg.data.manifest and Path(cfg.data.manifest)
    else:
        return dk.gen_synthetic(cfg.synthetic, cfg.seed)
    tracks = dk.load_tracks(tracks_csv, feet=cfg.data.feet)
    if manifest:
        return dk.build_scenes(tracks, dk.read_manifest(manifest))
    return dk.extract_scenes(tracks, cfg.teacher.t_obs, cfg.teacher.t_f,
                             fractions=cfg.synthetic.split_fractions, seed=cfg.seed)


def cmd_gen(cfg: RunConfig, out: Path) -> dict:
    dataset = dk.gen_synthetic(cfg.synthetic, cfg.seed)
    manifest = dk.manifest_of(dataset, cfg.synthetic.t_obs, cfg.synthetic.t_f)
    manifest["config_digest"] = cfg.digest()
    manifest["seed"] = cfg.seed
    out.mkdir(parents=True, exist_ok=True)
    dk.write_tracks(dk.scene_tracks(dataset), out / "tracks.csv")
    dk.write_manifest(manifest, out / "manifest.json")
    return manifest


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------
def cmd_train(cfg: RunConfig, role: str, out: Path, data_dir: str | None = None,
              teacher_path: str | None = None, kdm: bool | None = None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(cfg, data_dir).split("train")
    if role == "teacher":
        ckpt = tk.train_teacher(dataset, cfg.teacher, cfg.teacher_train, cfg.seed,
                                digest=cfg.role_digest("teacher"),
                                metrics_path=out / "teacher_metrics.csv", sector=cfg.sector,
                                pooling=cfg.pooling)
        path = out / "teacher.ckpt"
    elif role == "student":
        if not teacher_path:
            raise UsageError("train-student needs --teacher <checkpoint>")
        teacher = tk.Checkpoint.load(teacher_path)
        use_kdm = cfg.kdm if kdm is None else kdm
        ckpt = tk.train_student(dataset, teacher, use_kdm, cfg.student, cfg.student_train, cfg.seed,
                                digest=cfg.role_digest("student", use_kdm),
                                teacher_digest=cfg.role_digest("teacher"),
                                metrics_path=out / "student_metrics.csv", sector=cfg.sector,
                                pooling=cfg.pooling)
        path = out / "student.ckpt"
    else:
        raise UsageError(f"unknown role {role!r}")
    ckpt.save(path)
    return path


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------
def evaluate(ckpt: tk.Checkpoint, dataset: dk.Dataset, cfg: RunConfig, missing: float = 0.0,
             missing_seed: int | None = None):
    """(report, prediction, batch) for one checkpoint on ``dataset``."""
    if missing:
        seed = cfg.seed if missing_seed is None else missing_seed
        dataset = dk.make_missing_subsets(dataset, dk.MissingSpec(missing, dataset.frame_rate), seed)
    model = ckpt.build_model()
    t_obs = model.config.t_obs
    max_agents = ckpt.metadata.get("max_agents", cfg.teacher.max_agents)
    batch = tk.encode_dataset(dataset, t_obs, max_agents, cfg.sector, cfg.pooling)
    pred = tk.predict(model, batch)
    track = pred.best_mode_track(cfg.eval.mixture_mean)
    return dk.rmse_report(track, batch.future), pred, batch


def check_digest(cfg: RunConfig, ckpt: tk.Checkpoint, force: bool) -> None:
    expected = cfg.role_digest(ckpt.role, ckpt.metadata.get("kdm"))
    if ckpt.digest != expected and not force:
        raise tk.CheckpointError(f"checkpoint digest {ckpt.digest[:12]} does not match the config "
                                 f"({expected[:12]}); pass --force to evaluate anyway")


def cmd_eval(cfg: RunConfig, checkpoint: str, out: Path, data_dir: str | None = None,
             missing: float = 0.0, plot: bool = False, force: bool = False) -> dict[str, float]:
    ckpt = tk.Checkpoint.load(checkpoint)
    check_digest(cfg, ckpt, force)
    dataset = load_dataset(cfg, data_dir).split(cfg.eval.split)
    if len(dataset) == 0:
        raise dk.DataError(f"split '{cfg.eval.split}' has no scenes")
    report, pred, batch = evaluate(ckpt, dataset, cfg, missing)
    digest = run_digest(cfg, "eval", checkpoint=ckpt.digest, missing=missing, split=cfg.eval.split)
    out.mkdir(parents=True, exist_ok=True)
    rows = [[name, report[name]] for name in HORIZON_NAMES] + [["AVG", report["AVG"]]]
    name = f"eval_{ckpt.role}" + (f"_missing{missing:g}s" if missing else "")
    _write_csv(out / f"{name}.csv", _stamp(cfg, digest), ["horizon", "rmse"], rows)
    if plot:
        plots = out / "plots"
        plots.mkdir(exist_ok=True)
        track = pred.best_mode_track(cfg.eval.mixture_mean)
        for i in range(min(cfg.eval.plot_scenes, len(dataset))):
            scene = dataset.scenes[i]
            origin = scene.window.target.xy[-1]
            hist = scene.window.target.xy - origin
            svg = scene_svg(hist, batch.future[i], track[i], pred.probs.data[i], dk.MANEUVERS,
                            f"scene {scene.scene_id} ({ckpt.role})", _stamp(cfg, digest))
            (plots / f"scene_{scene.scene_id}_{ckpt.role}.svg").write_text(svg)
    return report


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------
SUITES = ("components", "missing", "kdm", "fasnn")


def _variant(args):
    """Train (or reuse) a teacher, train a student, evaluate; runs in a worker process."""
    cfg, name, teacher_bytes, data_dir = args
    dataset = load_dataset(cfg, data_dir)
    train, test = dataset.split("train"), dataset.split(cfg.eval.split)
    if teacher_bytes is None:
        teacher = tk.train_teacher(train, cfg.teacher, cfg.teacher_train, cfg.seed,
                                   digest=cfg.role_digest("teacher"), sector=cfg.sector, pooling=cfg.pooling)
    else:
        teacher = tk.Checkpoint.from_bytes(teacher_bytes)
    student = tk.train_student(train, teacher, cfg.kdm, cfg.student, cfg.student_train, cfg.seed,
                               digest=cfg.role_digest("student"), sector=cfg.sector, pooling=cfg.pooling)
    report, _, _ = evaluate(student, test, cfg)
    return name, report


def ablation_variants(cfg: RunConfig, suite: str) -> list[tuple[str, RunConfig, bool]]:
    """(name, config, needs its own teacher) for each variant of ``suite``."""
    if suite == "kdm":
        return [("kdm", cfg.with_overrides(kdm=True), False), ("no_kdm", cfg.with_overrides(kdm=False), False)]
    if suite == "fasnn":
        out = []
        for ast in (True, False):
            for ft in (True, False):
                st = replace(cfg.student, adaptive_threshold=ast, fourier=ft)
                out.append((f"ast={int(ast)},ft={int(ft)}", cfg.with_overrides(student=st), False))
        return out
    if suite == "components":
        t, s = cfg.teacher, cfg.student
        return [
            ("full", cfg, False),
            ("no_visual_pooling", cfg.with_overrides(pooling=False), True),
            ("no_spatial_encoder", cfg.with_overrides(teacher=replace(t, use_spatial=False)), True),
            ("no_fusion", cfg.with_overrides(teacher=replace(t, use_fusion=False)), True),
            ("no_fasnn", cfg.with_overrides(student=replace(s, adaptive_threshold=False, fourier=False)), False),
            ("single_mode", cfg.with_overrides(teacher=replace(t, multimodal=False),
                                               student=replace(s, multimodal=False)), True),
            ("no_kdm", cfg.with_overrides(kdm=False), False),
        ]
    raise UsageError(f"unknown ablation suite {suite!r}; choose from {', '.join(SUITES)}")


def cmd_ablate(cfg: RunConfig, suite: str, out: Path, data_dir: str | None = None,
               teacher_path: str | None = None, student_path: str | None = None) -> list[list]:
    if suite not in SUITES:
        raise UsageError(f"unknown ablation suite {suite!r}; choose from {', '.join(SUITES)}")
    out.mkdir(parents=True, exist_ok=True)
    header = ["variant"] + HORIZON_NAMES + ["AVG"]
    rows: list[list] = []
    if suite == "missing":
        dataset = load_dataset(cfg, data_dir)
        test = dataset.split(cfg.eval.split)
        if student_path:
            student = tk.Checkpoint.load(student_path)
        else:
            name, teacher_bytes = "student", _teacher_bytes(teacher_path)
            teacher = (tk.Checkpoint.from_bytes(teacher_bytes) if teacher_bytes else
                       tk.train_teacher(dataset.split("train"), cfg.teacher, cfg.teacher_train, cfg.seed,
                                        digest=cfg.role_digest("teacher"), sector=cfg.sector,
                                        pooling=cfg.pooling))
            student = tk.train_student(dataset.split("train"), teacher, cfg.kdm, cfg.student,
                                       cfg.student_train, cfg.seed, digest=cfg.role_digest("student"),
                                       sector=cfg.sector, pooling=cfg.pooling)
        for t_m in dk.MISSING_DURATIONS:
            report, _, _ = evaluate(student, test, cfg, t_m)
            rows.append([f"t_m={t_m}"] + [report[h] for h in HORIZON_NAMES] + [report["AVG"]])
    else:
        variants = ablation_variants(cfg, suite)
        shared = _teacher_bytes(teacher_path)
        if shared is None and any(not own for _, _, own in variants):
            dataset = load_dataset(cfg, data_dir)
            shared = tk.train_teacher(dataset.split("train"), cfg.teacher, cfg.teacher_train, cfg.seed,
                                      digest=cfg.role_digest("teacher"), sector=cfg.sector,
                                      pooling=cfg.pooling).to_bytes()
        jobs = [(vcfg, name, None if own else shared, data_dir) for name, vcfg, own in variants]
        workers = min(threads(), len(jobs))
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_variant, jobs))
        else:
            results = [_variant(job) for job in jobs]
        for name, report in results:
            rows.append([name] + [report[h] for h in HORIZON_NAMES] + [report["AVG"]])
    digest = run_digest(cfg, "ablate", suite=suite, teacher=teacher_path is not None,
                        student=student_path is not None)
    _write_csv(out / f"ablate_{suite}.csv", _stamp(cfg, digest), header, rows)
    return rows


def _teacher_bytes(path: str | None) -> bytes | None:
    return tk.Checkpoint.load(path).to_bytes() if path else None


def cmd_plot(cfg: RunConfig, metrics: str, out: Path) -> Path:
    """Loss and sigma curves from a metrics CSV."""
    m = tk.read_metrics(metrics)
    digest = run_digest(cfg, "plot", metrics=Path(metrics).name)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(metrics).stem
    sigmas = {f"sigma_{k}": m[f"sigma_{k}"] for k in "tmsd"}
    losses = {k: m[k] for k in ("loss_traj", "loss_man", "loss_dis_traj", "loss_dis_man") if np.any(m[k])}
    (out / f"{stem}_sigma.svg").write_text(curves_svg(sigmas, "KDM sigma per step", _stamp(cfg, digest)))
    path = out / f"{stem}_losses.svg"
    path.write_text(curves_svg(losses, "losses per step (log10 |value|)", _stamp(cfg, digest), log_scale=True))
    return path


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS lets the options appear before or after the verb without one clobbering the other
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output directory (default: runs)")
    p = argparse.ArgumentParser(prog="spikecast", description=__doc__, parents=[common])
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("gen", parents=[common], help="write a synthetic dataset and manifest")
    for role in ("teacher", "student"):
        sp = sub.add_parser(f"train-{role}", parents=[common], help=f"train the {role}")
        sp.add_argument("--data", help="directory with tracks.csv and manifest.json")
        if role == "student":
            sp.add_argument("--teacher", help="teacher checkpoint")
            sp.add_argument("--no-kdm", action="store_true", help="plain sum of losses instead of KDM")
    sp = sub.add_parser("eval", parents=[common], help="per-horizon RMSE of a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data")
    sp.add_argument("--missing", type=float, default=0.0, help="seconds of history to delete and impute")
    sp.add_argument("--plot", action="store_true", help="also write per-scene SVG overlays")
    sp.add_argument("--force", action="store_true", help="evaluate despite a digest mismatch")
    sp = sub.add_parser("ablate", parents=[common], help="run an ablation suite")
    sp.add_argument("--suite", required=True, help="components, missing, kdm or fasnn")
    sp.add_argument("--data")
    sp.add_argument("--teacher", help="reuse this teacher checkpoint where the suite allows")
    sp.add_argument("--student", help="student checkpoint for the missing suite")
    sp = sub.add_parser("plot", parents=[common], help="SVG loss and sigma curves from a metrics CSV")
    sp.add_argument("--metrics", required=True)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else 2
    for name, default in (("config", None), ("seed", None), ("out", "runs")):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        threads()
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        if args.seed is not None:
            if args.seed < 0:
                raise UsageError("--seed must be non-negative")
            cfg.seed = args.seed
        out = Path(args.out)
        if args.verb == "gen":
            m = cmd_gen(cfg, out)
            print(f"wrote {len(m['scenes'])} scenes to {out}")
        elif args.verb in ("train-teacher", "train-student"):
            role = args.verb.split("-")[1]
            kdm = False if getattr(args, "no_kdm", False) else None
            path = cmd_train(cfg, role, out, args.data, getattr(args, "teacher", None), kdm)
            print(f"wrote {path}")
        elif args.verb == "eval":
            report = cmd_eval(cfg, args.checkpoint, out, args.data, args.missing, args.plot, args.force)
            print(" ".join(f"{k}={v:.4f}" for k, v in report.items()))
        elif args.verb == "ablate":
            rows = cmd_ablate(cfg, args.suite, out, args.data, args.teacher, args.student)
            for row in rows:
                print(f"{row[0]}: AVG={row[-1]:.4f}")
        elif args.verb == "plot":
            print(f"wrote {cmd_plot(cfg, args.metrics, out)}")
    except (UsageError, ConfigError, dk.DataError, dk.SchemaError, tk.TrainError, tk.CheckpointError,
            OSError, ValueError) as exc:
        print(f"spikecast {args.verb}: error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, UsageError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
