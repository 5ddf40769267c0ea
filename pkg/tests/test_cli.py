import csv
import json

import numpy as np
import pytest

from spikecast import trainkit as tk
from spikecast.cli import main
from spikecast.config import ConfigError, RunConfig
from spikecast.plotting import curves_svg, scene_svg

TINY = {
    "seed": 3,
    "synthetic": {"scenes": 30},
    "teacher": {"hidden_dim": 8, "heads": 2, "decoder_hidden": 8, "maneuver_hidden": 4},
    "student": {"neurons": 6, "decoder_hidden": 8, "maneuver_hidden": 4},
    "teacher_train": {"epochs": 1, "batch_size": 16, "schedule": {"cycle_epochs": 1}},
    "student_train": {"epochs": 1, "batch_size": 16, "schedule": {"cycle_epochs": 1}},
    "eval": {"plot_scenes": 2},
}


def write_config(path, doc=TINY):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "cfg.json")
    assert main(["gen", "--config", cfg, "--out", str(root / "data")]) == 0
    assert main(["train-teacher", "--config", cfg, "--out", str(root / "t"), "--data", str(root / "data")]) == 0
    assert main(["--config", cfg, "train-student", "--out", str(root / "s"), "--data", str(root / "data"),
                 "--teacher", str(root / "t" / "teacher.ckpt")]) == 0
    return root, cfg


def test_gen_files_and_determinism(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    assert main(["gen", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["--config", cfg, "--out", str(tmp_path / "b"), "gen"]) == 0
    for name in ("tracks.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert len(manifest["scenes"]) == 30
    assert manifest["config_digest"] == RunConfig.from_dict(TINY).digest() and manifest["seed"] == 3
    assert main(["gen", "--config", cfg, "--seed", "4", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "tracks.csv").read_bytes() != (tmp_path / "a" / "tracks.csv").read_bytes()


def test_gen_zero_scenes(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", {**TINY, "synthetic": {"scenes": 0}})
    assert main(["gen", "--config", cfg, "--out", str(tmp_path / "z")]) == 0
    manifest = json.loads((tmp_path / "z" / "manifest.json").read_text())
    assert manifest["scenes"] == [] and manifest["version"] == 1
    assert (tmp_path / "z" / "tracks.csv").read_text().startswith("vehicle_id,frame")


def test_train_outputs_load(trained):
    root, _ = trained
    t = tk.Checkpoint.load(root / "t" / "teacher.ckpt")
    s = tk.Checkpoint.load(root / "s" / "student.ckpt")
    assert t.role == "teacher" and s.role == "student"
    t.build_model(), s.build_model()
    cfg = RunConfig.from_dict(TINY)
    assert t.digest == cfg.role_digest("teacher") and s.digest == cfg.role_digest("student", True)
    first = (root / "t" / "teacher_metrics.csv").read_text().splitlines()[0]
    assert first == f"# config_digest={cfg.role_digest('teacher')} seed=3"


def test_train_rerun_identical(trained, tmp_path):
    root, cfg = trained
    assert main(["train-teacher", "--config", cfg, "--out", str(tmp_path), "--data", str(root / "data")]) == 0
    for name in ("teacher_metrics.csv", "teacher.ckpt"):
        assert (tmp_path / name).read_bytes() == (root / "t" / name).read_bytes()


def test_no_kdm_logs_unit_sigmas(trained, tmp_path):
    root, cfg = trained
    assert main(["train-student", "--config", cfg, "--out", str(tmp_path), "--data", str(root / "data"),
                 "--teacher", str(root / "t" / "teacher.ckpt"), "--no-kdm"]) == 0
    m = tk.read_metrics(tmp_path / "student_metrics.csv")
    assert all(np.all(m[f"sigma_{k}"] == 1.0) for k in "tmsd")
    m_kdm = tk.read_metrics(root / "s" / "student_metrics.csv")
    assert not np.all(m_kdm["sigma_t"] == 1.0)


def test_student_without_teacher_is_usage_error(trained, capsys):
    _, cfg = trained
    assert main(["train-student", "--config", cfg]) == 2
    assert "--teacher" in capsys.readouterr().err


def test_student_with_mismatched_teacher(trained, tmp_path):
    root, _ = trained
    other = write_config(tmp_path / "o.json", {**TINY, "teacher": {**TINY["teacher"], "heads": 4}})
    assert main(["train-student", "--config", other, "--out", str(tmp_path), "--data", str(root / "data"),
                 "--teacher", str(root / "t" / "teacher.ckpt")]) == 1


def read_report(path):
    lines = path.read_text().splitlines()
    return lines[0], list(csv.reader(lines[1:]))


def test_eval_report_format(trained, tmp_path):
    root, cfg = trained
    assert main(["eval", "--config", cfg, "--out", str(tmp_path), "--data", str(root / "data"),
                 "--checkpoint", str(root / "s" / "student.ckpt")]) == 0
    stamp, rows = read_report(tmp_path / "eval_student.csv")
    assert rows[0] == ["horizon", "rmse"]
    assert [r[0] for r in rows[1:]] == ["1s", "2s", "3s", "4s", "5s", "AVG"]
    assert all(float(r[1]) >= 0 for r in rows[1:])
    assert RunConfig.from_dict(TINY).digest() in stamp and "seed=3" in stamp


def test_eval_missing_zero_equals_plain(trained, tmp_path):
    root, cfg = trained
    base = ["eval", "--config", cfg, "--data", str(root / "data"), "--checkpoint", str(root / "t" / "teacher.ckpt")]
    assert main(base + ["--out", str(tmp_path / "a")]) == 0
    assert main(base + ["--out", str(tmp_path / "b"), "--missing", "0.0"]) == 0
    assert (tmp_path / "a" / "eval_teacher.csv").read_bytes() == (tmp_path / "b" / "eval_teacher.csv").read_bytes()
    assert main(base + ["--out", str(tmp_path / "c"), "--missing", "0.8"]) == 0
    assert (tmp_path / "c" / "eval_teacher_missing0.8s.csv").exists()
    assert main(base + ["--out", str(tmp_path / "d"), "--missing", "0.3"]) == 1


def test_eval_digest_mismatch_needs_force(trained, tmp_path):
    root, _ = trained
    other = write_config(tmp_path / "o.json", {**TINY, "synthetic": {"scenes": 30, "braking_prob": 0.5}})
    args = ["eval", "--config", other, "--out", str(tmp_path), "--data", str(root / "data"),
            "--checkpoint", str(root / "s" / "student.ckpt")]
    assert main(args) == 1
    assert main(args + ["--force"]) == 0


def test_eval_plot_writes_svgs(trained, tmp_path):
    root, cfg = trained
    assert main(["eval", "--config", cfg, "--out", str(tmp_path), "--data", str(root / "data"), "--plot",
                 "--checkpoint", str(root / "s" / "student.ckpt")]) == 0
    svgs = sorted((tmp_path / "plots").glob("*.svg"))
    assert len(svgs) == 2
    text = svgs[0].read_text()
    assert text.startswith("<svg") and "config_digest=" in text and "keep/normal" in text


def test_ablate_kdm_and_missing(trained, tmp_path):
    root, cfg = trained
    teacher = str(root / "t" / "teacher.ckpt")
    assert main(["ablate", "--suite", "kdm", "--config", cfg, "--out", str(tmp_path), "--data", str(root / "data"),
                 "--teacher", teacher]) == 0
    _, rows = read_report(tmp_path / "ablate_kdm.csv")
    assert rows[0] == ["variant", "1s", "2s", "3s", "4s", "5s", "AVG"]
    assert [r[0] for r in rows[1:]] == ["kdm", "no_kdm"]
    assert main(["ablate", "--suite", "missing", "--config", cfg, "--out", str(tmp_path), "--data",
                 str(root / "data"), "--student", str(root / "s" / "student.ckpt")]) == 0
    _, rows = read_report(tmp_path / "ablate_missing.csv")
    assert [r[0] for r in rows[1:]] == [f"t_m={t}" for t in (0.4, 0.8, 1.2, 1.6, 2.0, 2.4)]


def test_ablate_fasnn_grid(trained, tmp_path):
    root, cfg = trained
    assert main(["ablate", "--suite", "fasnn", "--config", cfg, "--out", str(tmp_path), "--data", str(root / "data"),
                 "--teacher", str(root / "t" / "teacher.ckpt")]) == 0
    _, rows = read_report(tmp_path / "ablate_fasnn.csv")
    assert sorted(r[0] for r in rows[1:]) == ["ast=0,ft=0", "ast=0,ft=1", "ast=1,ft=0", "ast=1,ft=1"]


def test_ablate_components_grid(trained, tmp_path):
    root, cfg = trained
    assert main(["ablate", "--suite", "components", "--config", cfg, "--out", str(tmp_path), "--data",
                 str(root / "data"), "--teacher", str(root / "t" / "teacher.ckpt")]) == 0
    _, rows = read_report(tmp_path / "ablate_components.csv")
    assert [r[0] for r in rows[1:]] == ["full", "no_visual_pooling", "no_spatial_encoder", "no_fusion",
                                        "no_fasnn", "single_mode", "no_kdm"]
    assert all(np.isfinite(float(x)) for r in rows[1:] for x in r[1:])


def test_ablate_unknown_suite(trained):
    _, cfg = trained
    assert main(["ablate", "--suite", "bogus", "--config", cfg]) == 2


def test_plot_from_metrics(trained, tmp_path):
    root, cfg = trained
    assert main(["plot", "--config", cfg, "--out", str(tmp_path),
                 "--metrics", str(root / "s" / "student_metrics.csv")]) == 0
    for name in ("student_metrics_sigma.svg", "student_metrics_losses.svg"):
        text = (tmp_path / name).read_text()
        assert text.startswith("<svg") and "<polyline" in text and "seed=3" in text


def test_error_exit_codes(tmp_path, capsys):
    assert main([]) == 2
    assert main(["fly"]) == 2
    assert main(["eval"]) == 2                                         # --checkpoint is required
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--out", str(tmp_path)]) == 1
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["gen", "--config", str(tmp_path / "bad.json")]) == 1
    (tmp_path / "unk.json").write_text('{"teacher": {"hidden": 3}}')
    assert main(["gen", "--config", str(tmp_path / "unk.json")]) == 1
    assert "hidden" in capsys.readouterr().err
    assert main(["gen", "--seed", "-1", "--out", str(tmp_path)]) == 2


def test_threads_env_validated(monkeypatch, tmp_path):
    monkeypatch.setenv("SPIKECAST_THREADS", "zero")
    assert main(["gen", "--out", str(tmp_path)]) == 2


# -- config -------------------------------------------------------------------------------------
def test_config_digest_stable_under_key_order():
    a = RunConfig.from_dict(TINY)
    b = RunConfig.from_dict(dict(reversed(list(TINY.items()))))
    assert a.digest() == b.digest()
    assert a.digest() == RunConfig.from_dict({**TINY, "seed": 99}).digest()
    assert a.digest() != RunConfig.from_dict({**TINY, "synthetic": {"scenes": 31}}).digest()


def test_config_round_trip_and_validation():
    cfg = RunConfig.from_dict(TINY)
    assert RunConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"mystery": 1})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"student": {"t_f": 10}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"seed": -2})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"teacher_train": {"schedule": {"lr_min": 1.0}}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict([1, 2])


def test_role_digests_separate_teacher_and_student():
    cfg = RunConfig.from_dict(TINY)
    changed = RunConfig.from_dict({**TINY, "student": {**TINY["student"], "neurons": 7}})
    assert cfg.role_digest("teacher") == changed.role_digest("teacher")
    assert cfg.role_digest("student") != changed.role_digest("student")
    assert cfg.role_digest("student", True) != cfg.role_digest("student", False)
    with pytest.raises(ConfigError):
        cfg.role_digest("critic")


# -- plotting -----------------------------------------------------------------------------------
def test_scene_svg_contents():
    hist = np.stack([np.linspace(-30, 0, 16), np.zeros(16)], axis=1)
    fut = np.stack([np.linspace(4, 100, 25), np.linspace(0, 3.7, 25)], axis=1)
    svg = scene_svg(hist, fut, fut + 1.0, [0.1, 0.5, 0.1, 0.1, 0.1, 0.1], ["a", "b", "c", "d", "e", "f"],
                    "scene 1 <x>", "stamp")
    assert svg.count("<polyline") == 3 and "b: 0.500" in svg and "&lt;x&gt;" in svg
    assert 'font-weight="bold">b' in svg


def test_curves_svg_handles_empty_and_log():
    assert "<polyline" not in curves_svg({}, "t", "s")
    svg = curves_svg({"a": np.array([1.0, 10.0, 100.0]), "b": np.array([0.0, -1.0])}, "t", "s", log_scale=True)
    assert svg.count("<polyline") == 2
