import json

import numpy as np
import pytest

from splatlift import io
from splatlift.cli import main

SMALL = ["--objects", "3", "--classes", "2", "--views", "4", "--eval-views", "2", "--size", "32", "32",
         "--primitives", "10", "--embedding-dim", "4", "--semantic-dim", "3"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", *SMALL, "--seed", "1", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained_dir(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    code = main(["train", "--manifest", str(synth_dir / "manifest.txt"), "--iterations", "40", "--lr", "0.05",
                 "--embedding-dim", "4", "--semantic-dim", "3", "--max-triplets", "200", "--out", str(out)])
    assert code == 0
    return out


def read_all(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_synth_lists_requested_views(tmp_path, capsys):
    assert main(["synth", "--objects", "8", "--views", "20", "--eval-views", "1", "--size", "32", "32",
                 "--seed", "7", "--out", str(tmp_path)]) == 0
    man = io.read_manifest(tmp_path / "manifest.txt")
    assert len(man.split("train")) == 20
    assert man.meta["seed"] == "7"
    assert "objects=8" in capsys.readouterr().out


def test_synth_rerun_is_byte_identical(tmp_path, synth_dir):
    assert main(["synth", *SMALL, "--seed", "1", "--out", str(tmp_path)]) == 0
    assert read_all(tmp_path) == read_all(synth_dir)


def test_synth_inputs_are_permuted_unless_consistent(tmp_path, synth_dir):
    man = io.read_manifest(synth_dir / "manifest.txt")
    differs = [not np.array_equal(io.read_pgm(man.path(v.instance_gt)).labels,
                                  io.read_pgm(man.path(v.instance_input)).labels) for v in man.views]
    assert any(differs)
    assert main(["synth", *SMALL, "--seed", "1", "--consistent", "--out", str(tmp_path)]) == 0
    man = io.read_manifest(tmp_path / "manifest.txt")
    for v in man.views:
        np.testing.assert_array_equal(io.read_pgm(man.path(v.instance_gt)).labels,
                                      io.read_pgm(man.path(v.instance_input)).labels)


def test_capacity_error_exits_one(tmp_path, capsys):
    assert main(["synth", "--objects", "5000", "--embedding-dim", "12", "--out", str(tmp_path)]) == 1
    assert "capacity" in capsys.readouterr().err


def test_train_writes_one_loss_row_per_iteration(trained_dir):
    meta, header, rows = io.read_csv(trained_dir / "losses.csv")
    assert header == ["iteration", "cluster", "triplet", "reg3d", "total"]
    assert len(rows) == 40 and "seed" in meta and "config" in meta
    assert (trained_dir / "losses.svg").read_text().lstrip().startswith("<?xml")
    scene = io.read_scene(trained_dir / "trained_scene.txt")
    assert scene.embedding_dim == 4


def test_train_mask_fraction_is_logged(synth_dir, tmp_path, caplog):
    caplog.set_level("INFO", logger="splatlift")
    assert main(["-v", "train", "--manifest", str(synth_dir / "manifest.txt"), "--iterations", "2",
                 "--mask-fraction", "0.25", "--embedding-dim", "4", "--semantic-dim", "3", "--no-plot",
                 "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "train_summary.json").read_text())
    assert len(summary["views_with_masks"]) == 1 and summary["views_total"] == 4
    assert "used 1 of 4 training views" in caplog.text


def test_train_mask_scale_half(synth_dir, tmp_path):
    assert main(["train", "--manifest", str(synth_dir / "manifest.txt"), "--iterations", "2", "--mask-scale",
                 "0.5", "--embedding-dim", "4", "--semantic-dim", "3", "--no-plot", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "train_summary.json").read_text())["config"]["mask_scale"] == 0.5


def test_decode_writes_label_maps(synth_dir, trained_dir, tmp_path):
    assert main(["decode", "--manifest", str(synth_dir / "manifest.txt"), "--scene",
                 str(trained_dir / "trained_scene.txt"), "--save-embeddings", "--out", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "decode_meta.json").read_text())
    assert len(meta["files"]) == 4
    labels = io.read_pgm(tmp_path / meta["files"][0]).labels
    assert labels.shape == (32, 32) and labels.max() < 16
    assert (tmp_path / "view_004_instance.cov.emb").is_file()


def test_eval_with_baseline_adds_row_and_is_deterministic(synth_dir, trained_dir, tmp_path):
    args = ["eval", "--manifest", str(synth_dir / "manifest.txt"), "--scene", str(trained_dir / "trained_scene.txt"),
            "--compare-baseline", "--min-pts", "4", "--eps", "0.1", "--repeats", "1"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    report = json.loads((tmp_path / "a" / "metrics.json").read_text())
    assert {"single_stage", "two_stage", "seed"} <= set(report)
    _, _, rows = io.read_csv(tmp_path / "a" / "methods.csv")
    assert [r[0] for r in rows] == ["single_stage", "two_stage"]
    timings = json.loads((tmp_path / "a" / "timings.json").read_text())
    assert timings["baseline_seconds"] > 0 and "speedup" in timings
    for name in ("metrics.json", "methods.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_compare_writes_scaling_and_plot(synth_dir, trained_dir, tmp_path):
    assert main(["compare", "--manifest", str(synth_dir / "manifest.txt"), "--scene",
                 str(trained_dir / "trained_scene.txt"), "--sizes", "16", "32", "--repeats", "1",
                 "--min-pts", "4", "--eps", "0.1", "--out", str(tmp_path)]) == 0
    scaling = json.loads((tmp_path / "compare_scaling.json").read_text())
    assert scaling["sizes"] == [256, 1024]
    assert (tmp_path / "compare.svg").is_file()
    _, header, rows = io.read_csv(tmp_path / "compare_timings.csv")
    assert header[0] == "size" and len(rows) == 2


def test_toy_single_group_reports_variance_shrinkage(tmp_path):
    assert main(["toy", "--groups", "1", "--points", "30", "--steps", "300", "--seed", "3",
                 "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "toy_report.json").read_text())
    assert rep["within_group_variance_final"] < rep["within_group_variance_initial"]
    assert rep["min_pairwise_distance"] is None
    assert (tmp_path / "toy.svg").is_file()


def test_toy_same_seed_same_csv(tmp_path):
    for name in ("a", "b"):
        assert main(["toy", "--points", "12", "--steps", "40", "--seed", "2", "--no-plot",
                     "--out", str(tmp_path / name)]) == 0
    for f in ("toy_trajectory.csv", "toy_means.csv", "toy_report.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    text = (tmp_path / "a" / "toy_trajectory.csv").read_text().splitlines()
    assert text[0].startswith("# seed = 2")
    assert len([ln for ln in text if not ln.startswith("#")]) == 42


def test_config_file_values_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# small run\nnum_objects = 2\nnum_classes = 1\nnum_views = 3\nnum_eval_views = 1\n"
                   f"image_size = 24 24\nprimitives_per_object = 6\nout = {tmp_path / 'from_file'}\n")
    assert main(["synth", "--config", str(cfg), "--views", "2"]) == 0
    man = io.read_manifest(tmp_path / "from_file" / "manifest.txt")
    assert len(man.split("train")) == 2 and man.meta["num_objects"] == "2"
    assert man.views[0].camera.width == 24


def test_unknown_config_key_exits_one(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = red\n")
    assert main(["toy", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "unknown keys" in capsys.readouterr().err


def test_missing_manifest_exits_one(tmp_path):
    assert main(["train", "--manifest", str(tmp_path / "nope.txt"), "--out", str(tmp_path)]) == 1


def test_invalid_train_config_exits_one(synth_dir, tmp_path):
    assert main(["train", "--manifest", str(synth_dir / "manifest.txt"), "--lr", "-1",
                 "--out", str(tmp_path)]) == 1


def test_divergence_exits_two_and_names_term(synth_dir, tmp_path, capsys):
    # an enormous step sends embeddings far enough apart that the squared 3-D term overflows
    with np.errstate(over="ignore", invalid="ignore"):
        code = main(["train", "--manifest", str(synth_dir / "manifest.txt"), "--iterations", "4", "--late-start",
                     "1", "--lr", "1e300", "--embedding-dim", "4", "--semantic-dim", "3", "--no-plot",
                     "--out", str(tmp_path)])
    assert code == 2
    assert "reg3d" in capsys.readouterr().err
