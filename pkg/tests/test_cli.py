"""End-to-end command-line behavior: subcommands, exit codes, file outputs."""

import json
import textwrap

import numpy as np
import pytest

from rtlab.cli import main
from rtlab.synth import SequenceSpec, export_suite, generate
from rtlab.tracker import TrackerModel


@pytest.fixture(scope="module")
def tiny_suite(tmp_path_factory):
    root = tmp_path_factory.mktemp("suites") / "tiny"
    velocities = [(2, 1), (-2, 1), (1, -2)]
    suite = [generate(SequenceSpec(frame_size=48, length=8, target_size=(10, 8),
                                   velocity=velocities[i]),
                      seed=i, name=f"t{i:02d}") for i in range(3)]
    export_suite(suite, root)
    return root


@pytest.fixture(scope="module")
def tiny_checkpoint(tmp_path_factory, tiny_suite):
    """A briefly-trained desk model checkpoint plus its run directory."""
    out = tmp_path_factory.mktemp("run")
    cfg = out / "run.ini"
    cfg.write_text(textwrap.dedent(f"""\
        [run]
        variant = plain
        scale = desk
        seed = 1
        data = {tiny_suite}
        out = {out}

        [train]
        max_iterations = 6
        batch0 = 2
        plateau_window = 100
        """))
    rc = main(["--threads", "1", "train", "--config", str(cfg)])
    assert rc == 0
    return out


def test_synth_training_suite(tmp_path, capsys):
    spec = tmp_path / "suite.ini"
    spec.write_text("[suite]\nkind = training\ncount = 2\nlength = 6\n")
    out = tmp_path / "suite"
    rc = main(["synth", "--out", str(out), "--spec", str(spec), "--seed", "3"])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "wrote 2 sequences" in printed
    assert "suite hash: " in printed
    dirs = sorted(p.name for p in out.iterdir() if p.is_dir())
    assert len(dirs) == 2
    first = out / dirs[0]
    assert (first / "groundtruth_rect.txt").exists()
    assert (first / "img" / "0001.png").exists()
    assert len(list((first / "img").glob("*.png"))) == 6


def test_synth_is_deterministic(tmp_path, capsys):
    spec = tmp_path / "suite.ini"
    spec.write_text("[suite]\nkind = training\ncount = 2\nlength = 5\n")
    hashes = []
    for d in ("a", "b"):
        rc = main(["synth", "--out", str(tmp_path / d), "--spec", str(spec),
                   "--seed", "9"])
        assert rc == 0
        out = capsys.readouterr().out
        hashes.append([l for l in out.splitlines() if "suite hash" in l][0])
    assert hashes[0] == hashes[1]
    a = sorted((tmp_path / "a").rglob("*"))
    b = sorted((tmp_path / "b").rglob("*"))
    assert [p.name for p in a] == [p.name for p in b]
    for pa, pb in zip(a, b):
        if pa.is_file():
            assert pa.read_bytes() == pb.read_bytes()


def test_synth_bad_kind_exits_2(tmp_path, capsys):
    spec = tmp_path / "suite.ini"
    spec.write_text("[suite]\nkind = nonsense\n")
    rc = main(["synth", "--out", str(tmp_path / "x"), "--spec", str(spec)])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_synth_missing_spec_exits_2(tmp_path):
    rc = main(["synth", "--out", str(tmp_path / "x"),
               "--spec", str(tmp_path / "none.ini")])
    assert rc == 2


def test_train_writes_outputs(tiny_checkpoint):
    assert (tiny_checkpoint / "checkpoint.rtlb").exists()
    log = (tiny_checkpoint / "trainlog.csv").read_text().splitlines()
    assert log[0] == "iteration,loss,batch,unrolls,p_pred,lr"
    assert len(log) == 7  # header + 6 iterations
    sidecar = json.loads((tiny_checkpoint / "trainlog.events.json").read_text())
    assert sidecar["aborted"] is False


def test_train_missing_config_exits_2(tmp_path, capsys):
    rc = main(["train", "--config", str(tmp_path / "none.ini")])
    assert rc == 2
    assert "not found" in capsys.readouterr().err


def test_train_unknown_variant_exits_2(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\nvariant = wavelet\n")
    assert main(["train", "--config", str(cfg)]) == 2


def test_train_abort_exits_3(tmp_path, tiny_suite, capsys):
    # resuming from a checkpoint with non-finite weights must abort cleanly
    out = tmp_path / "out"
    out.mkdir()
    model = TrackerModel("plain", scale="desk", seed=1)
    model.head.w.data[:] = np.nan
    model.save(out / "checkpoint.rtlb")
    cfg = tmp_path / "run.ini"
    cfg.write_text(textwrap.dedent(f"""\
        [run]
        variant = plain
        scale = desk
        seed = 1
        data = {tiny_suite}
        out = {out}

        [train]
        max_iterations = 6
        batch0 = 2
        plateau_window = 100
        """))
    rc = main(["train", "--config", str(cfg), "--resume"])
    assert rc == 3
    assert "abort" in capsys.readouterr().err
    sidecar = json.loads((out / "trainlog.events.json").read_text())
    assert sidecar["aborted"] is True
    assert any("abort" in e["event"] for e in sidecar["events"])


def test_eval_oracle_scores_perfectly(tmp_path, tiny_suite, capsys):
    rep = tmp_path / "rep"
    rc = main(["eval", "--oracle", "--suite", str(tiny_suite),
               "--out", str(rep), "--seed", "0"])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "mean IoU: 1.0000" in printed
    assert "AUC all: 0.9901" in printed
    assert "lost targets: 0" in printed
    doc = json.loads((rep / "report.json").read_text())
    assert doc["mean_iou"] == 1.0
    assert (rep / "curve_all.csv").exists()


def test_eval_trained_model(tmp_path, tiny_suite, tiny_checkpoint, capsys):
    rep = tmp_path / "rep"
    rc = main(["eval", "--checkpoint", str(tiny_checkpoint / "checkpoint.rtlb"),
               "--suite", str(tiny_suite), "--out", str(rep), "--seed", "0"])
    assert rc == 0
    doc = json.loads((rep / "report.json").read_text())
    assert doc["tracker_id"] == "plain-desk"
    assert 0.0 <= doc["mean_iou"] <= 1.0
    assert len(doc["curves"]["all"]["thresholds"]) == 101


def test_eval_without_checkpoint_exits_2(tmp_path, tiny_suite, capsys):
    rc = main(["eval", "--suite", str(tiny_suite), "--out", str(tmp_path / "r")])
    assert rc == 2
    assert "checkpoint" in capsys.readouterr().err


def test_eval_missing_suite_exits_2(tmp_path):
    rc = main(["eval", "--oracle", "--suite", str(tmp_path / "nowhere"),
               "--out", str(tmp_path / "r")])
    assert rc == 2


def test_eval_faulting_model_exits_4(tmp_path, tiny_suite):
    model = TrackerModel("plain", scale="desk", seed=0)
    model.head.w.data[:] = np.nan
    ck = tmp_path / "bad.rtlb"
    model.save(ck)
    rep = tmp_path / "rep"
    rc = main(["eval", "--checkpoint", str(ck), "--suite", str(tiny_suite),
               "--out", str(rep)])
    assert rc == 4
    doc = json.loads((rep / "report.json").read_text())  # report still written
    assert doc["any_failed"] is True


def test_track_writes_box_lines(tmp_path, tiny_suite, tiny_checkpoint):
    seq = sorted(p for p in tiny_suite.iterdir() if p.is_dir())[0]
    out = tmp_path / "track.txt"
    rc = main(["track", "--checkpoint", str(tiny_checkpoint / "checkpoint.rtlb"),
               "--seq", str(seq), "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 7  # one per frame after the init frame
    for line in lines:
        parts = line.split(",")
        assert len(parts) == 4 and all(p.lstrip("-").isdigit() for p in parts)


def test_track_fault_leaves_partial_output(tmp_path, tiny_suite, capsys):
    model = TrackerModel("plain", scale="desk", seed=0)
    model.head.w.data[:] = np.nan
    ck = tmp_path / "bad.rtlb"
    model.save(ck)
    seq = sorted(p for p in tiny_suite.iterdir() if p.is_dir())[0]
    out = tmp_path / "track.txt"
    rc = main(["track", "--checkpoint", str(ck), "--seq", str(seq),
               "--out", str(out)])
    assert rc == 4
    assert out.exists()  # whatever was tracked before the fault is kept
    assert "fault" in capsys.readouterr().err


def test_track_single_frame_exits_2(tmp_path, tiny_suite):
    seq = sorted(p for p in tiny_suite.iterdir() if p.is_dir())[0]
    single = tmp_path / "single"
    (single / "img").mkdir(parents=True)
    (single / "img" / "0001.png").write_bytes(
        (seq / "img" / "0001.png").read_bytes())
    gt_first = (seq / "groundtruth_rect.txt").read_text().splitlines()[0]
    (single / "groundtruth_rect.txt").write_text(gt_first + "\n")
    rc = main(["track", "--checkpoint", "irrelevant.rtlb",
               "--seq", str(single), "--out", str(tmp_path / "t.txt")])
    assert rc == 2


def test_report_prints_summary(tmp_path, tiny_suite, capsys):
    rep = tmp_path / "rep"
    assert main(["eval", "--oracle", "--suite", str(tiny_suite),
                 "--out", str(rep)]) == 0
    capsys.readouterr()
    rc = main(["report", "--report", str(rep / "report.json")])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "tracker: oracle" in printed
    assert "mean IoU: 1.0000" in printed


def test_report_missing_file_exits_2(tmp_path):
    assert main(["report", "--report", str(tmp_path / "no.json")]) == 2


def test_data_root_env_resolves_relative_paths(tmp_path, tiny_suite,
                                               monkeypatch):
    monkeypatch.setenv("RTLAB_DATA_ROOT", str(tiny_suite.parent))
    rc = main(["eval", "--oracle", "--suite", tiny_suite.name,
               "--out", str(tmp_path / "rep")])
    assert rc == 0


def test_train_is_deterministic_via_cli(tmp_path, tiny_suite):
    logs = []
    for d in ("r1", "r2"):
        out = tmp_path / d
        cfg = tmp_path / f"{d}.ini"
        cfg.write_text(textwrap.dedent(f"""\
            [run]
            variant = plain
            scale = desk
            seed = 4
            data = {tiny_suite}
            out = {out}

            [train]
            max_iterations = 5
            batch0 = 2
            plateau_window = 100
            """))
        assert main(["--threads", "1", "train", "--config", str(cfg)]) == 0
        logs.append((out / "trainlog.csv").read_bytes())
    assert logs[0] == logs[1]
