"""Renderer contract: verbatim curves, stable layout, comparability guard."""

import json
from pathlib import Path

import pytest

from rtplots import (DEFAULT_SUBSETS, PlotSpec, ReportError, ReportRef,
                     build_figure, load_report_curves, render)
from rtplots.cli import main

THRESHOLDS = [i / 100 for i in range(101)]
ORACLE = [1.0] * 100 + [0.0]            # perfect IoU: flat until the edge
LINEAR = [1.0 - i / 100 for i in range(101)]
CONVEX = [(1.0 - i / 100) ** 2 for i in range(101)]


def write_report(root: Path, name: str, suite_hash: str,
                 subsets: dict[str, list[float]]) -> Path:
    out = root / name
    out.mkdir(parents=True)
    curves = {}
    for subset, fractions in subsets.items():
        fname = f"curve_{subset}.csv"
        lines = ["%.6f,%.6f" % (t, f) for t, f in zip(THRESHOLDS, fractions)]
        (out / fname).write_text("\n".join(lines) + "\n", encoding="ascii")
        curves[subset] = {"file": fname,
                          "auc": sum(fractions) / len(fractions)}
    doc = {"tracker_id": name, "seed": 1, "config_hash": "cfg",
           "suite_hash": suite_hash, "mean_iou": 0.5, "lost_targets": 0,
           "any_failed": False, "curves": curves, "sequences": []}
    (out / "report.json").write_text(json.dumps(doc, indent=1, sort_keys=True),
                                     encoding="ascii")
    return out / "report.json"


@pytest.fixture
def two_reports(tmp_path):
    subsets_a = {s: LINEAR for s in DEFAULT_SUBSETS}
    subsets_b = {s: CONVEX for s in DEFAULT_SUBSETS}
    a = write_report(tmp_path, "alpha", "hash-1", subsets_a)
    b = write_report(tmp_path, "beta", "hash-1", subsets_b)
    return a, b


def test_one_panel_per_subset_two_lines_each(two_reports, tmp_path):
    a, b = two_reports
    spec = PlotSpec(reports=[ReportRef(a, "alpha"), ReportRef(b, "beta")],
                    out_dir=tmp_path / "img")
    written = render(spec)
    assert [p.name for p in written] == [
        f"success_{s}.svg" for s in DEFAULT_SUBSETS]
    for p in written:
        assert p.is_file() and p.stat().st_size > 0


def test_figure_lines_are_verbatim_csv_values(two_reports):
    a, _ = two_reports
    _, curves = load_report_curves(a)
    raw = (a.parent / "curve_all.csv").read_text(encoding="ascii")
    csv_fractions = tuple(float(l.split(",")[1]) for l in raw.splitlines())
    fig = build_figure("all", [("alpha", curves["all"])])
    (line,) = fig.axes[0].lines
    assert tuple(line.get_ydata()) == csv_fractions
    assert tuple(line.get_xdata()) == tuple(THRESHOLDS)


def test_legend_auc_matches_csv_mean_to_3_decimals(two_reports):
    a, b = two_reports
    _, curves_a = load_report_curves(a)
    fig = build_figure("occlusion", [("alpha", curves_a["occlusion"])])
    (text,) = fig.axes[0].get_legend().get_texts()
    label = text.get_text()
    shown = float(label.split("AUC=")[1].rstrip("]"))
    raw = (a.parent / "curve_occlusion.csv").read_text(encoding="ascii")
    csv_mean = sum(float(l.split(",")[1]) for l in raw.splitlines()) / 101
    assert label.startswith("alpha [AUC=")
    assert abs(shown - csv_mean) < 5e-4


def test_oracle_report_is_flat_until_the_edge(tmp_path):
    path = write_report(tmp_path, "oracle", "h", {"all": ORACLE})
    _, curves = load_report_curves(path)
    fig = build_figure("all", [("oracle", curves["all"])])
    ydata = fig.axes[0].lines[0].get_ydata()
    assert all(v == 1.0 for v in ydata[:-1]) and ydata[-1] == 0.0


def test_suite_hash_mismatch_refused(tmp_path):
    a = write_report(tmp_path, "alpha", "hash-1", {"all": LINEAR})
    b = write_report(tmp_path, "beta", "hash-2", {"all": CONVEX})
    spec = PlotSpec(reports=[ReportRef(a, "alpha"), ReportRef(b, "beta")],
                    subsets=("all",), out_dir=tmp_path / "img")
    with pytest.raises(ReportError, match="suite hashes differ"):
        render(spec)
    assert not (tmp_path / "img").exists()


def test_empty_subset_skipped_with_warning(tmp_path):
    a = write_report(tmp_path, "alpha", "h", {"all": LINEAR})
    spec = PlotSpec(reports=[ReportRef(a, "alpha")],
                    subsets=("all", "occlusion"), out_dir=tmp_path / "img")
    with pytest.warns(RuntimeWarning, match="occlusion.*skipped"):
        written = render(spec)
    assert [p.name for p in written] == ["success_all.svg"]
    assert not (tmp_path / "img" / "success_occlusion.svg").exists()


def test_rendering_is_deterministic(two_reports, tmp_path):
    a, b = two_reports
    outputs = []
    for d in ("img1", "img2"):
        spec = PlotSpec(reports=[ReportRef(a, "alpha"), ReportRef(b, "beta")],
                        out_dir=tmp_path / d)
        outputs.append({p.name: p.read_bytes() for p in render(spec)})
    assert outputs[0] == outputs[1]


def test_spec_validation():
    with pytest.raises(ReportError, match="at least one report"):
        PlotSpec(reports=[])
    ref = ReportRef(Path("r.json"), "x")
    with pytest.raises(ReportError, match="unique"):
        PlotSpec(reports=[ref, ref])
    with pytest.raises(ReportError, match="format"):
        PlotSpec(reports=[ref], fmt="gif")


def test_cli_flags(two_reports, tmp_path, capsys):
    a, b = two_reports
    out = tmp_path / "cli-out"
    rc = main([f"--report={a}=alpha", f"--report={b}=beta",
               "--out", str(out), "--subsets", "all,occlusion"])
    assert rc == 0
    printed = capsys.readouterr().out.splitlines()
    assert len(printed) == 2
    assert (out / "success_all.svg").is_file()
    assert (out / "success_occlusion.svg").is_file()


def test_cli_spec_file(two_reports, tmp_path, capsys):
    a, b = two_reports
    out = tmp_path / "spec-out"
    spec = tmp_path / "plots.ini"
    spec.write_text(
        f"[plots]\nout = {out}\nformat = svg\nsubsets = all\n"
        f"[reports]\nalpha = {a}\nbeta = {b}\n", encoding="ascii")
    rc = main(["--spec", str(spec)])
    assert rc == 0
    assert (out / "success_all.svg").is_file()


def test_cli_mismatched_hashes_exit_2(tmp_path, capsys):
    a = write_report(tmp_path, "alpha", "hash-1", {"all": LINEAR})
    b = write_report(tmp_path, "beta", "hash-2", {"all": CONVEX})
    rc = main([f"--report={a}", f"--report={b}", "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "suite hashes differ" in capsys.readouterr().err


def test_cli_missing_report_exits_2(tmp_path, capsys):
    rc = main([f"--report={tmp_path}/nope/report.json",
               "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "not found" in capsys.readouterr().err


def test_cli_requires_some_input(capsys):
    assert main([]) == 2
    assert "--spec or at least one --report" in capsys.readouterr().err
