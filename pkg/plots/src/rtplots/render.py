"""Render success plots from evaluation report files.

The renderer consumes ``report.json`` plus the curve CSV files it
references and draws one panel per attribute subset with one line per
report. Curve points are taken verbatim from the CSVs and the legend AUC
from the report document — nothing is recomputed from raw per-frame IoUs.

Output is deterministic for a fixed renderer and matplotlib version: the
SVG hash salt is pinned and no timestamps are embedded.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

DEFAULT_SUBSETS = ("all", "occlusion", "low_resolution", "out_of_view")
FORMATS = ("svg", "png")
SVG_HASH_SALT = "rtplots"


class ReportError(ValueError):
    """Unreadable, malformed, or incomparable report inputs."""


@dataclass(frozen=True)
class ReportRef:
    path: Path
    label: str


@dataclass
class PlotSpec:
    reports: list[ReportRef]
    subsets: tuple[str, ...] = DEFAULT_SUBSETS
    fmt: str = "svg"
    out_dir: Path = field(default_factory=lambda: Path("plots-out"))

    def __post_init__(self):
        if not self.reports:
            raise ReportError("plot spec needs at least one report")
        if self.fmt not in FORMATS:
            raise ReportError(f"unknown output format {self.fmt!r}; "
                              f"choose one of {FORMATS}")
        labels = [r.label for r in self.reports]
        if len(set(labels)) != len(labels):
            raise ReportError(f"report labels must be unique, got {labels}")


@dataclass(frozen=True)
class Curve:
    thresholds: tuple[float, ...]
    fractions: tuple[float, ...]
    auc: float


def load_report_curves(path) -> tuple[str, dict[str, Curve]]:
    """(suite hash, {subset: curve}) for one exported report.

    Curve points come from the referenced CSV files; the AUC comes from
    the report document. Nothing is derived from the per-frame IoUs.
    """
    path = Path(path)
    if not path.is_file():
        raise ReportError(f"report not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="ascii"))
    except (OSError, ValueError) as exc:
        raise ReportError(f"cannot parse report {path}: {exc}") from exc
    for key in ("suite_hash", "curves"):
        if key not in doc:
            raise ReportError(f"report {path} lacks the {key!r} field")
    curves: dict[str, Curve] = {}
    for name, info in doc["curves"].items():
        csv_path = path.parent / info["file"]
        if not csv_path.is_file():
            raise ReportError(f"report {path} references missing curve file "
                              f"{csv_path}")
        thresholds: list[float] = []
        fractions: list[float] = []
        for line in csv_path.read_text(encoding="ascii").splitlines():
            t, f = line.split(",")
            thresholds.append(float(t))
            fractions.append(float(f))
        curves[name] = Curve(tuple(thresholds), tuple(fractions),
                             float(info["auc"]))
    return str(doc["suite_hash"]), curves


def build_figure(subset: str, entries: list[tuple[str, Curve]]):
    """One success-plot panel: a line per (label, curve), label-sorted."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    for label, curve in sorted(entries, key=lambda e: e[0]):
        ax.plot(curve.thresholds, curve.fractions,
                label=f"{label} [AUC={curve.auc:.3f}]", linewidth=1.6)
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel("IoU threshold")
    ax.set_ylabel("success fraction")
    ax.set_title(f"success plot — {subset}")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    return fig


def render(spec: PlotSpec) -> list[Path]:
    """Write one image per subset; returns the paths written.

    Refuses reports whose suite hashes differ (their curves would not be
    comparable). Subsets absent from any report are skipped with a warning.
    """
    loaded: list[tuple[str, str, dict[str, Curve]]] = []
    for ref in spec.reports:
        suite, curves = load_report_curves(ref.path)
        loaded.append((ref.label, suite, curves))

    hashes = {suite for _, suite, _ in loaded}
    if len(hashes) > 1:
        detail = ", ".join(f"{label}={suite[:12]}…" for label, suite, _ in loaded)
        raise ReportError(f"suite hashes differ, reports are not comparable: "
                          f"{detail}")

    spec.out_dir.mkdir(parents=True, exist_ok=True)
    with plt.rc_context({"svg.hashsalt": SVG_HASH_SALT}):
        written: list[Path] = []
        for subset in spec.subsets:
            missing = [label for label, _, curves in loaded
                       if subset not in curves]
            if missing:
                warnings.warn(f"subset {subset!r} is empty for "
                              f"{', '.join(missing)}; panel skipped",
                              RuntimeWarning, stacklevel=2)
                continue
            entries = [(label, curves[subset]) for label, _, curves in loaded]
            fig = build_figure(subset, entries)
            out = spec.out_dir / f"success_{subset}.{spec.fmt}"
            fig.savefig(out, format=spec.fmt, metadata=_metadata(spec.fmt))
            plt.close(fig)
            written.append(out)
    return written


def _metadata(fmt: str) -> dict:
    # strip volatile fields so identical specs yield identical bytes
    if fmt == "svg":
        return {"Date": None}
    return {"Software": "rtplots"}
