"""Metrics and the one-pass evaluation (OPE) harness.

`run_ope` initializes a tracker once per sequence from the first ground-truth
box and never reinitializes; a separate reinitialization pass produces the
lost-target count (a loss = IoU hitting 0 on a visible frame while the
tracker was previously on target; the tracker is then restarted from ground
truth at the next visible frame, so several losses per sequence can be
counted). Success curves use strict IoU > threshold over a 101-point grid.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tracker import BBox, TrackingFault
from .synth import Sequence

NUM_THRESHOLDS = 101


class MetricError(ValueError):
    """Invalid metric input (empty list, IoU outside [0, 1], ...)."""


def iou(a: BBox, b: BBox) -> float:
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union


def default_thresholds() -> np.ndarray:
    return np.arange(NUM_THRESHOLDS) / (NUM_THRESHOLDS - 1)


@dataclass(frozen=True)
class SuccessCurve:
    thresholds: np.ndarray
    fractions: np.ndarray

    @property
    def auc(self) -> float:
        return float(self.fractions.mean())


def success_curve(ious, thresholds: np.ndarray | None = None) -> SuccessCurve:
    arr = np.asarray(list(ious), dtype=float)
    if arr.size == 0:
        raise MetricError("success_curve: empty IoU list")
    if np.any(arr < 0) or np.any(arr > 1):
        raise MetricError("success_curve: IoU values outside [0, 1]")
    thr = default_thresholds() if thresholds is None else np.asarray(thresholds, float)
    fractions = (arr[None, :] > thr[:, None]).mean(axis=1)
    return SuccessCurve(thr, fractions)


def lost_targets(ious, visible) -> int:
    """Count on-target -> IoU 0 transitions on visible frames.

    The input stream must come from a reinitialization pass: after each loss
    the producing harness restarts from ground truth, which re-arms counting.
    Invisible frames neither trigger nor re-arm.
    """
    ious = list(ious)
    visible = list(visible)
    if len(ious) != len(visible):
        raise MetricError("lost_targets: ious and visibility lengths differ")
    losses = 0
    on_target = True
    for value, vis in zip(ious, visible):
        if not vis:
            continue
        if value == 0.0 and on_target:
            losses += 1
            on_target = False
        elif value > 0.0:
            on_target = True
    return losses


@dataclass
class SequenceResult:
    name: str
    tags: tuple[str, ...]
    ious: list[float]          # frames 1..N-1, pure OPE (no reinit)
    visible: list[bool]        # visibility of frames 1..N-1
    failed: bool               # a tracking fault truncated this sequence
    losses: int                # from the separate reinitialization pass


@dataclass
class EvalReport:
    tracker_id: str
    seed: int
    config_hash: str
    suite_hash: str
    sequences: list[SequenceResult]
    curves: dict[str, SuccessCurve]

    @property
    def all_ious(self) -> list[float]:
        return [v for s in self.sequences for v in s.ious]

    @property
    def mean_iou(self) -> float:
        return float(np.mean(self.all_ious))

    @property
    def lost(self) -> int:
        return sum(s.losses for s in self.sequences)

    @property
    def any_failed(self) -> bool:
        return any(s.failed for s in self.sequences)


def suite_hash(suite: list[Sequence]) -> str:
    """Content hash binding a report to the exact benchmark data."""
    digest = hashlib.sha256()
    for seq in sorted(suite, key=lambda s: s.name):
        digest.update(seq.name.encode())
        digest.update(",".join(seq.tags).encode())
        digest.update(np.array(seq.visible, dtype=np.uint8).tobytes())
        for b in seq.boxes:
            digest.update(np.array(b.tlwh(), dtype=np.float64).tobytes())
        digest.update(np.array(seq.frames[0].shape, dtype=np.int64).tobytes())
        digest.update(str(len(seq.frames)).encode())
        digest.update(seq.frames[0].tobytes())
    return digest.hexdigest()


def _ope_pass(make_tracker, seq: Sequence) -> tuple[list[float], bool]:
    tracker = make_tracker(seq)
    tracker.init(seq.frames[0], seq.boxes[0])
    ious: list[float] = []
    failed = False
    for i in range(1, len(seq.frames)):
        if failed:
            ious.append(0.0)
            continue
        try:
            box = tracker.step(seq.frames[i])
        except TrackingFault:
            failed = True
            ious.append(0.0)
            continue
        ious.append(iou(box, seq.boxes[i]))
    return ious, failed


def _reinit_pass(make_tracker, seq: Sequence) -> int:
    tracker = make_tracker(seq)
    tracker.init(seq.frames[0], seq.boxes[0])
    ious: list[float] = []
    visible: list[bool] = []
    n = len(seq.frames)
    i = 1
    on_target = True
    while i < n:
        try:
            box = tracker.step(seq.frames[i])
            value = iou(box, seq.boxes[i])
        except TrackingFault:
            value = 0.0
        ious.append(value)
        visible.append(seq.visible[i])
        if seq.visible[i] and value == 0.0 and on_target:
            on_target = False
            j = i + 1
            while j < n and not seq.visible[j]:
                ious.append(0.0)
                visible.append(False)
                j += 1
            if j >= n:
                break
            tracker.init(seq.frames[j], seq.boxes[j])
            ious.append(1.0)
            visible.append(True)
            on_target = True
            i = j + 1
            continue
        if seq.visible[i] and value > 0.0:
            on_target = True
        i += 1
    return lost_targets(ious, visible)


def run_ope(make_tracker, suite: list[Sequence], *, tracker_id: str = "",
            seed: int = 0, config_hash: str = "") -> EvalReport:
    """One-pass evaluation: a single ground-truth init per sequence."""
    if not suite:
        raise MetricError("run_ope: empty suite")
    results: list[SequenceResult] = []
    for seq in suite:
        ious, failed = _ope_pass(make_tracker, seq)
        losses = _reinit_pass(make_tracker, seq)
        results.append(SequenceResult(seq.name, tuple(seq.tags), ious,
                                      list(seq.visible[1:]), failed, losses))
    curves = attribute_report(results)
    return EvalReport(tracker_id, seed, config_hash, suite_hash(suite),
                      results, curves)


def attribute_report(results: list[SequenceResult],
                     subsets: tuple[str, ...] | None = None) -> dict[str, SuccessCurve]:
    """One success curve per attribute tag plus the \"all\" curve."""
    tags = subsets if subsets is not None else tuple(
        sorted({t for r in results for t in r.tags}))
    curves = {"all": success_curve([v for r in results for v in r.ious])}
    for tag in tags:
        vals = [v for r in results if tag in r.tags for v in r.ious]
        if not vals:
            warnings.warn(f"attribute subset {tag!r} is empty; curve omitted",
                          RuntimeWarning)
            continue
        curves[tag] = success_curve(vals)
    return curves


# ---------------------------------------------------------------------------
# reference trackers for harness calibration


class GroundTruthOracle:
    """Replays the ground truth; upper bound for any harness."""

    def __init__(self, seq: Sequence):
        self.seq = seq
        self.index = 0
        self.init_count = 0

    def init(self, frame, box) -> None:
        self.init_count += 1
        for i, f in enumerate(self.seq.frames):
            if f is frame:
                self.index = i
                return
        self.index = 0

    def step(self, frame) -> BBox:
        self.index += 1
        return self.seq.boxes[self.index]


class ConstantBoxTracker:
    """Always reports the init box; decays with target motion."""

    def __init__(self, seq: Sequence | None = None):
        self.box: BBox | None = None

    def init(self, frame, box) -> None:
        self.box = box

    def step(self, frame) -> BBox:
        return self.box


# ---------------------------------------------------------------------------
# report files: report.json plus one CSV per curve


def export_report(report: EvalReport, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curve_files: dict[str, str] = {}
    for name in sorted(report.curves):
        curve = report.curves[name]
        fname = f"curve_{name}.csv"
        with open(out_dir / fname, "w", encoding="ascii") as fh:
            for t, f in zip(curve.thresholds, curve.fractions):
                fh.write("%.6f,%.6f\n" % (t, f))
        curve_files[name] = fname
    doc = {
        "tracker_id": report.tracker_id,
        "seed": report.seed,
        "config_hash": report.config_hash,
        "suite_hash": report.suite_hash,
        "mean_iou": report.mean_iou,
        "lost_targets": report.lost,
        "any_failed": report.any_failed,
        "curves": {
            name: {
                "file": curve_files[name],
                "auc": report.curves[name].auc,
                "thresholds": [float(t) for t in report.curves[name].thresholds],
                "fractions": [float(f) for f in report.curves[name].fractions],
            }
            for name in sorted(report.curves)
        },
        "sequences": [
            {
                "name": r.name,
                "tags": list(r.tags),
                "failed": r.failed,
                "losses": r.losses,
                "ious": [float(v) for v in r.ious],
                "visible": [bool(v) for v in r.visible],
            }
            for r in report.sequences
        ],
    }
    path = out_dir / "report.json"
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def load_report(path) -> dict:
    with open(path, encoding="ascii") as fh:
        return json.load(fh)
