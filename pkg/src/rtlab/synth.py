"""Deterministic synthetic tracking sequences with attribute events.

Targets move on integer-pixel trajectories over a value-noise background;
occlusion, out-of-view excursions, illumination ramps, low resolution, and
distractors are layered on per an explicit :class:`SequenceSpec`. Frames are
quantized to the 8-bit grid so PNG export/import is lossless, and all box
coordinates are integers so the OTB-style ground-truth file is exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .tracker import BBox

FRAME_CHANNELS = 3


class SpecError(ValueError):
    """A sequence spec violates one of its invariants."""


class SequenceIOError(OSError):
    """A sequence directory is missing files or internally inconsistent."""


@dataclass(frozen=True)
class OcclusionEvent:
    start: int
    stop: int            # half-open [start, stop)
    coverage: float      # fraction of the target area hidden, in [0, 1]


@dataclass(frozen=True)
class OutOfViewEvent:
    start: int
    stop: int


@dataclass(frozen=True)
class IlluminationRamp:
    start: int
    stop: int
    peak_gain: float     # gain ramps 1 -> peak -> 1 across the interval


@dataclass(frozen=True)
class SequenceSpec:
    frame_size: int = 96
    length: int = 40
    target_shape: str = "rect"            # "rect" | "ellipse"
    target_size: tuple[int, int] = (14, 12)   # (w, h), even integers
    texture_seed: int = 0
    start: tuple[int, int] | None = None  # center; default = frame center
    velocity: tuple[int, int] = (2, 1)    # integer px/frame
    direction_change_rate: float = 0.0    # per-frame probability
    occlusions: tuple[OcclusionEvent, ...] = ()
    out_of_view: tuple[OutOfViewEvent, ...] = ()
    illumination: tuple[IlluminationRamp, ...] = ()
    downscale: int = 1                    # render full-res, then down/up by this
    distractors: int = 0

    def __post_init__(self):
        if self.length < 2 or self.frame_size < 16:
            raise SpecError("spec: need length >= 2 and frame size >= 16")
        if self.target_shape not in ("rect", "ellipse"):
            raise SpecError(f"spec: unknown target shape {self.target_shape!r}")
        w, h = self.target_size
        if w <= 0 or h <= 0 or w % 2 or h % 2:
            raise SpecError(f"spec: target size must be positive even ints, got {w}x{h}")
        if w >= self.frame_size or h >= self.frame_size:
            raise SpecError("spec: target larger than frame")
        if self.downscale < 1 or self.frame_size % self.downscale:
            raise SpecError(f"spec: downscale must be >= 1 and divide {self.frame_size}")
        if self.distractors < 0 or not 0.0 <= self.direction_change_rate <= 1.0:
            raise SpecError("spec: bad distractor count or direction-change rate")
        for ev in self.occlusions + self.out_of_view + self.illumination:
            if not 0 <= ev.start < ev.stop <= self.length:
                raise SpecError(f"spec: event {ev} outside [0, {self.length})")
        for ev in self.occlusions:
            if not 0.0 <= ev.coverage <= 1.0:
                raise SpecError(f"spec: coverage {ev.coverage} outside [0, 1]")
        for ev in self.illumination:
            if ev.peak_gain <= 0:
                raise SpecError(f"spec: non-positive illumination gain {ev.peak_gain}")

    def max_speed(self) -> float:
        """Upper bound on per-frame center displacement, excursions included."""
        base = max(abs(self.velocity[0]), abs(self.velocity[1]), 1)
        worst = base
        for ev in self.out_of_view:
            half = max(1, (ev.stop - ev.start) // 2)
            reach = self.frame_size / 2 + max(self.target_size) / 2 + 2
            worst = max(worst, base + math.ceil(reach / half))
        return float(worst)


@dataclass
class Sequence:
    name: str
    frames: list[np.ndarray]
    boxes: list[BBox]             # ground truth, clipped to the frame
    visible: list[bool]
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        if not (len(self.frames) == len(self.boxes) == len(self.visible)):
            raise SpecError("sequence: frames/boxes/visibility lengths differ")


def value_noise(size: int, cells: int, rng: np.random.Generator,
                channels: int = FRAME_CHANNELS) -> np.ndarray:
    """Bilinear-interpolated random grid; smooth, deterministic texture."""
    grid = rng.random((cells + 1, cells + 1, channels))
    pos = np.arange(size) * cells / size
    i0 = np.floor(pos).astype(int)
    f = (pos - i0)
    i1 = np.minimum(i0 + 1, cells)
    fy, fx = f[:, None, None], f[None, :, None]
    g = lambda a, b: grid[a[:, None], b[None, :], :]
    return ((1 - fy) * (1 - fx) * g(i0, i0) + (1 - fy) * fx * g(i0, i1)
            + fy * (1 - fx) * g(i1, i0) + fy * fx * g(i1, i1))


def _reflect(p: int, lo: int, hi: int) -> int:
    """Fold an integer coordinate into [lo, hi] by mirror reflection."""
    span = hi - lo
    if span == 0:
        return lo
    q = (p - lo) % (2 * span)
    if q > span:
        q = 2 * span - q
    return lo + q


def _trajectory(spec: SequenceSpec, rng: np.random.Generator,
                steps: int) -> list[tuple[int, int]]:
    """Integer center per step: bounce at walls, seeded direction changes."""
    w, h = spec.target_size
    s = spec.frame_size
    lo_x, hi_x = w // 2, s - w // 2
    lo_y, hi_y = h // 2, s - h // 2
    cx, cy = spec.start if spec.start is not None else (s // 2, s // 2)
    if not (lo_x <= cx <= hi_x and lo_y <= cy <= hi_y):
        raise SpecError(f"spec: start {spec.start} puts the target outside the frame")
    vx, vy = spec.velocity
    speed = max(abs(vx), abs(vy), 1)
    centers = [(cx, cy)]
    for _ in range(steps - 1):
        if spec.direction_change_rate > 0 and rng.random() < spec.direction_change_rate:
            ring = [(dx, dy) for dx in range(-speed, speed + 1)
                    for dy in range(-speed, speed + 1)
                    if max(abs(dx), abs(dy)) == speed]
            vx, vy = ring[rng.integers(len(ring))]
        nx, ny = cx + vx, cy + vy
        if not lo_x <= nx <= hi_x:
            vx = -vx
            nx = _reflect(nx, lo_x, hi_x)
        if not lo_y <= ny <= hi_y:
            vy = -vy
            ny = _reflect(ny, lo_y, hi_y)
        cx, cy = nx, ny
        centers.append((cx, cy))
    return centers


def _centers_with_events(spec: SequenceSpec,
                         rng: np.random.Generator) -> list[tuple[int, int]]:
    """Full center track: base motion pauses during out-of-view excursions."""
    hold = [False] * spec.length
    for ev in spec.out_of_view:
        for t in range(ev.start, ev.stop):
            hold[t] = True
    base = _trajectory(spec, rng, max(1, spec.length - sum(hold)))
    centers: list[tuple[int, int]] = []
    j = 0
    for t in range(spec.length):
        if hold[t]:
            centers.append(base[j - 1] if j > 0 else base[0])
        else:
            centers.append(base[min(j, len(base) - 1)])
            j += 1

    s = spec.frame_size
    w = spec.target_size[0]
    for ev in spec.out_of_view:
        m = ev.stop - ev.start
        if m < 2:
            continue
        anchor = centers[ev.start]
        margin = w // 2 + 2
        exit_x = -margin if anchor[0] <= s // 2 else s + margin
        dist = exit_x - anchor[0]
        half = max(1, m // 2)
        for k in range(1, m):
            frac = k / half if k <= half else (m - k) / (m - half)
            centers[ev.start + k] = (anchor[0] + round(dist * min(frac, 1.0)),
                                     anchor[1])
    return centers


def _full_occlusion_frames(spec: SequenceSpec) -> set[int]:
    return {t for ev in spec.occlusions if ev.coverage >= 1.0
            for t in range(ev.start, ev.stop)}


def _paint_rect(frame: np.ndarray, cx: int, cy: int, w: int, h: int,
                texture: np.ndarray, shape: str = "rect") -> None:
    s = frame.shape[0]
    x1, x2 = cx - w // 2, cx + w // 2
    y1, y2 = cy - h // 2, cy + h // 2
    fx1, fx2 = max(x1, 0), min(x2, s)
    fy1, fy2 = max(y1, 0), min(y2, s)
    if fx1 >= fx2 or fy1 >= fy2:
        return
    tex = texture[fy1 - y1:fy2 - y1, fx1 - x1:fx2 - x1]
    if shape == "ellipse":
        ys = np.arange(fy1, fy2) + 0.5 - cy
        xs = np.arange(fx1, fx2) + 0.5 - cx
        mask = ((xs[None, :] / (w / 2)) ** 2 + (ys[:, None] / (h / 2)) ** 2) <= 1.0
        region = frame[fy1:fy2, fx1:fx2]
        frame[fy1:fy2, fx1:fx2] = np.where(mask[..., None], tex, region)
    else:
        frame[fy1:fy2, fx1:fx2] = tex


def _clip_box(cx: int, cy: int, w: int, h: int, s: int) -> BBox:
    x1, y1 = cx - w // 2, cy - h // 2
    x2, y2 = cx + w // 2, cy + h // 2
    x1, x2 = max(x1, 0), min(x2, s)
    y1, y2 = max(y1, 0), min(y2, s)
    if x2 <= x1:   # fully outside: keep a 1-px sliver at the nearest edge
        x1 = 0 if cx < s // 2 else s - 1
        x2 = x1 + 1
    if y2 <= y1:
        y1 = 0 if cy < s // 2 else s - 1
        y2 = y1 + 1
    return BBox.from_corners(x1, y1, x2, y2)


def generate(spec: SequenceSpec, seed: int, name: str = "",
             tags: tuple[str, ...] = ()) -> Sequence:
    rng = np.random.default_rng([seed, spec.texture_seed])
    s = spec.frame_size
    w, h = spec.target_size

    background = 0.2 + 0.6 * value_noise(s, 6, rng)
    target_tex = value_noise(max(w, h), 3, rng)[:h, :w]
    occluder_tex = 0.35 + 0.3 * value_noise(max(w, h) + 8, 2, rng)

    dists = []
    for _ in range(spec.distractors):
        dw = 2 * int(rng.integers(3, 8))
        dh = 2 * int(rng.integers(3, 8))
        dspec = SequenceSpec(
            frame_size=s, length=spec.length, target_size=(dw, dh),
            start=(int(rng.integers(dw // 2, s - dw // 2)),
                   int(rng.integers(dh // 2, s - dh // 2))),
            velocity=(int(rng.integers(-2, 3)), int(rng.integers(-2, 3))),
        )
        dists.append((_trajectory(dspec, rng, spec.length), (dw, dh),
                      value_noise(max(dw, dh), 2, rng)[:dh, :dw]))

    centers = _centers_with_events(spec, rng)
    occluded = _full_occlusion_frames(spec)

    frames: list[np.ndarray] = []
    boxes: list[BBox] = []
    visible: list[bool] = []
    for t, (cx, cy) in enumerate(centers):
        frame = background.copy()
        for traj, (dw, dh), tex in dists:
            _paint_rect(frame, traj[t][0], traj[t][1], dw, dh, tex)
        _paint_rect(frame, cx, cy, w, h, target_tex, spec.target_shape)
        for ev in spec.occlusions:
            if ev.start <= t < ev.stop and ev.coverage > 0:
                oh = min(h + 2, 2 * math.ceil(ev.coverage * h / 2) + (2 if ev.coverage >= 1 else 0))
                ow = w + 4
                _paint_rect(frame, cx, cy, ow + ow % 2, oh + oh % 2,
                            occluder_tex[:oh + oh % 2, :ow + ow % 2])
        gain = 1.0
        for ev in spec.illumination:
            if ev.start <= t < ev.stop:
                span = ev.stop - ev.start
                tri = 1.0 - abs(2 * (t - ev.start) / max(span - 1, 1) - 1.0)
                gain *= 1.0 + (ev.peak_gain - 1.0) * tri
        if gain != 1.0:
            frame = np.clip(frame * gain, 0.0, 1.0)
        if spec.downscale > 1:
            k = spec.downscale
            lr = frame.reshape(s // k, k, s // k, k, FRAME_CHANNELS).mean(axis=(1, 3))
            frame = np.repeat(np.repeat(lr, k, axis=0), k, axis=1)
        frame = np.round(np.clip(frame, 0.0, 1.0) * 255.0) / 255.0
        frames.append(frame)
        boxes.append(_clip_box(cx, cy, w, h, s))
        in_view = 0 <= cx < s and 0 <= cy < s
        visible.append(in_view and t not in occluded)
    return Sequence(name or "seq", frames, boxes, visible, tags)


# ---------------------------------------------------------------------------
# suites

SUITE_PLAIN = 14
SUITE_OCCLUSION = 10
SUITE_LOW_RES = 8
SUITE_OUT_OF_VIEW = 8


def _pick_velocity(rng: np.random.Generator, speed_lo: int, speed_hi: int) -> tuple[int, int]:
    while True:
        v = (int(rng.integers(-speed_hi, speed_hi + 1)),
             int(rng.integers(-speed_hi, speed_hi + 1)))
        if speed_lo <= max(abs(v[0]), abs(v[1])) <= speed_hi:
            return v


def _clip_event(start: int, stop: int, length: int) -> tuple[int, int]:
    """Clamp an event window into [0, length), keeping it at least one frame."""
    start = max(0, min(start, length - 1))
    stop = max(start + 1, min(stop, length))
    return start, stop


def _base_kwargs(rng: np.random.Generator, length: int) -> dict:
    return dict(
        length=length,
        target_shape=("rect", "ellipse")[int(rng.integers(2))],
        target_size=(2 * int(rng.integers(5, 9)), 2 * int(rng.integers(5, 9))),
        texture_seed=int(rng.integers(1 << 30)),
        velocity=_pick_velocity(rng, 1, 3),
        distractors=int(rng.integers(0, 3)),
    )


def make_benchmark_suite(seed: int, length: int = 40) -> list[Sequence]:
    """40 sequences: 14 plain, 10 occlusion, 8 low-resolution, 8 out-of-view."""
    rng = np.random.default_rng([seed, 0xBE7C])
    seqs: list[Sequence] = []
    for i in range(SUITE_PLAIN):
        kw = _base_kwargs(rng, length)
        tags: tuple[str, ...] = ()
        if i % 5 == 3:
            kw["illumination"] = (IlluminationRamp(length // 4, 3 * length // 4,
                                                   peak_gain=1.6),)
            tags = ("illumination",)
        if i % 5 == 4:
            kw["velocity"] = _pick_velocity(rng, 4, 5)
            tags = ("fast_motion",)
        if i % 3 == 2:
            kw["direction_change_rate"] = 0.15
        seqs.append(generate(SequenceSpec(**kw), seed=int(rng.integers(1 << 30)),
                             name=f"plain{i:02d}", tags=tags))
    for i in range(SUITE_OCCLUSION):
        kw = _base_kwargs(rng, length)
        mid = length // 2 + int(rng.integers(-4, 5))
        span = int(rng.integers(4, 9))
        coverage = 1.0 if i % 3 else 0.7
        start, stop = _clip_event(mid - span // 2, mid + (span + 1) // 2, length)
        kw["occlusions"] = (OcclusionEvent(start, stop, coverage),)
        seqs.append(generate(SequenceSpec(**kw), seed=int(rng.integers(1 << 30)),
                             name=f"occ{i:02d}", tags=("occlusion",)))
    for i in range(SUITE_LOW_RES):
        kw = _base_kwargs(rng, length)
        kw["downscale"] = (2, 3)[i % 2]
        seqs.append(generate(SequenceSpec(**kw), seed=int(rng.integers(1 << 30)),
                             name=f"lowres{i:02d}", tags=("low_resolution",)))
    for i in range(SUITE_OUT_OF_VIEW):
        kw = _base_kwargs(rng, length)
        mid = length // 2 + int(rng.integers(-3, 4))
        span = int(rng.integers(10, 15))
        start, stop = _clip_event(mid - span // 2, mid + (span + 1) // 2, length)
        kw["out_of_view"] = (OutOfViewEvent(start, stop),)
        seqs.append(generate(SequenceSpec(**kw), seed=int(rng.integers(1 << 30)),
                             name=f"oov{i:02d}", tags=("out_of_view",)))
    return seqs


def make_training_suite(seed: int, count: int = 96, length: int = 56) -> list[Sequence]:
    """Training mix drawn from the same families as the benchmark suite:
    half plain (including direction-change, fast-motion and illumination
    cases), a quarter occlusion (full and partial cover), and the rest split
    between low-resolution and out-of-view.  Instances never overlap the
    benchmark (separate stream), but the physics ranges match, so held-out
    evaluation measures generalisation to unseen sequences rather than to
    unseen motion regimes."""
    rng = np.random.default_rng([seed, 0x7A31])
    seqs: list[Sequence] = []
    n_occ = count // 4
    n_lr = count // 8
    n_oov = count // 8
    n_plain = count - n_occ - n_lr - n_oov
    for i in range(n_plain):
        kw = _base_kwargs(rng, length)
        tags: tuple[str, ...] = ()
        if i % 5 == 3:
            kw["illumination"] = (IlluminationRamp(length // 4, 3 * length // 4,
                                                   peak_gain=1.6),)
            tags = ("illumination",)
        if i % 5 == 4:
            kw["velocity"] = _pick_velocity(rng, 4, 5)
            tags = ("fast_motion",)
        if i % 3 == 2:
            kw["direction_change_rate"] = 0.15
        seqs.append(generate(SequenceSpec(**kw), seed=int(rng.integers(1 << 30)),
                             name=f"train_plain{i:02d}", tags=tags))
    for i in range(n_occ):
        kw = _base_kwargs(rng, length)
        mid = length // 2 + int(rng.integers(-5, 6))
        span = int(rng.integers(4, 9))
        start, stop = _clip_event(mid - span // 2, mid + (span + 1) // 2, length)
        kw["occlusions"] = (OcclusionEvent(start, stop, 1.0 if i % 3 else 0.7),)
        seqs.append(generate(SequenceSpec(**kw), seed=int(rng.integers(1 << 30)),
                             name=f"train_occ{i:02d}", tags=("occlusion",)))
    for i in range(n_lr):
        kw = _base_kwargs(rng, length)
        kw["downscale"] = (2, 3)[i % 2]
        seqs.append(generate(SequenceSpec(**kw), seed=int(rng.integers(1 << 30)),
                             name=f"train_lowres{i:02d}", tags=("low_resolution",)))
    for i in range(n_oov):
        kw = _base_kwargs(rng, length)
        mid = length // 2 + int(rng.integers(-3, 4))
        span = int(rng.integers(10, 15))
        start, stop = _clip_event(mid - span // 2, mid + (span + 1) // 2, length)
        kw["out_of_view"] = (OutOfViewEvent(start, stop),)
        seqs.append(generate(SequenceSpec(**kw), seed=int(rng.integers(1 << 30)),
                             name=f"train_oov{i:02d}", tags=("out_of_view",)))
    return seqs


# ---------------------------------------------------------------------------
# OTB-style directory layout: img/%04d.png + groundtruth_rect.txt + sidecar


def export_sequence(seq: Sequence, directory) -> None:
    directory = Path(directory)
    img_dir = directory / "img"
    img_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames, start=1):
        arr = np.round(frame * 255.0).astype(np.uint8)
        Image.fromarray(arr).save(img_dir / f"{i:04d}.png")
    with open(directory / "groundtruth_rect.txt", "w", encoding="ascii") as fh:
        for b in seq.boxes:
            x, y, w, h = b.tlwh()
            fh.write("%d,%d,%d,%d\n" % (round(x), round(y), round(w), round(h)))
    sidecar = {
        "name": seq.name,
        "tags": list(seq.tags),
        "visible": [bool(v) for v in seq.visible],
    }
    with open(directory / "attributes.json", "w", encoding="ascii") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
        fh.write("\n")


def import_sequence(directory) -> Sequence:
    directory = Path(directory)
    img_dir = directory / "img"
    gt_path = directory / "groundtruth_rect.txt"
    side_path = directory / "attributes.json"
    if not img_dir.is_dir():
        raise SequenceIOError(f"{directory}: missing img/ directory")
    if not gt_path.is_file():
        raise SequenceIOError(f"{directory}: missing groundtruth_rect.txt")
    paths = sorted(img_dir.glob("*.png"))
    if not paths:
        raise SequenceIOError(f"{directory}: no PNG frames in img/")
    frames = [np.asarray(Image.open(p), dtype=np.float64) / 255.0 for p in paths]
    boxes: list[BBox] = []
    with open(gt_path, encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            x, y, w, h = (int(p) for p in line.split(","))
            boxes.append(BBox.from_tlwh(x, y, w, h))
    if len(boxes) != len(frames):
        raise SequenceIOError(
            f"{directory}: {len(frames)} frames but {len(boxes)} ground-truth boxes"
        )
    if side_path.is_file():
        with open(side_path, encoding="ascii") as fh:
            side = json.load(fh)
        name = side.get("name", directory.name)
        tags = tuple(side.get("tags", []))
        visible = [bool(v) for v in side.get("visible", [True] * len(frames))]
        if len(visible) != len(frames):
            raise SequenceIOError(f"{directory}: visibility length mismatch")
    else:
        name, tags, visible = directory.name, (), [True] * len(frames)
    return Sequence(name, frames, boxes, visible, tags)


def export_suite(seqs: list[Sequence], root) -> None:
    root = Path(root)
    for seq in seqs:
        export_sequence(seq, root / seq.name)


def import_suite(root) -> list[Sequence]:
    root = Path(root)
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not dirs:
        raise SequenceIOError(f"{root}: no sequence directories")
    return [import_sequence(d) for d in dirs]
