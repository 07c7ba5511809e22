"""Online tracking loop: context crops, box codec, and the step engine.

Boxes are center-based (cx, cy, w, h) in frame pixels. Crops cover a region
of twice the box extents centered on the box; the network regresses the
box corners in crop-normalized units, which :func:`decode_box` maps back to
frame pixels through the recorded :class:`CropGeometry`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .extractor import Extractor, extractor_config_for_variant
from .recurrent import (build_recurrent, recurrent_config_for_variant,
                        recurrent_param_count, ConfigError)
from .tensor import Tensor, bias_add, matmul
from .checkpoint import save_checkpoint, load_checkpoint, CheckpointError

CONTEXT_FACTOR = 2          # crop extent = CONTEXT_FACTOR * box extent
MIN_BOX_EXTENT = 1.0        # decoded boxes never get thinner than 1 px
DEFAULT_RAW = np.array([0.25, 0.25, 0.75, 0.75])  # context-box corners


class InvalidBoxError(ValueError):
    """Box with non-positive or non-finite extent."""


class TrackingFault(RuntimeError):
    """The network emitted non-finite output at ``frame_index``."""

    def __init__(self, frame_index: int, message: str):
        super().__init__(f"frame {frame_index}: {message}")
        self.frame_index = frame_index


@dataclass(frozen=True)
class BBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidBoxError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise InvalidBoxError(f"non-positive extent in box {vals}")

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)

    @staticmethod
    def from_corners(x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return BBox((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    def tlwh(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.w, self.h)

    @staticmethod
    def from_tlwh(x: float, y: float, w: float, h: float) -> "BBox":
        return BBox(x + w / 2, y + h / 2, w, h)


@dataclass(frozen=True)
class CropGeometry:
    """Affine map between a frame region and the unit crop square."""

    x0: float
    y0: float
    w: float
    h: float
    out_res: int

    def to_crop(self, x: float, y: float) -> tuple[float, float]:
        return ((x - self.x0) / self.w, (y - self.y0) / self.h)

    def to_frame(self, u: float, v: float) -> tuple[float, float]:
        return (self.x0 + u * self.w, self.y0 + v * self.h)


def crop_with_context(frame: np.ndarray, box: BBox,
                      out_res: int) -> tuple[np.ndarray, CropGeometry]:
    """Bilinear crop of the 2x context region; outside pixels = frame mean."""
    if frame.ndim != 3 or frame.size == 0:
        raise ValueError(f"crop: need a non-empty [H, W, C] frame, got {frame.shape}")
    rw = CONTEXT_FACTOR * box.w
    rh = CONTEXT_FACTOR * box.h
    x0 = box.cx - rw / 2
    y0 = box.cy - rh / 2
    geom = CropGeometry(x0, y0, rw, rh, out_res)

    fh, fw = frame.shape[:2]
    fill = float(frame.mean())
    # sample at crop pixel centers, in frame pixel-center coordinates
    xs = x0 + (np.arange(out_res) + 0.5) / out_res * rw - 0.5
    ys = y0 + (np.arange(out_res) + 0.5) / out_res * rh - 0.5
    ix = np.floor(xs).astype(int)
    iy = np.floor(ys).astype(int)
    fx = xs - ix
    fy = ys - iy

    def axis_samples(idx, n):
        valid = (idx >= 0) & (idx < n)
        return np.clip(idx, 0, n - 1), valid

    ix0, vx0 = axis_samples(ix, fw)
    ix1, vx1 = axis_samples(ix + 1, fw)
    iy0, vy0 = axis_samples(iy, fh)
    iy1, vy1 = axis_samples(iy + 1, fh)

    def corner(iyc, vyc, ixc, vxc):
        vals = frame[iyc[:, None], ixc[None, :], :]
        mask = (vyc[:, None] & vxc[None, :])[..., None]
        return np.where(mask, vals, fill)

    wy = fy[:, None, None]
    wx = fx[None, :, None]
    crop = ((1 - wy) * (1 - wx) * corner(iy0, vy0, ix0, vx0)
            + (1 - wy) * wx * corner(iy0, vy0, ix1, vx1)
            + wy * (1 - wx) * corner(iy1, vy1, ix0, vx0)
            + wy * wx * corner(iy1, vy1, ix1, vx1))
    return crop, geom


def encode_box(box: BBox, geom: CropGeometry) -> np.ndarray:
    """Crop-normalized corner targets (x1, y1, x2, y2) for training."""
    x1, y1, x2, y2 = box.corners()
    u1, v1 = geom.to_crop(x1, y1)
    u2, v2 = geom.to_crop(x2, y2)
    return np.array([u1, v1, u2, v2])


def decode_box(raw: np.ndarray, geom: CropGeometry) -> BBox:
    raw = np.asarray(raw, dtype=float).reshape(4)
    if not np.all(np.isfinite(raw)):
        raise InvalidBoxError(f"non-finite raw box output {raw}")
    x1, y1 = geom.to_frame(raw[0], raw[1])
    x2, y2 = geom.to_frame(raw[2], raw[3])
    if x2 < x1 or y2 < y1:
        warnings.warn(f"decode: inverted corners {raw}, clamping", RuntimeWarning)
    cx, cy = (x1 + x2) / 2, (y1 + y2) / 2
    w = max(x2 - x1, MIN_BOX_EXTENT)
    h = max(y2 - y1, MIN_BOX_EXTENT)
    return BBox(cx, cy, w, h)


def teacher_select(gt: BBox, pred: BBox, p_pred: float,
                   rng: np.random.Generator) -> BBox:
    """Pick the predicted box with probability p_pred, else ground truth."""
    if not 0.0 <= p_pred <= 1.0:
        raise ValueError(f"p_pred must be in [0, 1], got {p_pred}")
    return pred if rng.random() < p_pred else gt


class BoxHead:
    """Linear regression head; starts as the identity tracker.

    Zero weights plus a bias equal to the context-box encoding make the
    untrained head decode to exactly the previous box.
    """

    def __init__(self, input_width: int):
        self.w = Tensor(np.zeros((input_width, 4)))
        self.b = Tensor(DEFAULT_RAW.copy())

    def forward(self, h: Tensor) -> Tensor:
        return bias_add(matmul(h, self.w), self.b)

    def params(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}


class TrackerModel:
    """Extractor + recurrent variant + box head, with checkpoint support."""

    def __init__(self, variant: str, scale: str = "desk",
                 seed: int = 0, extractor_config=None, recurrent_config=None):
        self.variant = variant
        self.scale = scale
        rng = np.random.default_rng(seed)
        self.extractor_config = (extractor_config
                                 or extractor_config_for_variant(variant, scale))
        self.recurrent_config = (recurrent_config
                                 or recurrent_config_for_variant(variant, scale))
        if self.extractor_config.projection_width != self.recurrent_config.feature_width:
            raise ConfigError(
                f"extractor projects to {self.extractor_config.projection_width} but the "
                f"recurrent module expects {self.recurrent_config.feature_width}"
            )
        self.extractor = Extractor(self.extractor_config, rng)
        self.recurrent = build_recurrent(self.recurrent_config, rng)
        self.head = BoxHead(self.recurrent.output_width)

    @property
    def crop_res(self) -> int:
        return self.extractor_config.input_size

    def reset_states(self) -> None:
        self.recurrent.reset_states()

    def forward_step(self, prev_crop: Tensor, cur_crop: Tensor,
                     mode: str = "infer") -> Tensor:
        feats = self.extractor.forward(prev_crop, cur_crop, mode=mode)
        h = self.recurrent.step(feats)
        return self.head.forward(h)

    def params(self) -> dict[str, Tensor]:
        out = {f"extractor.{k}": v for k, v in self.extractor.params().items()}
        out |= {f"recurrent.{k}": v for k, v in self.recurrent.params().items()}
        out |= {f"head.{k}": v for k, v in self.head.params().items()}
        return out

    def param_count(self) -> int:
        """Closed-form total; equals the instantiated tensor element count."""
        head = self.recurrent.output_width * 4 + 4
        return (self.extractor_config.param_count()
                + recurrent_param_count(self.recurrent_config) + head)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {f"extractor.{k}": v for k, v in self.extractor.state_arrays().items()}

    def save(self, path, extra: dict[str, np.ndarray] | None = None) -> None:
        arrays = {k: v.data for k, v in self.params().items()}
        arrays |= self.state_arrays()
        arrays["meta.variant"] = np.frombuffer(self.variant.encode(),
                                               dtype=np.uint8).astype(np.float64)
        arrays["meta.scale"] = np.frombuffer(self.scale.encode(),
                                             dtype=np.uint8).astype(np.float64)
        if extra:
            arrays |= extra
        save_checkpoint(path, arrays)

    def load(self, path) -> dict[str, np.ndarray]:
        """Restore parameters in place; returns any extra arrays found."""
        arrays = load_checkpoint(path)
        targets: dict[str, np.ndarray] = {k: v.data for k, v in self.params().items()}
        targets |= self.state_arrays()
        missing = sorted(set(targets) - set(arrays))
        if missing:
            raise CheckpointError(f"checkpoint lacks arrays: {missing[:4]}...")
        for name, dst in targets.items():
            src = arrays[name]
            if src.shape != dst.shape:
                raise CheckpointError(
                    f"checkpoint array {name} has shape {src.shape}, expected {dst.shape}"
                )
            dst[...] = src
        return {k: v for k, v in arrays.items() if k not in targets}

    @staticmethod
    def checkpoint_identity(path) -> tuple[str, str]:
        """(variant, scale) recorded in a checkpoint."""
        arrays = load_checkpoint(path)
        try:
            return (bytes(arrays["meta.variant"].astype(np.uint8)).decode(),
                    bytes(arrays["meta.scale"].astype(np.uint8)).decode())
        except KeyError as exc:
            raise CheckpointError(f"checkpoint {path} lacks identity metadata") from exc

    @classmethod
    def from_checkpoint(cls, path, seed: int = 0) -> "TrackerModel":
        variant, scale = cls.checkpoint_identity(path)
        model = cls(variant, scale, seed=seed)
        model.load(path)
        return model


class Tracker:
    """Stateful single-object tracker over one sequence."""

    def __init__(self, model: TrackerModel):
        self.model = model
        self.prev_frame: np.ndarray | None = None
        self.box: BBox | None = None
        self.frame_index = 0

    def init(self, frame: np.ndarray, box: BBox) -> None:
        self.model.reset_states()
        self.prev_frame = frame
        self.box = box
        self.frame_index = 0

    def step(self, frame: np.ndarray) -> BBox:
        if self.prev_frame is None:
            raise RuntimeError("tracker.step called before init")
        self.frame_index += 1
        res = self.model.crop_res
        prev_crop, _ = crop_with_context(self.prev_frame, self.box, res)
        cur_crop, geom = crop_with_context(frame, self.box, res)
        raw = self.model.forward_step(Tensor(prev_crop[None]), Tensor(cur_crop[None]),
                                      mode="infer")
        values = raw.data.reshape(4)
        if not np.all(np.isfinite(values)):
            raise TrackingFault(self.frame_index, f"non-finite network output {values}")
        box = decode_box(values, geom)
        self.prev_frame = frame
        self.box = box
        return box


def track_sequence(model: TrackerModel, frames: list[np.ndarray],
                   init_box: BBox) -> list[BBox]:
    """Run one pass; returns one box per frame after the first."""
    if len(frames) < 2:
        raise ValueError(f"tracking needs at least 2 frames, got {len(frames)}")
    tracker = Tracker(model)
    tracker.init(frames[0], init_box)
    return [tracker.step(f) for f in frames[1:]]


# ---------------------------------------------------------------------------
# box files: "x,y,w,h" per line, top-left corner convention


def write_box_file(path, boxes: list[BBox]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for b in boxes:
            x, y, w, h = b.tlwh()
            fh.write(f"{round(x)},{round(y)},{round(w)},{round(h)}\n")


def read_box_file(path) -> list[BBox]:
    boxes = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            x, y, w, h = (float(p) for p in line.replace("\t", ",").split(","))
            boxes.append(BBox.from_tlwh(x, y, w, h))
    return boxes
