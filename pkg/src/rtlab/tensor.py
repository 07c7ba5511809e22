"""Dense float64 tensors with tape-based reverse-mode differentiation.

All arithmetic runs in 64-bit so analytic gradients can be validated
against central finite differences at tight tolerances. Operations record
themselves onto the active :class:`Graph` (a tape); ``Graph.backward``
replays the tape in exact reverse recording order.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class GraphError(RuntimeError):
    """Misuse of the recording tape (nested tapes, non-scalar loss, ...)."""


class DegenerateBatchError(ValueError):
    """Train-mode batch statistics requested on a batch smaller than 2."""


class Tensor:
    """A shaped float64 array with an optional same-shaped gradient."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"


class _Node:
    __slots__ = ("out", "backward")

    def __init__(self, out: Tensor, backward):
        self.out = out
        self.backward = backward


_TAPE_STACK: list["Graph"] = []


def _active() -> "Graph | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Graph:
    """Ordered tape of primitive operations.

    Recording order is topological by construction (an op can only consume
    tensors that already exist), so the backward pass is a single reverse
    sweep. A graph is single-use: record, backward, discard.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Graph":
        if _TAPE_STACK:
            raise GraphError("nested recording tapes are not supported")
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def _record(self, out: Tensor, backward) -> None:
        self.nodes.append(_Node(out, backward))

    def backward(self, loss: Tensor) -> None:
        """Fill .grad of every tensor reachable from ``loss``.

        Tensors not on a path to the loss keep whatever gradient they
        had (zeros, if freshly cleared).
        """
        if loss.size != 1:
            raise GraphError(f"loss must be scalar, got shape {loss.shape}")
        loss._accumulate(np.ones_like(loss.data))
        for node in reversed(self.nodes):
            if node.out.grad is not None:
                node.backward(node.out.grad)


def backward(graph: Graph, loss: Tensor) -> None:
    graph.backward(loss)


# ---------------------------------------------------------------------------
# primitive operations


def _binary_shape_check(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes differ: {a.shape} vs {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    tape = _active()
    if tape is not None:
        def bwd(g, a=a, b=b):
            a._accumulate(g @ b.data.T)
            b._accumulate(a.data.T @ g)
        tape._record(out, bwd)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shape_check(a, b, "add")
    out = Tensor(a.data + b.data)
    tape = _active()
    if tape is not None:
        def bwd(g, a=a, b=b):
            a._accumulate(g)
            b._accumulate(g)
        tape._record(out, bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shape_check(a, b, "sub")
    out = Tensor(a.data - b.data)
    tape = _active()
    if tape is not None:
        def bwd(g, a=a, b=b):
            a._accumulate(g)
            b._accumulate(-g)
        tape._record(out, bwd)
    return out


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _binary_shape_check(a, b, "hadamard")
    out = Tensor(a.data * b.data)
    tape = _active()
    if tape is not None:
        def bwd(g, a=a, b=b):
            a._accumulate(g * b.data)
            b._accumulate(g * a.data)
        tape._record(out, bwd)
    return out


def scale(x: Tensor, s: float) -> Tensor:
    out = Tensor(x.data * s)
    tape = _active()
    if tape is not None:
        def bwd(g, x=x, s=s):
            x._accumulate(g * s)
        tape._record(out, bwd)
    return out


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast add: [m, n] + [n]."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"bias_add: incompatible shapes {x.shape} + {b.shape}")
    out = Tensor(x.data + b.data)
    tape = _active()
    if tape is not None:
        def bwd(g, x=x, b=b):
            x._accumulate(g)
            b._accumulate(g.sum(axis=0))
        tape._record(out, bwd)
    return out


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    y[~pos] = e / (1.0 + e)
    out = Tensor(y)
    tape = _active()
    if tape is not None:
        def bwd(g, x=x, y=y):
            x._accumulate(g * y * (1.0 - y))
        tape._record(out, bwd)
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)
    tape = _active()
    if tape is not None:
        def bwd(g, x=x, y=y):
            x._accumulate(g * (1.0 - y * y))
        tape._record(out, bwd)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    tape = _active()
    if tape is not None:
        mask = x.data > 0
        def bwd(g, x=x, mask=mask):
            x._accumulate(g * mask)
        tape._record(out, bwd)
    return out


def concat(parts: list[Tensor], axis: int = -1) -> Tensor:
    if not parts:
        raise ShapeError("concat: empty part list")
    ref = parts[0].shape
    ax = axis % len(ref)
    for p in parts[1:]:
        if len(p.shape) != len(ref) or any(
            p.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise ShapeError(
                f"concat: shapes {[q.shape for q in parts]} disagree off axis {ax}"
            )
    out = Tensor(np.concatenate([p.data for p in parts], axis=ax))
    tape = _active()
    if tape is not None:
        widths = [p.shape[ax] for p in parts]
        splits = np.cumsum(widths)[:-1]
        def bwd(g, parts=tuple(parts), splits=splits, ax=ax):
            for p, gp in zip(parts, np.split(g, splits, axis=ax)):
                p._accumulate(gp)
        tape._record(out, bwd)
    return out


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(x.data[idx].copy())
    tape = _active()
    if tape is not None:
        def bwd(g, x=x, idx=idx):
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[idx] += g
        tape._record(out, bwd)
    return out


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    tape = _active()
    if tape is not None:
        def bwd(g, x=x):
            x._accumulate(g.reshape(x.data.shape))
        tape._record(out, bwd)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())
    tape = _active()
    if tape is not None:
        def bwd(g, x=x):
            x._accumulate(np.broadcast_to(g, x.data.shape).copy())
        tape._record(out, bwd)
    return out


def mae_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over all elements; subgradient at 0 is 0."""
    _binary_shape_check(pred, target, "mae_loss")
    diff = pred.data - target.data
    out = Tensor(np.mean(np.abs(diff)))
    tape = _active()
    if tape is not None:
        sgn = np.sign(diff) / diff.size
        def bwd(g, pred=pred, target=target, sgn=sgn):
            pred._accumulate(g * sgn)
            target._accumulate(-g * sgn)
        tape._record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# spatial operations (NHWC layout)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution, x [B,H,W,Cin], w [k,k,Cin,Cout], b [Cout]."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d operands, got {x.shape}, {w.shape}")
    kh, kw, cin, cout = w.shape
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d: input channels {x.shape[3]} != kernel {cin}")
    bsz, h, wd = x.shape[:3]
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} too large for input {x.shape}")

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # win: [B, H', W', Cin, kh, kw] -> strided, reordered to [B,OH,OW,kh,kw,Cin]
    cols = win[:, ::stride, ::stride].transpose(0, 1, 2, 4, 5, 3)
    cols = np.ascontiguousarray(cols).reshape(bsz * oh * ow, kh * kw * cin)
    wf = w.data.reshape(kh * kw * cin, cout)
    y = (cols @ wf + b.data).reshape(bsz, oh, ow, cout)
    out = Tensor(y)

    tape = _active()
    if tape is not None:
        def bwd(g, x=x, w=w, b=b, cols=cols, wf=wf, dims=(bsz, h, wd, oh, ow)):
            bsz, h, wd, oh, ow = dims
            gf = g.reshape(bsz * oh * ow, cout)
            w._accumulate((cols.T @ gf).reshape(w.data.shape))
            b._accumulate(gf.sum(axis=0))
            dcols = (gf @ wf.T).reshape(bsz, oh, ow, kh, kw, cin)
            dxp = np.zeros((bsz, h + 2 * pad, wd + 2 * pad, cin))
            for ki in range(kh):
                for kj in range(kw):
                    dxp[:, ki:ki + oh * stride:stride,
                        kj:kj + ow * stride:stride] += dcols[:, :, :, ki, kj]
            x._accumulate(dxp[:, pad:pad + h, pad:pad + wd] if pad else dxp)
        tape._record(out, bwd)
    return out


def adaptive_avgpool2d(x: Tensor, out_grid: int) -> Tensor:
    """Average-pool x [B,H,W,C] onto an out_grid x out_grid cell grid."""
    if x.data.ndim != 4:
        raise ShapeError(f"adaptive_avgpool2d: need 4-d input, got {x.shape}")
    bsz, h, w, c = x.shape
    if out_grid > h or out_grid > w:
        raise ShapeError(f"adaptive_avgpool2d: grid {out_grid} exceeds input {x.shape}")
    rb = [(i * h // out_grid, (i + 1) * h // out_grid) for i in range(out_grid)]
    cb = [(j * w // out_grid, (j + 1) * w // out_grid) for j in range(out_grid)]
    y = np.empty((bsz, out_grid, out_grid, c))
    for i, (r0, r1) in enumerate(rb):
        for j, (c0, c1) in enumerate(cb):
            y[:, i, j] = x.data[:, r0:r1, c0:c1].mean(axis=(1, 2))
    out = Tensor(y)
    tape = _active()
    if tape is not None:
        def bwd(g, x=x, rb=rb, cb=cb):
            dx = np.zeros_like(x.data)
            for i, (r0, r1) in enumerate(rb):
                for j, (c0, c1) in enumerate(cb):
                    area = (r1 - r0) * (c1 - c0)
                    dx[:, r0:r1, c0:c1] += g[:, i:i + 1, j:j + 1] / area
            x._accumulate(dx)
        tape._record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# batch normalization over [batch, features]

BN_EPS = 1e-5
BN_MOMENTUM = 0.99


class BatchNormParams:
    """Learned scale/shift plus running statistics for one feature axis."""

    def __init__(self, width: int):
        self.gamma = Tensor(np.ones(width))
        self.beta = Tensor(np.zeros(width))
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)

    def params(self) -> dict[str, Tensor]:
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}


def batchnorm(x: Tensor, bn: BatchNormParams, mode: str) -> Tensor:
    """Normalize per feature; train mode uses batch stats, infer running stats."""
    if x.data.ndim != 2:
        raise ShapeError(f"batchnorm: need [batch, features], got {x.shape}")
    if mode not in ("train", "infer"):
        raise ValueError(f"batchnorm: unknown mode {mode!r}")
    tape = _active()
    if mode == "train":
        bsz = x.shape[0]
        if bsz < 2:
            raise DegenerateBatchError(f"batchnorm train mode needs batch >= 2, got {bsz}")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        ivstd = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x.data - mu) * ivstd
        bn.running_mean *= BN_MOMENTUM
        bn.running_mean += (1.0 - BN_MOMENTUM) * mu
        bn.running_var *= BN_MOMENTUM
        bn.running_var += (1.0 - BN_MOMENTUM) * var
        out = Tensor(bn.gamma.data * xhat + bn.beta.data)
        if tape is not None:
            def bwd(g, x=x, bn=bn, xhat=xhat, ivstd=ivstd, bsz=bsz):
                bn.beta._accumulate(g.sum(axis=0))
                bn.gamma._accumulate((g * xhat).sum(axis=0))
                dxhat = g * bn.gamma.data
                dx = (ivstd / bsz) * (
                    bsz * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
                )
                x._accumulate(dx)
            tape._record(out, bwd)
        return out

    ivstd = 1.0 / np.sqrt(bn.running_var + BN_EPS)
    xhat = (x.data - bn.running_mean) * ivstd
    out = Tensor(bn.gamma.data * xhat + bn.beta.data)
    if tape is not None:
        def bwd(g, x=x, bn=bn, xhat=xhat, ivstd=ivstd):
            bn.beta._accumulate(g.sum(axis=0))
            bn.gamma._accumulate((g * xhat).sum(axis=0))
            x._accumulate(g * bn.gamma.data * ivstd)
        tape._record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# initialization


def msra_init(shape, fan_in: int, rng: np.random.Generator) -> Tensor:
    """Zero-mean normal with std sqrt(2/fan_in)."""
    if fan_in < 1:
        raise ValueError(f"msra_init: fan_in must be >= 1, got {fan_in}")
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape))
