"""Dense tensors with reverse-mode automatic differentiation on a recorded tape.

Float32 is the training precision; float64 is used for gradient checking.
Ops record onto the innermost active ``Graph`` (a tape) whenever any input
requires a gradient; with no active graph everything runs in eval mode.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "ShapeError",
    "backward",
    "apply",
    "OPS",
    "concat",
    "conv2d",
    "conv2d_transpose",
    "channel_affine",
    "leaky_relu",
    "matmul",
    "grad_check",
    "GradCheckReport",
    "save_ctns",
    "load_ctns",
    "CtnsError",
]


class ShapeError(ValueError):
    """Raised when operand shapes are invalid for an op."""


def _shape_err(op, *shapes):
    return ShapeError(f"{op}: incompatible shapes " + " vs ".join(str(s) for s in shapes))


_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense multi-dimensional float array, optionally carrying a gradient.

    ``data`` is a row-major numpy array (float32 or float64). ``grad`` is
    allocated as zeros for leaf tensors created with ``requires_grad=True``
    and accumulates across backward passes until ``zero_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        # ascontiguousarray promotes 0-d to 1-d; rank-0 is already contiguous
        self.data = np.ascontiguousarray(arr) if arr.ndim else arr

        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        return out

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g.astype(self.data.dtype, copy=False)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def abs(self):
        return absval(self)

    def square(self):
        return square(self)

    def sq_norm(self, axis=None):
        return sq_norm(self, axis=axis)

    def l1_norm(self, axis=None):
        return l1_norm(self, axis=axis)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


def _coerce(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


class _Node:
    __slots__ = ("op", "inputs", "out", "bwd")

    def __init__(self, op, inputs, out, bwd):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.bwd = bwd


_active_graphs: list["Graph"] = []


class Graph:
    """Tape of operation records, appended in execution order.

    Execution order is topological by construction: a tensor exists before
    any op can consume it. Used as a context manager; a fresh graph is made
    per training iteration and discarded afterwards.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Graph":
        _active_graphs.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _active_graphs.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self.nodes)


def _record(op: str, inputs: tuple, out: Tensor, bwd) -> Tensor:
    if _active_graphs and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _active_graphs[-1].nodes.append(_Node(op, inputs, out, bwd))
    return out


def backward(graph: Graph, root: Tensor) -> None:
    """Populate d(root)/d(leaf) for every requires_grad leaf under root.

    Visits each recorded node exactly once, in reverse tape order. Repeated
    calls accumulate into leaf ``grad`` buffers.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    produced = {id(n.out) for n in graph.nodes}
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}

    def sink(t: Tensor, g: np.ndarray):
        if id(t) in produced:
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
        elif t.requires_grad:
            t.accumulate_grad(g)

    if id(root) not in produced:
        if root.requires_grad:
            root.accumulate_grad(grads[id(root)])
        return
    for node in reversed(graph.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.bwd(g)):
            if gi is not None:
                sink(inp, gi)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Operator catalog
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _coerce(a, getattr(b, "dtype", np.float32))
    b = _coerce(b, a.dtype)
    try:
        out = Tensor(a.data + b.data)
    except ValueError:
        raise _shape_err("add", a.shape, b.shape) from None

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", (a, b), out, bwd)


def sub(a, b) -> Tensor:
    a = _coerce(a, getattr(b, "dtype", np.float32))
    b = _coerce(b, a.dtype)
    try:
        out = Tensor(a.data - b.data)
    except ValueError:
        raise _shape_err("sub", a.shape, b.shape) from None

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", (a, b), out, bwd)


def mul(a, b) -> Tensor:
    a = _coerce(a, getattr(b, "dtype", np.float32))
    b = _coerce(b, a.dtype)
    try:
        out = Tensor(a.data * b.data)
    except ValueError:
        raise _shape_err("mul", a.shape, b.shape) from None
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _record("mul", (a, b), out, bwd)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record("neg", (a,), out, lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_err("matmul", a.shape, b.shape)
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return _record("matmul", (a, b), out, bwd)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = a.data >= 0
    out = Tensor(np.where(mask, a.data, slope * a.data))

    def bwd(g):
        return (np.where(mask, g, slope * g),)

    return _record("leaky_relu", (a,), out, bwd)


def absval(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data))
    sign = np.sign(a.data)
    return _record("abs", (a,), out, lambda g: (g * sign,))


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data * a.data)
    ad = a.data
    return _record("square", (a,), out, lambda g: (2.0 * g * ad,))


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    shape, nd = a.shape, a.ndim

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g.reshape((1,) * nd), shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", (a,), out, bwd)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    s = tensor_sum(a, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = Tensor(a.data.reshape(shape))
    except ValueError:
        raise _shape_err("reshape", a.shape, tuple(shape)) from None
    orig = a.shape
    return _record("reshape", (a,), out, lambda g: (g.reshape(orig),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    except ValueError:
        raise _shape_err("concat", *[t.shape for t in tensors]) from None
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record("concat", tuple(tensors), out, bwd)


def sq_norm(a: Tensor, axis=None) -> Tensor:
    """Squared L2 norm: sum of squares over ``axis`` (all axes by default)."""
    return tensor_sum(square(a), axis=axis)


def l1_norm(a: Tensor, axis=None) -> Tensor:
    """L1 norm: sum of absolute values over ``axis``."""
    return tensor_sum(absval(a), axis=axis)


def channel_affine(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Per-channel affine y[n,c,...] = x[n,c,...] * gain[c] + bias[c].

    Stands in for instance/batch normalization at batch size 1: the
    normalizing statistics are frozen at identity and only the learnable
    affine remains.
    """
    if x.ndim < 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise _shape_err("channel_affine", x.shape, gain.shape, bias.shape)
    cshape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    out = Tensor(x.data * gain.data.reshape(cshape) + bias.data.reshape(cshape))
    xd = x.data
    reduce_axes = (0,) + tuple(range(2, x.ndim))

    def bwd(g):
        return (
            g * gain.data.reshape(cshape),
            (g * xd).sum(axis=reduce_axes),
            g.sum(axis=reduce_axes),
        )

    return _record("channel_affine", (x, gain, bias), out, bwd)


# -- convolution ------------------------------------------------------------


def _conv_cols(xp: np.ndarray, kh: int, kw: int, stride: int):
    """im2col on an already-padded NCHW array -> (N*Ho*Wo, C*kh*kw)."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (N, C, Ho, Wo, kh, kw)
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols), ho, wo


def _cols_to_image(cols: np.ndarray, n, c, hp, wp, ho, wo, kh, kw, stride) -> np.ndarray:
    """Adjoint of im2col: scatter-add column gradients back to (N,C,Hp,Wp)."""
    img = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for ki in range(kh):
        for kj in range(kw):
            img[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += cols[..., ki, kj]
    return img


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution (cross-correlation), NCHW layout, square stride/pad.

    x: (N, C, H, W); w: (F, C, kh, kw); b: (F,) or None.
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise _shape_err("conv2d", x.shape, w.shape)
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    if h + 2 * pad < kh or wd + 2 * pad < kw:
        raise _shape_err("conv2d", x.shape, w.shape)
    if b is not None and b.shape != (f,):
        raise _shape_err("conv2d(bias)", b.shape, (f,))
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols, ho, wo = _conv_cols(xp, kh, kw, stride)
    wmat = w.data.reshape(f, -1)
    out_mat = cols @ wmat.T
    if b is not None:
        out_mat = out_mat + b.data
    out = Tensor(out_mat.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))
    hp, wp = xp.shape[2], xp.shape[3]

    def bwd(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
        dw = (gmat.T @ cols).reshape(w.shape)
        dcols = gmat @ wmat
        dxp = _cols_to_image(dcols, n, c, hp, wp, ho, wo, kh, kw, stride)
        dx = dxp[:, :, pad : hp - pad, pad : wp - pad] if pad else dxp
        if b is None:
            return dx, dw
        return dx, dw, gmat.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return _record("conv2d", inputs, out, bwd)


def conv2d_transpose(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    pad: int = 0,
    out_pad: int = 0,
) -> Tensor:
    """Transposed 2-D convolution (adjoint of conv2d), NCHW layout.

    x: (N, Cin, H, W); w: (Cin, Cout, kh, kw); output spatial size is
    (H-1)*stride - 2*pad + kh + out_pad.
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise _shape_err("conv2d_transpose", x.shape, w.shape)
    if out_pad >= stride:
        raise _shape_err("conv2d_transpose(out_pad)", (out_pad,), (stride,))
    n, cin, h, wd = x.shape
    _, cout, kh, kw = w.shape
    ho = (h - 1) * stride - 2 * pad + kh + out_pad
    wo = (wd - 1) * stride - 2 * pad + kw + out_pad
    if ho <= 0 or wo <= 0:
        raise _shape_err("conv2d_transpose", x.shape, w.shape)
    if b is not None and b.shape != (cout,):
        raise _shape_err("conv2d_transpose(bias)", b.shape, (cout,))
    # Scatter each input pixel's contribution x[n,:,i,j] @ w into a padded
    # buffer at (i*stride, j*stride), then crop the pad margin.
    xmat = x.data.transpose(0, 2, 3, 1).reshape(n * h * wd, cin)
    wmat = w.data.reshape(cin, cout * kh * kw)
    cols = xmat @ wmat
    hp, wp = ho + 2 * pad, wo + 2 * pad
    buf = _cols_to_image(cols, n, cout, hp, wp, h, wd, kh, kw, stride)
    out_arr = buf[:, :, pad : pad + ho, pad : pad + wo]
    if b is not None:
        out_arr = out_arr + b.data.reshape(1, cout, 1, 1)
    out = Tensor(out_arr)

    def bwd(g):
        gp = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else g
        gcols, gh, gw = _conv_cols(gp, kh, kw, stride)  # (n*h*wd, cout*kh*kw)
        assert (gh, gw) == (h, wd)
        dx = (gcols @ wmat.T).reshape(n, h, wd, cin).transpose(0, 3, 1, 2)
        dw = (xmat.T @ gcols).reshape(w.shape)
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    inputs = (x, w) if b is None else (x, w, b)
    return _record("conv2d_transpose", inputs, out, bwd)


OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "matmul": matmul,
    "leaky_relu": leaky_relu,
    "abs": absval,
    "square": square,
    "sum": tensor_sum,
    "mean": tensor_mean,
    "reshape": reshape,
    "concat": concat,
    "sq_norm": sq_norm,
    "l1_norm": l1_norm,
    "channel_affine": channel_affine,
    "conv2d": conv2d,
    "conv2d_transpose": conv2d_transpose,
}


def apply(op_kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch an op by catalog name."""
    if op_kind not in OPS:
        raise KeyError(f"unknown op kind {op_kind!r}; catalog: {sorted(OPS)}")
    return OPS[op_kind](*inputs, **kwargs)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    per_param: dict


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def grad_check(params, loss_fn, step: float = 1e-3) -> GradCheckReport:
    """Compare reverse-mode gradients of ``loss_fn`` against central finite
    differences, coordinate by coordinate.

    ``params`` is a dict name -> Tensor (float64 recommended); ``loss_fn``
    takes no arguments, reads the current parameter values and returns a
    scalar Tensor. It must be deterministic.
    """
    if not isinstance(params, dict):
        params = {f"p{i}": p for i, p in enumerate(params)}
    for p in params.values():
        p.zero_grad()
    with Graph() as g:
        loss = loss_fn()
    backward(g, loss)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}

    per_param = {}
    worst = ("", 0.0)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        err = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = loss_fn().item()
            flat[i] = orig - step
            lm = loss_fn().item()
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * step)
            err = max(err, _rel_err(float(analytic[name].reshape(-1)[i]), numeric))
        per_param[name] = err
        if err >= worst[1]:
            worst = (name, err)
    return GradCheckReport(max_rel_error=worst[1], worst_param=worst[0], per_param=per_param)


# ---------------------------------------------------------------------------
# CTNS tensor file format
# ---------------------------------------------------------------------------

_CTNS_MAGIC = b"CTNS"
_CTNS_VERSION = 1
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_FOR = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class CtnsError(ValueError):
    """Malformed CTNS file; message carries the byte offset of the fault."""


def save_ctns(tensor, path) -> None:
    """Write a tensor to the raw CTNS format (bit-exact round trip)."""
    arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    if arr.dtype not in _CODE_FOR:
        raise CtnsError(f"unsupported dtype {arr.dtype} (offset 5)")
    if arr.ndim:
        arr = np.ascontiguousarray(arr)
    with open(path, "wb") as fh:
        fh.write(_CTNS_MAGIC)
        fh.write(struct.pack("<BBB", _CTNS_VERSION, _CODE_FOR[arr.dtype], arr.ndim))
        for ext in arr.shape:
            fh.write(struct.pack("<I", ext))
        fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C"))


def load_ctns(path) -> Tensor:
    """Read a CTNS file back into a Tensor (requires_grad=False)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _CTNS_MAGIC:
        raise CtnsError(f"{path}: bad magic (offset 0)")
    if len(raw) < 7:
        raise CtnsError(f"{path}: truncated header (offset {len(raw)})")
    version, code, rank = struct.unpack_from("<BBB", raw, 4)
    if version != _CTNS_VERSION:
        raise CtnsError(f"{path}: unsupported version {version} (offset 4)")
    if code not in _DTYPE_CODES:
        raise CtnsError(f"{path}: unknown dtype code {code} (offset 5)")
    off = 7
    if len(raw) < off + 4 * rank:
        raise CtnsError(f"{path}: truncated extents (offset {len(raw)})")
    shape = struct.unpack_from(f"<{rank}I", raw, off) if rank else ()
    off += 4 * rank
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(shape)) if rank else 1
    expected = off + count * dtype.itemsize
    if len(raw) != expected:
        raise CtnsError(f"{path}: payload size mismatch (offset {min(len(raw), expected)})")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=off).reshape(shape)
    return Tensor(data.astype(dtype.newbyteorder("=")))
