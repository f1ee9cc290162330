"""Rank-4 tensors with reverse-mode automatic differentiation.

Every value is a ``Tensor`` wrapping a numpy array of shape
(batch, channels, height, width).  Operations are plain functions; when a
``Tape`` is active (as a context manager) and an argument participates in
the gradient graph, the operation records a node holding a backward
closure.  ``backward(loss, tape)`` replays the tape in reverse and returns
accumulated gradients for the leaf tensors that require them.

The op set is exactly what the despeckling network needs: 3x3 and 1x1
convolution, 2x2 max pooling, factor-2 bilinear up/downsampling, ReLU,
elementwise add/sub/mul, scalar scaling, and full-tensor sum/mean
reductions.  Training losses register their own nodes through
``Tape.record``, which is public for that reason.

Numerics: float32 is the working precision; pass float64 arrays when
validating gradients with :func:`finite_diff_check`.  All forwards are
pure and deterministic (fixed reduction order), so repeated calls on the
same input are bit-identical.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels as _k

DEFAULT_DTYPE = np.float32

_tls = threading.local()


class Tensor:
    """A rank-4 array (n, c, h, w), optionally tracked for gradients.

    ``requires_grad`` marks leaves (parameters, checked inputs); outputs
    of recorded ops are tracked through the tape instead.  ``grad`` is
    filled by :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.ndim != 4:
            raise ValueError(f"Tensor must be rank-4 (n,c,h,w), got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape: Sequence[int], dtype=DEFAULT_DTYPE, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(tuple(shape), dtype=dtype), requires_grad=requires_grad)


def from_image(image: np.ndarray, dtype=DEFAULT_DTYPE) -> Tensor:
    """Wrap a 2-D (h, w) image as a (1, 1, h, w) tensor."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"from_image expects a 2-D array, got shape {img.shape}")
    return Tensor(img[None, None].astype(dtype, copy=True))


class _Node:
    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output: Tensor, inputs: tuple[Tensor, ...], backward_fn):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Records ops of one forward pass in execution (topological) order.

    One tape belongs to one logical training step and one thread; use as

        with Tape() as tape:
            loss = ...
        grads = backward(loss, tape)
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._tracked: set[int] = set()

    def __enter__(self) -> "Tape":
        stack = getattr(_tls, "tapes", None)
        if stack is None:
            stack = _tls.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tls.tapes.pop()
        return False

    def tracks(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._tracked

    def record(
        self,
        output: Tensor,
        inputs: Sequence[Tensor],
        backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    ) -> None:
        """Append a node; ``backward_fn`` maps the output gradient to one
        gradient (or None) per input, in order."""
        self.nodes.append(_Node(output, tuple(inputs), backward_fn))
        self._tracked.add(id(output))


def _active_tape() -> Tape | None:
    stack = getattr(_tls, "tapes", None)
    return stack[-1] if stack else None


def _maybe_record(output: Tensor, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(tape.tracks(t) for t in inputs):
        tape.record(output, inputs, backward_fn)
    return output


def backward(loss: Tensor, tape: Tape, watch: Iterable[Tensor] = ()) -> dict[Tensor, np.ndarray]:
    """Reverse-traverse ``tape`` from scalar ``loss``.

    Returns a map {leaf tensor: gradient} covering every requires_grad
    tensor encountered on the tape plus everything in ``watch`` (zeros if
    unused by the graph).  Multiple uses of a tensor accumulate
    additively.  Also stores each gradient on ``tensor.grad``.
    """
    if loss.shape != (1, 1, 1, 1):
        raise ValueError(f"backward requires a scalar (1,1,1,1) loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1, 1, 1), dtype=loss.dtype)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        input_grads = node.backward_fn(g)
        for inp, gi in zip(node.inputs, input_grads):
            if gi is None:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if inp.requires_grad:
                leaves[key] = inp
    result: dict[Tensor, np.ndarray] = {}
    for key, t in leaves.items():
        result[t] = grads[key]
    for t in watch:
        if t not in result:
            result[t] = np.zeros_like(t.data)
    for t, g in result.items():
        t.grad = g
    return result


# ---------------------------------------------------------------------------
# elementwise ops


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    return _maybe_record(out, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)
    return _maybe_record(out, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data
    return _maybe_record(out, (a, b), lambda g: (g * bd, g * ad))


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(x.data * x.dtype.type(s))
    return _maybe_record(out, (x,), lambda g: (g * x.dtype.type(s),))


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))
    mask = x.data > 0  # subgradient 0 at exactly 0
    return _maybe_record(out, (x,), lambda g: (g * mask,))


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum(dtype=x.dtype).reshape(1, 1, 1, 1))
    shape = x.shape
    return _maybe_record(out, (x,), lambda g: (np.full(shape, g.reshape(()), dtype=g.dtype),))


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    out = Tensor((x.data.sum(dtype=x.dtype) / x.dtype.type(n)).reshape(1, 1, 1, 1))
    shape = x.shape
    return _maybe_record(
        out, (x,), lambda g: (np.full(shape, g.reshape(()) / g.dtype.type(n), dtype=g.dtype),)
    )


# ---------------------------------------------------------------------------
# convolution


def _conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    n, ci, h, wd = x.shape
    co, ci_w, kh, kw = w.shape
    if kh != kw or kh % 2 != 1:
        raise ValueError(f"conv2d: kernel must be square and odd, got {kh}x{kw}")
    if ci != ci_w:
        raise ValueError(f"conv2d: input has {ci} channels but weight expects {ci_w}")
    if b.shape != (1, co, 1, 1):
        raise ValueError(f"conv2d: bias must have shape (1,{co},1,1), got {b.shape}")
    pad = kh // 2
    out_data = _conv2d_forward(x.data, w.data, b.data, pad)
    out = Tensor(out_data)
    xd, wd_arr = x.data, w.data

    def backward_fn(g):
        return _conv2d_backward(g, xd, wd_arr, pad)

    return _maybe_record(out, (x, w, b), backward_fn)


def _conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, pad: int) -> np.ndarray:
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    if kh == 1:
        out = np.matmul(w[:, :, 0, 0], x.reshape(n, ci, h * wd))
        return out.reshape(n, co, h, wd) + b
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty((n, co, h, wd), dtype=x.dtype)
    _k.conv3x3_forward(xp, np.ascontiguousarray(w), b.reshape(co).copy(), out)
    return out


def _conv2d_backward(g: np.ndarray, x: np.ndarray, w: np.ndarray, pad: int):
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    gb = g.sum(axis=(0, 2, 3)).reshape(1, co, 1, 1)
    if kh == 1:
        gr = g.reshape(n, co, h * wd)
        xs = x.reshape(n, ci, h * wd)
        gw = np.matmul(gr, xs.transpose(0, 2, 1)).sum(axis=0).reshape(co, ci, 1, 1)
        gx = np.matmul(w[:, :, 0, 0].T, gr).reshape(n, ci, h, wd)
        return gx, gw, gb
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    gc = np.ascontiguousarray(g)
    gxp = np.zeros_like(xp)
    _k.conv3x3_grad_input(gc, np.ascontiguousarray(w), gxp)
    gw = np.zeros_like(w)
    _k.conv3x3_grad_weight(gc, xp, gw)
    gx = gxp[:, :, pad : pad + h, pad : pad + wd]
    return gx, gw, gb


def conv2d_3x3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-size 3x3 convolution with zero padding 1."""
    if w.shape[2:] != (3, 3):
        raise ValueError(f"conv2d_3x3: weight must be (co,ci,3,3), got {w.shape}")
    return _conv2d(x, w, b)


def conv2d_1x1(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-pixel linear map across channels."""
    if w.shape[2:] != (1, 1):
        raise ValueError(f"conv2d_1x1: weight must be (co,ci,1,1), got {w.shape}")
    return _conv2d(x, w, b)


# ---------------------------------------------------------------------------
# pooling and resampling


def maxpool_2x2(x: Tensor) -> Tensor:
    """Max over disjoint 2x2 windows; gradient goes to the first
    (row-major) maximum on ties."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool_2x2 requires even spatial dims, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    windows = (
        x.data.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    )
    idx = windows.argmax(axis=-1)
    out = Tensor(np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0])
    dtype = x.dtype

    def backward_fn(g):
        gw = np.zeros((n, c, h2, w2, 4), dtype=dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = gw.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return _maybe_record(out, (x,), backward_fn)


def _up2_last(x: np.ndarray) -> np.ndarray:
    # Bilinear x2 along the last axis, half-pixel centers, clamped borders:
    # out[0]=x[0], out[2k+1]=.75x[k]+.25x[k+1], out[2k]=.25x[k-1]+.75x[k],
    # out[-1]=x[-1].
    h = x.shape[-1]
    out = np.empty(x.shape[:-1] + (2 * h,), dtype=x.dtype)
    out[..., 0] = x[..., 0]
    out[..., -1] = x[..., -1]
    if h > 1:
        a = x[..., :-1]
        bb = x[..., 1:]
        out[..., 1:-1:2] = 0.75 * a + 0.25 * bb
        out[..., 2::2] = 0.25 * a + 0.75 * bb
    return out


def _up2_adjoint_last(g: np.ndarray) -> np.ndarray:
    # Exact transpose of _up2_last.
    h = g.shape[-1] // 2
    gx = 0.75 * (g[..., 0::2] + g[..., 1::2])
    if h > 1:
        gx[..., :-1] += 0.25 * g[..., 2::2]
        gx[..., 1:] += 0.25 * g[..., 1:-1:2]
    gx[..., 0] += 0.25 * g[..., 0]
    gx[..., -1] += 0.25 * g[..., -1]
    return gx


def upsample_bilinear_2x(x: Tensor) -> Tensor:
    """Factor-2 bilinear upsampling (half-pixel centers, clamped borders);
    backward is the exact adjoint of the forward linear map."""
    yd = _up2_last(np.swapaxes(_up2_last(np.swapaxes(x.data, 2, 3)), 2, 3))
    out = Tensor(np.ascontiguousarray(yd))

    def backward_fn(g):
        gh = np.swapaxes(_up2_adjoint_last(np.swapaxes(g, 2, 3)), 2, 3)
        return (np.ascontiguousarray(_up2_adjoint_last(gh)),)

    return _maybe_record(out, (x,), backward_fn)


def downsample_bilinear_2x(x: Tensor) -> Tensor:
    """Factor-2 bilinear downsampling.  With half-pixel centers this is
    exactly the mean over disjoint 2x2 windows."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"downsample_bilinear_2x requires even spatial dims, got {h}x{w}")
    d = x.data
    out_data = 0.25 * (d[:, :, 0::2, 0::2] + d[:, :, 0::2, 1::2] + d[:, :, 1::2, 0::2] + d[:, :, 1::2, 1::2])
    out = Tensor(out_data)

    def backward_fn(g):
        gq = 0.25 * g
        return (np.repeat(np.repeat(gq, 2, axis=2), 2, axis=3),)

    return _maybe_record(out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# gradient verification


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative disagreement between the tape gradient of scalar
    ``f(x)`` and central finite differences, over all coordinates of x.

    Relative error per coordinate is |analytic - numeric| /
    (|analytic| + |numeric| + 1e-12).  Use float64 tensors for tight
    tolerances.
    """
    x.requires_grad = True
    with Tape() as tape:
        out = f(x)
    analytic = backward(out, tape, watch=[x])[x].reshape(-1)

    flat = x.data.reshape(-1)
    numeric = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x).item()
        flat[i] = orig - eps
        fm = f(x).item()
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * eps)

    denom = np.abs(analytic) + np.abs(numeric) + 1e-12
    return float(np.max(np.abs(analytic - numeric) / denom))
