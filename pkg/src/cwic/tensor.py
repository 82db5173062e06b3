"""Small reverse-mode autodiff over numpy arrays.

Only the operations the compression networks need are provided.  Gradients
are recorded on a :class:`Tape` that is active for the current thread::

    with Tape() as tape:
        loss = sq_error(decode(c, params), x)
    tape.backward(loss)

Outside a tape, operations run forward-only and record nothing.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64

_local = threading.local()


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class Tensor:
    __slots__ = ("data", "requires_grad", "_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE, order="C")
        self.requires_grad = requires_grad
        self._grad = None
        self.name = name

    @property
    def grad(self) -> np.ndarray | None:
        """Accumulated gradient; zeros if nothing has flowed back yet."""
        if self._grad is None and self.requires_grad:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = value

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self._grad = None

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of executed operations.

    Nodes are appended in execution order; :meth:`backward` walks them in
    reverse exactly once.  Tapes are thread-local, so independent shards can
    be differentiated concurrently on separate threads.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._prev: Optional[Tape] = None

    def __enter__(self) -> "Tape":
        self._prev = getattr(_local, "tape", None)
        _local.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _local.tape = self._prev

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, out: Tensor, grad: np.ndarray | None = None) -> None:
        if not out.requires_grad:
            raise ValueError("output does not depend on any tensor requiring grad")
        if grad is None:
            if out.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(out.data)
        _accumulate(out, np.array(grad, dtype=DTYPE), ())
        for node in reversed(self.nodes):
            g = node.out._grad
            if g is None:
                continue
            taken: list[np.ndarray] = [g]
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is not None and inp.requires_grad:
                    _accumulate(inp, gi, taken)
                    taken.append(inp._grad)
        self.nodes.clear()


def _accumulate(t: Tensor, gi, taken) -> None:
    """Add ``gi`` to ``t``'s gradient.

    The first contribution is adopted without a copy when it is a fresh
    array, which saves a zero fill and an add per parameter per step.
    Arrays that may alias the upstream gradient or a sibling's gradient
    are copied so later in-place adds cannot leak between tensors.
    """
    if t._grad is not None:
        t._grad += gi
        return
    if (isinstance(gi, np.ndarray) and gi.dtype == DTYPE and gi.shape == t.data.shape
            and gi.flags.writeable and gi.flags.c_contiguous
            and not any(np.may_share_memory(gi, a) for a in taken)):
        t._grad = gi
    else:
        t._grad = np.array(np.broadcast_to(gi, t.data.shape), dtype=DTYPE)


def current_tape() -> Optional[Tape]:
    return getattr(_local, "tape", None)


def _result(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    tape = current_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.nodes.append(_Node(out, tuple(inputs), backward))
    return out


def _same_shape(op: str, x: Tensor, y: Tensor) -> None:
    if x.shape != y.shape:
        raise ShapeError(f"{op}: shape mismatch {x.shape} vs {y.shape}")


# --------------------------------------------------------------------------
# elementwise


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _result(np.where(pos, x.data, 0.0), [x], lambda g: (g * pos,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(s, [x], lambda g: (g * s * (1.0 - s),))


def add(x: Tensor, y: Tensor) -> Tensor:
    _same_shape("add", x, y)
    return _result(x.data + y.data, [x, y], lambda g: (g, g))


def sub(x: Tensor, y: Tensor) -> Tensor:
    _same_shape("sub", x, y)
    return _result(x.data - y.data, [x, y], lambda g: (g, -g))


def mul(x: Tensor, y: Tensor) -> Tensor:
    _same_shape("mul", x, y)
    xd, yd = x.data, y.data
    return _result(xd * yd, [x, y], lambda g: (g * yd, g * xd))


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _result(x.data + c, [x], lambda g: (g,))


def scale(x: Tensor, c: float) -> Tensor:
    return _result(x.data * c, [x], lambda g: (g * c,))


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    """Sum over ``axis`` (all axes when None, giving a scalar)."""
    shape = x.shape
    out = np.sum(x.data, axis=axis)
    if axis is None:
        return _result(np.asarray(out).reshape(()), [x], lambda g: (np.broadcast_to(g, shape).copy(),))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axes), shape).copy(),)

    return _result(out, [x], backward)


def sq_error(x: Tensor, y: Tensor) -> Tensor:
    """Squared l2 error, summed over all elements."""
    _same_shape("sq_error", x, y)
    d = x.data - y.data
    return _result(np.asarray(np.dot(d.ravel(), d.ravel())).reshape(()), [x, y],
                   lambda g: (2.0 * g * d, -2.0 * g * d))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _result(x.data.reshape(shape), [x], lambda g: (g.reshape(old),))


def repeat_channels(x: Tensor, n: int) -> Tensor:
    """Broadcast a one-channel (N,1,H,W) map to (N,n,H,W)."""
    if x.data.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"repeat_channels expects (N,1,H,W), got {x.shape}")
    out = np.repeat(x.data, n, axis=1)
    return _result(out, [x], lambda g: (g.sum(axis=1, keepdims=True),))


def custom_unit(forward_fn: Callable, backward_fn: Callable, x: Tensor) -> Tensor:
    """Node whose forward is ``forward_fn(x)`` and whose local derivative is
    ``backward_fn(x)`` (elementwise), regardless of the true derivative of
    ``forward_fn``.  Used for straight-through estimators."""
    xd = x.data
    out = np.asarray(forward_fn(xd), dtype=DTYPE)
    if out.shape != xd.shape:
        raise ShapeError(f"custom_unit forward changed shape {xd.shape} -> {out.shape}")

    def backward(g):
        local = np.asarray(backward_fn(xd), dtype=DTYPE)
        if local.shape != xd.shape:
            raise ShapeError("custom_unit backward must be shape-preserving")
        return (g * local,)

    return _result(out, [x], backward)


# --------------------------------------------------------------------------
# dense layers


def matmul(x: Tensor, w: Tensor) -> Tensor:
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {x.shape} by {w.shape}")
    xd, wd = x.data, w.data
    return _result(xd @ wd, [x, w], lambda g: (g @ wd.T, xd.T @ g))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x (B,F) + b (F,), broadcast over rows."""
    if x.data.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_bias: {x.shape} + {b.shape}")
    return _result(x.data + b.data, [x, b], lambda g: (g, g.sum(axis=0)))


def bce_with_logits(z: Tensor, target: np.ndarray, weight: np.ndarray | None = None) -> Tensor:
    """Summed binary cross-entropy in bits, from logits.

    ``weight`` masks individual terms (0 drops a term entirely).
    """
    zd = z.data
    t = np.asarray(target, dtype=DTYPE).reshape(zd.shape)
    w = np.ones_like(zd) if weight is None else np.asarray(weight, dtype=DTYPE).reshape(zd.shape)
    # -log p(t) = softplus(z) - t*z, in nats
    nats = np.maximum(zd, 0.0) + np.log1p(np.exp(-np.abs(zd))) - t * zd
    inv_ln2 = 1.0 / np.log(2.0)
    loss = np.asarray(np.sum(w * nats) * inv_ln2).reshape(())
    e = np.exp(-np.abs(zd))
    s = np.where(zd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(loss, [z], lambda g: (g * w * (s - t) * inv_ln2,))


# --------------------------------------------------------------------------
# convolution and pixel rearrangement


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(xd: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """(N,C,H,W) -> (N*Ho*Wo, C*k*k) patch matrix."""
    N, C = xd.shape[:2]
    if k == 1 and stride == 1 and pad == 0:
        return xd.transpose(0, 2, 3, 1).reshape(-1, C)
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * k * k)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d cross-correlation with zero padding, NCHW layout."""
    xd, wd = x.data, weight.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {xd.shape}, {wd.shape}")
    N, C, H, W = xd.shape
    Cout, Cin, kh, kw = wd.shape
    if Cin != C:
        raise ShapeError(f"conv2d: input has {C} channels but weight expects {Cin} (weight {wd.shape})")
    if kh != kw:
        raise ShapeError(f"conv2d: non-square kernel {kh}x{kw}")
    if H + 2 * pad < kh or W + 2 * pad < kw:
        raise ShapeError(f"conv2d: input {H}x{W} with pad {pad} smaller than kernel {kh}")
    if bias is not None and bias.shape != (Cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({Cout},)")
    Ho = conv_output_size(H, kh, stride, pad)
    Wo = conv_output_size(W, kw, stride, pad)
    wmat = wd.reshape(Cout, -1)

    cols = _im2col(xd, kh, stride, pad)
    # channel-major product: for a batch of one the result is already NCHW
    out = wmat @ cols.T
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(Cout, N, Ho, Wo).transpose(1, 0, 2, 3)

    def backward(g):
        gmat_t = g.transpose(1, 0, 2, 3).reshape(Cout, -1)
        gw = (gmat_t @ cols).reshape(wd.shape)
        gb = gmat_t.sum(axis=1) if bias is not None else None
        gmat = gmat_t.T  # (N*Ho*Wo, Cout) view
        gx = None
        if x.requires_grad:
            if kh == 1 and stride == 1 and pad == 0:
                gx = (gmat @ wmat).reshape(N, H, W, C).transpose(0, 3, 1, 2)
            elif stride == 1 and 2 * pad <= kh - 1 and N * H * W >= 2048:
                # adjoint of a stride-1 conv is a full correlation with the
                # flipped, transposed kernel; cheaper than scattering when
                # the spatial extent is large
                wflip = wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(C, -1)
                gpad = kh - 1 - pad
                gx = (_im2col(g, kh, 1, gpad) @ wflip.T).reshape(N, H, W, C).transpose(0, 3, 1, 2)
            else:
                gcols = (gmat @ wmat).reshape(N, Ho, Wo, C, kh, kw).transpose(0, 3, 4, 5, 1, 2)
                gxp = np.zeros((N, C, H + 2 * pad, W + 2 * pad))
                for ky in range(kh):
                    for kx in range(kw):
                        gxp[:, :, ky:ky + stride * Ho:stride, kx:kx + stride * Wo:stride] += \
                            gcols[:, :, ky, kx]
                gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
        return gx, gw, gb

    inputs = [x, weight] + ([bias] if bias is not None else [])
    return _result(np.ascontiguousarray(out), inputs, backward)


def _d2s(a: np.ndarray, s: int) -> np.ndarray:
    N, C, H, W = a.shape
    c = C // (s * s)
    return a.reshape(N, c, s, s, H, W).transpose(0, 1, 4, 2, 5, 3).reshape(N, c, H * s, W * s)


def _s2d(a: np.ndarray, s: int) -> np.ndarray:
    N, c, Hs, Ws = a.shape
    H, W = Hs // s, Ws // s
    return a.reshape(N, c, H, s, W, s).transpose(0, 1, 3, 5, 2, 4).reshape(N, c * s * s, H, W)


def depth_to_space(x: Tensor, s: int) -> Tensor:
    """Move channel blocks into space.

    Output channel ``c`` at ``(s*y + dy, s*x + dx)`` is input channel
    ``c*s*s + dy*s + dx`` at ``(y, x)``.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"depth_to_space expects NCHW, got {x.shape}")
    if x.shape[1] % (s * s):
        raise ShapeError(f"depth_to_space: {x.shape[1]} channels not divisible by {s}^2")
    return _result(_d2s(x.data, s), [x], lambda g: (_s2d(g, s),))


def space_to_depth(x: Tensor, s: int) -> Tensor:
    """Inverse permutation of :func:`depth_to_space`."""
    if x.data.ndim != 4 or x.shape[2] % s or x.shape[3] % s:
        raise ShapeError(f"space_to_depth: spatial dims of {x.shape} not divisible by {s}")
    return _result(_s2d(x.data, s), [x], lambda g: (_d2s(g, s),))
