"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable operation records a node (inputs, output, local
backward rule) stamped with a monotonically increasing sequence number.
Sorting reachable nodes by that number yields a valid topological order,
so :func:`backward` is a single deterministic sweep over the tape.
"""

from __future__ import annotations

import contextlib
import contextvars
import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np

_DTYPE: contextvars.ContextVar[np.dtype] = contextvars.ContextVar("rcdpt_dtype", default=np.dtype(np.float32))
_DEBUG: contextvars.ContextVar[bool] = contextvars.ContextVar("rcdpt_debug", default=False)
_GRAD_ENABLED: contextvars.ContextVar[bool] = contextvars.ContextVar("rcdpt_grad", default=True)
_SEQ = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class GradientError(RuntimeError):
    """Raised when backward cannot proceed."""


def default_dtype() -> np.dtype:
    return _DTYPE.get()


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the working float type (``"float32"`` or ``"float64"``)."""
    token = _DTYPE.set(np.dtype(dtype))
    try:
        yield
    finally:
        _DTYPE.reset(token)


@contextlib.contextmanager
def debug_mode(enabled: bool = True):
    """Check every forward result for NaN/Inf and flag disconnected leaves."""
    token = _DEBUG.set(enabled)
    try:
        yield
    finally:
        _DEBUG.reset(token)


@contextlib.contextmanager
def no_grad():
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


class Node:
    """One tape entry: ``out = op(*inputs)`` plus the rule mapping dout to dinputs."""

    __slots__ = ("seq", "op", "inputs", "backward_fn")

    def __init__(self, op: str, inputs: tuple["Tensor", ...], backward_fn: Callable):
        self.seq = next(_SEQ)
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tensor:
    """n-dimensional float array with optional gradient and tape linkage."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        dtype = np.dtype(dtype) if dtype is not None else default_dtype()
        self.data = np.ascontiguousarray(np.asarray(data, dtype=dtype))
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None
        self._consumed = False

    # basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_scalar(self.shape)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        backward(self)


def _raise_scalar(shape):
    raise ShapeError(f"item() needs a single-element tensor, got shape {shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(name: str, arr: np.ndarray) -> None:
    if _DEBUG.get() and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{name} produced non-finite values")


def _make(name: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap a forward result and, when needed, record it on the tape."""
    _check_finite(name, data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._node = None
    out._consumed = False
    needs = _GRAD_ENABLED.get() and any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    if needs:
        out._node = Node(name, tuple(inputs), backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_or_raise("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_or_raise("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_or_raise("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make("mul", a.data * b.data, (a, b), bw)


def _broadcast_or_raise(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make("exp", y, (x,), lambda g: (g * y,))


def abs(x: Tensor) -> Tensor:  # noqa: A001
    return _make("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v ** 3)
    t = np.tanh(inner)
    y = 0.5 * v * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t ** 2) * dinner),)

    return _make("gelu", y.astype(v.dtype), (x,), bw)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError(f"softmax needs a non-empty last axis, got shape {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make("softmax", y, (x,), bw)


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, x.ndim)
    y = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make("sum", np.asarray(y, dtype=x.dtype), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    y = x.data.sum(axis=axes, keepdims=keepdims) / count

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _make("mean", np.asarray(y, dtype=x.dtype), (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {x.shape} as {shape}") from None
    return _make("reshape", y, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(a % x.ndim for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: {axes} is not a permutation for rank {x.ndim}")
    inv = tuple(np.argsort(axes))
    y = np.ascontiguousarray(x.data.transpose(axes))
    return _make("transpose", y, (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat along axis {axis}: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    y = np.concatenate([t.data for t in tensors], axis=ax)

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=ax))

    return _make("concat", y, tensors, bw)


def index(x: Tensor, key) -> Tensor:
    """Basic (slice/integer) indexing; advanced indexing is rejected."""
    keys = key if isinstance(key, tuple) else (key,)
    if any(isinstance(k, (list, np.ndarray, Tensor)) for k in keys):
        raise TypeError("index supports basic slicing only")
    y = np.ascontiguousarray(x.data[key])

    def bw(g):
        out = np.zeros_like(x.data)
        out[key] = g
        return (out,)

    return _make("index", y, (x,), bw)


def flip(x: Tensor, axis: int) -> Tensor:
    y = np.ascontiguousarray(np.flip(x.data, axis=axis))
    return _make("flip", y, (x,), lambda g: (np.ascontiguousarray(np.flip(g, axis=axis)),))


# ---------------------------------------------------------------------------
# linear algebra and normalisation
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes of ``a`` may batch."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree for shapes {a.shape} and {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions disagree for shapes {a.shape} and {b.shape}")
    y = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            k, n = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _make("matmul", y, (a, b), bw)


def layernorm(x: Tensor, weight: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-6) -> Tensor:
    """Normalise over the last axis, then apply an optional affine transform."""
    v = x.data
    mu = v.mean(axis=-1, keepdims=True)
    xc = v - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    inputs = [x]
    y = xhat
    if weight is not None:
        if weight.shape != (v.shape[-1],):
            raise ShapeError(f"layernorm weight shape {weight.shape} != ({v.shape[-1]},)")
        y = y * weight.data
        inputs.append(weight)
    if bias is not None:
        y = y + bias.data
        inputs.append(bias)

    def bw(g):
        n = v.shape[-1]
        gx_hat = g * weight.data if weight is not None else g
        gx = rstd * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                     - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True) / n)
        grads = [gx]
        lead = g.reshape(-1, n)
        if weight is not None:
            grads.append((lead * xhat.reshape(-1, n)).sum(axis=0))
        if bias is not None:
            grads.append(lead.sum(axis=0))
        return tuple(grads)

    return _make("layernorm", y.astype(v.dtype), inputs, bw)


# ---------------------------------------------------------------------------
# spatial operators; feature maps are channels-last, [B, H, W, C] or [H, W, C]
# ---------------------------------------------------------------------------

def _batched(x: Tensor):
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected a [H,W,C] or [B,H,W,C] map, got shape {x.shape}")
    return x, False


def _unbatch(y: Tensor, squeezed: bool) -> Tensor:
    return reshape(y, y.shape[1:]) if squeezed else y


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``weight`` has shape [kh, kw, C_in, C_out].
    """
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: invalid stride={stride} / padding={padding}")
    xb, squeezed = _batched(x)
    kh, kw, cin, cout = weight.shape
    B, H, W, C = xb.shape
    if C != cin:
        raise ShapeError(f"conv2d: input channels {C} != weight channels {cin} (weight {weight.shape})")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if Hp < kh or Wp < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho, Wo = (Hp - kh) // stride + 1, (Wp - kw) // stride + 1
    xp = np.pad(xb.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else xb.data
    cols = np.empty((B, Ho, Wo, kh, kw, C), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride, :]
    cols2 = cols.reshape(B * Ho * Wo, kh * kw * C)
    w2 = weight.data.reshape(kh * kw * C, cout)
    y = (cols2 @ w2).reshape(B, Ho, Wo, cout)
    inputs = [xb, weight]
    if bias is not None:
        y = y + bias.data
        inputs.append(bias)

    def bw(g):
        g2 = g.reshape(B * Ho * Wo, cout)
        gw = (cols2.T @ g2).reshape(weight.shape)
        gcols = (g2 @ w2.T).reshape(B, Ho, Wo, kh, kw, C)
        gxp = np.zeros((B, Hp, Wp, C), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, padding:padding + H, padding:padding + W, :] if padding else gxp
        grads = [np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _unbatch(_make("conv2d", y, inputs, bw), squeezed)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Transposed convolution (no padding); output size (H-1)*stride + k.

    ``weight`` has shape [kh, kw, C_in, C_out]; each input pixel scatters
    ``x @ weight[i, j]`` to output position ``(stride*h + i, stride*w + j)``.
    """
    if stride < 1:
        raise ValueError(f"conv_transpose2d: invalid stride={stride}")
    xb, squeezed = _batched(x)
    kh, kw, cin, cout = weight.shape
    B, H, W, C = xb.shape
    if C != cin:
        raise ShapeError(f"conv_transpose2d: input channels {C} != weight channels {cin}")
    Ho, Wo = (H - 1) * stride + kh, (W - 1) * stride + kw
    x2 = xb.data.reshape(B * H * W, C)
    # [B*H*W, kh*kw*cout]
    proj = (x2 @ weight.data.transpose(2, 0, 1, 3).reshape(C, kh * kw * cout)).reshape(B, H, W, kh, kw, cout)
    y = np.zeros((B, Ho, Wo, cout), dtype=xb.dtype)
    for i in range(kh):
        for j in range(kw):
            y[:, i:i + stride * (H - 1) + 1:stride, j:j + stride * (W - 1) + 1:stride, :] += proj[:, :, :, i, j, :]
    inputs = [xb, weight]
    if bias is not None:
        y = y + bias.data
        inputs.append(bias)

    def bw(g):
        gproj = np.empty((B, H, W, kh, kw, cout), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gproj[:, :, :, i, j, :] = g[:, i:i + stride * (H - 1) + 1:stride, j:j + stride * (W - 1) + 1:stride, :]
        gp2 = gproj.reshape(B * H * W, kh * kw * cout)
        wmat = weight.data.transpose(2, 0, 1, 3).reshape(C, kh * kw * cout)
        gx = (gp2 @ wmat.T).reshape(B, H, W, C)
        gw = (x2.T @ gp2).reshape(C, kh, kw, cout).transpose(1, 2, 0, 3)
        grads = [gx, np.ascontiguousarray(gw)]
        if bias is not None:
            grads.append(g.reshape(-1, cout).sum(axis=0))
        return tuple(grads)

    return _unbatch(_make("conv_transpose2d", y, inputs, bw), squeezed)


def _interp_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Linear interpolation weights with aligned corners, shape [n_out, n_in]."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1.0
        return m.astype(dtype)
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    m[np.arange(n_out), lo] = 1.0 - frac
    m[np.arange(n_out), lo + 1] += frac
    return m.astype(dtype)


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    """Bilinear upsampling by an integer factor (corner-aligned)."""
    if factor < 1 or int(factor) != factor:
        raise ValueError(f"upsample_bilinear: factor must be a positive integer, got {factor}")
    factor = int(factor)
    xb, squeezed = _batched(x)
    B, H, W, C = xb.shape
    Ah = _interp_matrix(H, H * factor, xb.dtype)
    Aw = _interp_matrix(W, W * factor, xb.dtype)
    y = np.einsum("ih,bhwc->biwc", Ah, xb.data, optimize=True)
    y = np.einsum("jw,biwc->bijc", Aw, y, optimize=True)

    def bw(g):
        t = np.einsum("jw,bijc->biwc", Aw, g, optimize=True)
        return (np.einsum("ih,biwc->bhwc", Ah, t, optimize=True),)

    return _unbatch(_make("upsample_bilinear", np.ascontiguousarray(y), (xb,), bw), squeezed)


def spatial_gradient(x: Tensor, axis: int) -> Tensor:
    """One-sided forward difference along ``axis``; the last slice is zero."""
    ax = axis % x.ndim
    n = x.shape[ax]
    y = np.zeros_like(x.data)
    hi = [slice(None)] * x.ndim
    lo = [slice(None)] * x.ndim
    hi[ax] = slice(1, n)
    lo[ax] = slice(0, n - 1)
    hi, lo = tuple(hi), tuple(lo)
    y[lo] = x.data[hi] - x.data[lo]

    def bw(g):
        gx = np.zeros_like(g)
        gx[hi] += g[lo]
        gx[lo] -= g[lo]
        return (gx,)

    return _make("spatial_gradient", y, (x,), bw)


# ---------------------------------------------------------------------------
# reverse sweep
# ---------------------------------------------------------------------------

def backward(loss: Tensor, grad: np.ndarray | None = None, leaves: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf.

    The recorded graph is released afterwards.
    """
    if grad is None:
        if loss.size != 1:
            raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if loss._node is None:
        if loss._consumed:
            raise GradientError("the graph behind this loss was already consumed by an earlier backward()")
        if loss.requires_grad:
            loss.grad = grad.copy() if loss.grad is None else loss.grad + grad
            return
        raise GradientError("loss is not connected to any tensor that requires grad")

    nodes: dict[int, Node] = {}
    owners: dict[int, Tensor] = {}
    stack = [loss]
    seen: set[int] = set()
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._node is not None:
            nodes[t._node.seq] = t._node
            owners[t._node.seq] = t
            stack.extend(t._node.inputs)

    grads: dict[int, np.ndarray] = {id(loss): grad}
    for seq in sorted(nodes, reverse=True):
        node = nodes[seq]
        out = owners[seq]
        g = grads.pop(id(out), None)
        if g is None:
            continue
        local = node.backward_fn(g)
        for inp, gi in zip(node.inputs, local):
            if not inp.requires_grad or gi is None:
                continue
            if inp._node is None:
                inp.grad = gi.astype(inp.dtype, copy=True) if inp.grad is None else inp.grad + gi
            else:
                prev = grads.get(id(inp))
                grads[id(inp)] = gi if prev is None else prev + gi
        out._node = None
        out._consumed = True

    if _DEBUG.get() and leaves is not None:
        missing = [t for t in leaves if t.requires_grad and t.grad is None]
        if missing:
            raise GradientError(f"{len(missing)} leaves are disconnected from the loss")
    if leaves is not None:
        for t in leaves:
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)


def grad_check(f: Callable[..., Tensor], x: Tensor | Sequence[Tensor], eps: float = 1e-4,
               indices: dict[int, np.ndarray] | None = None) -> float:
    """Largest element-wise relative error between backward() and central differences.

    ``f`` maps the tensor(s) in ``x`` to a scalar tensor. Relative error uses
    ``max(|analytic|, |numeric|, 1e-8)`` as denominator. ``indices`` optionally
    restricts the numeric probe to given flat positions per input.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.requires_grad = True
        t.grad = None
    out = f(*xs)
    if out.size != 1:
        raise GradientError(f"grad_check needs a scalar function, got output shape {out.shape}")
    backward(out, leaves=xs)
    analytic = [t.grad.copy() for t in xs]

    worst = 0.0
    with no_grad():
        for k, t in enumerate(xs):
            flat = t.data.reshape(-1)
            positions = range(flat.size) if indices is None or k not in indices else indices[k]
            for i in positions:
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(f(*xs).data.reshape(-1)[0])
                flat[i] = orig - eps
                fm = float(f(*xs).data.reshape(-1)[0])
                flat[i] = orig
                num = (fp - fm) / (2 * eps)
                ana = float(analytic[k].reshape(-1)[i])
                err = _pyabs(ana - num)
                denom = max(_pyabs(ana), _pyabs(num), 1e-8)
                worst = max(worst, err / denom)
    return worst


def _pyabs(v: float) -> float:
    return v if v >= 0 else -v
