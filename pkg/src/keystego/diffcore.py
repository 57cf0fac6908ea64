"""Small reverse-mode autodiff over fixed-shape numpy arrays.

Only the operations the invertible blocks, the training loop and the attack
surrogate need are provided: ``conv2d``, ``add``, ``sub``, ``mul``, ``scale``,
``exp``, ``sigmoid``, ``leaky_relu``, ``square``, ``sum``, ``mean``, channel
``slice_channels``/``concat_channels``, ``reshape``, plus two escape hatches for
fixed linear maps (``linear_map``) and straight-through quantisers
(``straight_through``).

Recording is opt-in: operations only build a graph inside ``with recording():``.
Outside that block every op is a plain numpy computation, which keeps
embed/extract cheap.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, ShapeError

DTYPE = np.float32

_RECORDING = False


@contextlib.contextmanager
def recording():
    """Record operations for a later :func:`backward` call."""
    global _RECORDING
    prev = _RECORDING
    _RECORDING = True
    try:
        yield
    finally:
        _RECORDING = prev


def is_recording() -> bool:
    return _RECORDING


class Tensor:
    """Array value with an optional gradient slot and graph back-pointers.

    Data is stored as float32 unless another ``dtype`` is requested (gradient
    checking runs in float64); ``dtype=None`` keeps the array's own dtype.
    Tensors are treated as immutable.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=DTYPE):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finite(data, op):
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op} produced non-finite values")
    return data


def _result(data, op: str, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(_finite(np.asarray(data), op), dtype=None)
    out._op = op
    if _RECORDING and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ------------------------------------------------------------------ elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _result(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, "mul", (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python scalar constant."""
    return _result(a.data * c, "scale", (a,), lambda g: (g * c,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _result(y, "exp", (a,), lambda g: (g * y,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return _result(y, "sigmoid", (a,), lambda g: (g * y * (1.0 - y),))


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    x = a.data
    slope = np.where(x > 0, 1.0, alpha).astype(x.dtype, copy=False)
    return _result(x * slope, "leaky_relu", (a,), lambda g: (g * slope,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _result(x * x, "square", (a,), lambda g: (2.0 * g * x,))


_UNARY = {"exp": exp, "sigmoid": sigmoid, "square": square}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a: Tensor, b: Tensor | None = None, alpha: float = 0.2) -> Tensor:
    """Dispatch by name; ``leaky_relu`` takes ``alpha``."""
    if op in _BINARY:
        if b is None:
            raise ContractError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    if op == "leaky_relu":
        return leaky_relu(a, alpha)
    if op in _UNARY:
        return _UNARY[op](a)
    raise ContractError(f"unknown elementwise op {op!r}")


# ------------------------------------------------------------------ reductions

def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape, dtype = a.shape, a.data.dtype
    return _result(np.asarray(a.data.sum(dtype=np.float64), dtype=dtype), "sum", (a,),
                   lambda g: (np.broadcast_to(g, shape).astype(dtype),))


def mean(a: Tensor) -> Tensor:
    shape, dtype, n = a.shape, a.data.dtype, a.size
    return _result(np.asarray(a.data.mean(dtype=np.float64), dtype=dtype), "mean", (a,),
                   lambda g: (np.broadcast_to(g / n, shape).astype(dtype),))


# ------------------------------------------------------------------ structure

def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        y = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _result(y, "reshape", (a,), lambda g: (g.reshape(old),))


def slice_channels(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 4 or not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"bad channel slice [{start}:{stop}] of {a.shape}")
    shape = a.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return _result(a.data[:, start:stop], "slice_channels", (a,), back)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    ref = parts[0].shape
    for p in parts:
        if p.data.ndim != 4 or p.shape[0] != ref[0] or p.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels: {p.shape} incompatible with {ref}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def back(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.data for p in parts], axis=1), "concat_channels", tuple(parts), back)


def linear_map(a: Tensor, fn: Callable, adjoint: Callable, name: str = "linear_map") -> Tensor:
    """Apply a fixed linear map ``fn``; ``adjoint`` is its transpose, used for the gradient."""
    return _result(fn(a.data), name, (a,), lambda g: (adjoint(g),))


def straight_through(a: Tensor, fn: Callable, name: str = "straight_through") -> Tensor:
    """Forward ``fn(a)``, backward identity."""
    return _result(fn(a.data), name, (a,), lambda g: (g,))


# ------------------------------------------------------------------ convolution

def conv2d(x: Tensor, weight: Tensor, bias: Tensor, padding: int) -> Tensor:
    """Stride-1 2-D cross-correlation with zero padding."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input and weight, got {x.shape} and {weight.shape}")
    o, c, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError(f"conv2d: square kernels only, got {kh}x{kw}")
    if x.shape[1] != c:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, weight expects {c}")
    if bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)")
    k, p = kh, padding
    b, _, h, w = x.shape
    xd = x.data
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    ho, wo = xp.shape[2] - k + 1, xp.shape[3] - k + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {xp.shape[2:]}")
    cols = kernels.im2col(np.ascontiguousarray(xp), k)
    wmat = weight.data.reshape(o, c * k * k)
    out = (cols @ wmat.T + bias.data).reshape(b, ho, wo, o).transpose(0, 3, 1, 2)
    padded_shape = xp.shape

    def back(g):
        gflat = g.transpose(0, 2, 3, 1).reshape(b * ho * wo, o)
        gw = (gflat.T @ cols).reshape(weight.shape)
        gb = gflat.sum(axis=0)
        gx = kernels.col2im(gflat @ wmat, padded_shape, k)
        if p:
            gx = gx[:, :, p:-p, p:-p]
        return (gx, gw, gb)

    return _result(np.ascontiguousarray(out), "conv2d", (x, weight, bias), back)


# ------------------------------------------------------------------ backward

def _topo(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: "ParamStore | None" = None) -> None:
    """Accumulate d(loss)/d(leaf) into the ``grad`` slot of every recorded leaf.

    ``params`` is optional; when given, every parameter without a gradient path
    still ends up with a zero gradient slot.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        for t in params.values():
            if t.grad is None:
                t.zero_grad()
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.data.dtype)
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


class ParamStore(dict):
    """Named trainable tensors plus the optimiser's step counter and moments."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.step = 0
        self.moments: dict = {}

    def add(self, name: str, value) -> Tensor:
        if name in self:
            raise ContractError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=DTYPE), requires_grad=True)
        self[name] = t
        return t

    def zero_grad(self):
        for t in self.values():
            t.zero_grad()

    def num_parameters(self) -> int:
        return int(np.sum([t.size for t in self.values()]))

    def grad_norm(self) -> float:
        return float(np.sqrt(np.sum([np.sum(t.grad.astype(np.float64) ** 2)
                                     for t in self.values() if t.grad is not None])))


# ------------------------------------------------------------------ gradient check

def grad_check(f: Callable[[Tensor], Tensor], point, eps: float = 1e-3) -> float:
    """Max relative error between the analytic gradient of scalar ``f`` and central differences.

    Runs in float64: ``point`` is promoted before both the recorded pass and the
    perturbed evaluations. Error per entry is
    ``|analytic - numeric| / (|numeric| + 1e-8)``.
    """
    x0 = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    with recording():
        p = Tensor(x0.copy(), requires_grad=True, dtype=np.float64)
        out = f(p)
        backward(out)
    analytic = p.grad if p.grad is not None else np.zeros_like(x0)

    numeric = np.empty_like(x0)
    flat = x0.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(Tensor(x0.copy(), dtype=np.float64)).data)
        flat[i] = orig - eps
        fm = float(f(Tensor(x0.copy(), dtype=np.float64)).data)
        flat[i] = orig
        nflat[i] = (fp - fm) / (2.0 * eps)
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)))

