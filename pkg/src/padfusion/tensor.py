"""Dense float64 tensors with a small reverse-mode tape.

Every op works on the trailing axes and lets arbitrary leading (batch) axes
ride along, so the fusion modules can be written once for ``[C, H, W]`` and
reused on ``[B, C, H, W]``.  There is no implicit broadcasting: callers
expand explicitly with :func:`expand`.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "NonFiniteError",
    "GraphError",
    "Tensor",
    "Parameter",
    "Graph",
    "no_grad",
    "apply_op",
    "backward",
    "conv1x1",
    "activation",
    "sigmoid",
    "leaky_relu",
    "binary",
    "concat",
    "concat_channels",
    "expand",
    "mlp2",
    "tsum",
    "tmean",
    "square",
    "cos",
    "sin",
    "hypot",
    "atan2",
    "roll",
    "stack",
    "glorot_uniform",
    "gradcheck",
    "track_nonsmooth",
    "LEAKY_SLOPE",
]

LEAKY_SLOPE = 0.01


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class GraphError(RuntimeError):
    """Misuse of the tape (non-scalar root, reused graph, mixed graphs)."""


_active_graph: contextvars.ContextVar["Graph | None"] = contextvars.ContextVar(
    "padfusion_active_graph", default=None
)
_recording: contextvars.ContextVar[bool] = contextvars.ContextVar(
    "padfusion_recording", default=True
)


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording them, even for tracked inputs."""
    token = _recording.set(False)
    try:
        yield
    finally:
        _recording.reset(token)


_nonsmooth: contextvars.ContextVar["dict | None"] = contextvars.ContextVar("nonsmooth", default=None)


@contextlib.contextmanager
def track_nonsmooth():
    """Record, per piecewise op, the smallest distance of its inputs to a
    point where the op is not smooth (kink, branch cut, polar origin)."""
    margins: dict[str, float] = {}
    token = _nonsmooth.set(margins)
    try:
        yield margins
    finally:
        _nonsmooth.reset(token)


def _note_margin(op: str, values: np.ndarray) -> None:
    margins = _nonsmooth.get()
    if margins is not None and values.size:
        margins[op] = min(margins.get(op, math.inf), float(values.min()))


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {where}")


class Tensor:
    """Immutable float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_graph", "_index")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"all dimensions must be positive, got {arr.shape}")
        _check_finite(arr, "tensor construction")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._graph: Graph | None = None
        self._index = -1

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        out = object.__new__(Tensor)
        arr.setflags(write=False)
        out.data = arr
        out.requires_grad = False
        out.grad = None
        out._graph = None
        out._index = -1
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._graph is None

    @property
    def graph(self) -> "Graph | None":
        return self._graph

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Arithmetic sugar.  Tensor-tensor operands must match exactly; python
    # scalars act as constants.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return binary("add", self, other)
        return _affine(self, 1.0, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return binary("sub", self, other)
        return _affine(self, 1.0, -float(other))

    def __rsub__(self, other):
        return _affine(self, -1.0, float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return binary("hadamard", self, other)
        return _affine(self, float(other), 0.0)

    __rmul__ = __mul__

    def __truediv__(self, other: float):
        return _affine(self, 1.0 / float(other), 0.0)

    def __neg__(self):
        return _affine(self, -1.0, 0.0)

    def __getitem__(self, key):
        return _getitem(self, key)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tmean(self)


class Parameter(Tensor):
    """A named, trainable leaf tensor.

    The optimizer swaps ``data`` for a fresh array on each step; the array
    itself is never written in place.
    """

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    @property
    def value(self) -> Tensor:
        return Tensor._wrap(self.data)

    @property
    def gradient(self) -> np.ndarray:
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def assign(self, arr: np.ndarray) -> None:
        arr = np.array(arr, dtype=np.float64)
        if arr.shape != self.data.shape:
            raise ShapeError(f"{self.name}: cannot assign {arr.shape} to {self.data.shape}")
        _check_finite(arr, f"assignment to {self.name}")
        arr.setflags(write=False)
        self.data = arr

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class _Node:
    __slots__ = ("op", "inputs", "vjp")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], vjp: Callable):
        self.op = op
        self.inputs = inputs
        self.vjp = vjp


class Graph:
    """Append-only op record.  Node order is already topological."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False
        self._tokens: list[contextvars.Token] = []

    def __enter__(self) -> "Graph":
        self._tokens.append(_active_graph.set(self))
        return self

    def __exit__(self, *exc) -> None:
        _active_graph.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: tuple[Tensor, ...], vjp: Callable) -> int:
        self.nodes.append(_Node(op, inputs, vjp))
        return len(self.nodes) - 1

    def reset(self) -> None:
        """Allow another backward pass over the recorded nodes."""
        self.consumed = False

    def backward(self, root: Tensor) -> dict[Tensor, np.ndarray]:
        if root._graph is not self:
            raise GraphError("root tensor was not recorded on this graph")
        if root.size != 1:
            raise GraphError(f"backward needs a scalar root, got shape {root.shape}")
        if self.consumed:
            raise GraphError("graph already consumed by a backward pass; call reset() first")

        pending: dict[int, np.ndarray] = {root._index: np.ones_like(root.data)}
        leaves: dict[int, tuple[Tensor, np.ndarray]] = {}
        seen_leaves: dict[int, Tensor] = {}
        for idx in range(root._index, -1, -1):
            node = self.nodes[idx]
            for t in node.inputs:
                if t._graph is None and t.requires_grad:
                    seen_leaves.setdefault(id(t), t)
            g = pending.pop(idx, None)
            if g is None:
                continue
            grads = node.vjp(g)
            for t, gt in zip(node.inputs, grads):
                if gt is None:
                    continue
                if t._graph is self:
                    prev = pending.get(t._index)
                    pending[t._index] = gt if prev is None else prev + gt
                elif t._graph is None and t.requires_grad:
                    prev = leaves.get(id(t))
                    leaves[id(t)] = (t, gt if prev is None else prev[1] + gt)
        self.consumed = True

        out: dict[Tensor, np.ndarray] = {}
        for key, t in seen_leaves.items():
            g = leaves[key][1] if key in leaves else np.zeros_like(t.data)
            g = np.asarray(g, dtype=np.float64).reshape(t.shape)
            t.grad = g
            out[t] = g
        return out


_AMBIENT: list[Graph] = []


def _ambient_graph() -> Graph:
    # Ops recorded outside any ``with Graph()`` block share one graph until
    # it is consumed by a backward pass.
    if not _AMBIENT or _AMBIENT[0].consumed:
        _AMBIENT[:] = [Graph()]
    return _AMBIENT[0]


def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Populate ``.grad`` on every tracked leaf reachable from ``root``."""
    if root._graph is None:
        raise GraphError("root has no recorded history")
    return root._graph.backward(root)


def apply_op(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap ``data`` as the output of ``op`` and record it when needed.

    ``vjp(g)`` receives the upstream gradient (same shape as ``data``) and
    returns one gradient (or None) per input.  Extension modules use this to
    add ops such as strided convolutions or FFTs to the tape.
    """
    data = np.asarray(data, dtype=np.float64)
    _check_finite(data, op)
    out = Tensor._wrap(data)
    if not _recording.get():
        return out
    tracked = [t for t in inputs if t.requires_grad or t._graph is not None]
    if not tracked:
        return out
    graph = None
    for t in tracked:
        if t._graph is not None:
            if graph is not None and t._graph is not graph:
                raise GraphError(f"{op}: inputs come from different graphs")
            graph = t._graph
    if graph is None:
        graph = _active_graph.get()
        if graph is None:
            graph = _ambient_graph()
    out._graph = graph
    out._index = graph.record(op, tuple(inputs), vjp)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise


def _affine(x: Tensor, scale: float, offset: float) -> Tensor:
    return apply_op("affine", x.data * scale + offset, (x,), lambda g: (g * scale,))


def binary(kind: str, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise ``add``, ``sub`` or ``hadamard`` of equal-shape tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(kind, a, b)
    if kind == "add":
        return apply_op("add", a.data + b.data, (a, b), lambda g: (g, g))
    if kind == "sub":
        return apply_op("sub", a.data - b.data, (a, b), lambda g: (g, -g))
    if kind == "hadamard":
        ad, bd = a.data, b.data
        return apply_op("hadamard", ad * bd, (a, b), lambda g: (g * bd, g * ad))
    raise ValueError(f"unknown binary op {kind!r}")


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return apply_op("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
    _note_margin("leaky_relu", np.abs(x.data))
    d = np.where(x.data >= 0.0, 1.0, slope)
    return apply_op("leaky_relu", x.data * d, (x,), lambda g: (g * d,))


def activation(kind: str, x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    raise ValueError(f"unknown activation {kind!r}")


def square(x: Tensor) -> Tensor:
    xd = x.data
    return apply_op("square", xd * xd, (x,), lambda g: (2.0 * g * xd,))


def cos(x: Tensor) -> Tensor:
    xd = x.data
    return apply_op("cos", np.cos(xd), (x,), lambda g: (-g * np.sin(xd),))


def sin(x: Tensor) -> Tensor:
    xd = x.data
    return apply_op("sin", np.sin(xd), (x,), lambda g: (g * np.cos(xd),))


def hypot(a: Tensor, b: Tensor, floor: float = 1e-12) -> Tensor:
    """sqrt(a^2 + b^2); gradient is zeroed where the result is below ``floor``."""
    _same_shape("hypot", a, b)
    r = np.hypot(a.data, b.data)
    _note_margin("hypot", r)
    safe = r >= floor
    inv = np.where(safe, 1.0 / np.where(safe, r, 1.0), 0.0)
    ca, cb = a.data * inv, b.data * inv
    return apply_op("hypot", r, (a, b), lambda g: (g * ca, g * cb))


def atan2(y: Tensor, x: Tensor, floor: float = 1e-12) -> Tensor:
    """Angle of ``x + iy`` in ``[-pi, pi)``; gradient is zeroed below ``floor``."""
    _same_shape("atan2", y, x)
    ang = np.arctan2(y.data, x.data)
    ang = np.where(ang >= math.pi, -math.pi, ang)
    # the cut is the negative real axis; exact zeros (self-conjugate bins) stay put
    _note_margin("atan2", np.abs(y.data[(x.data < 0) & (y.data != 0)]))
    r2 = y.data * y.data + x.data * x.data
    safe = np.sqrt(r2) >= floor
    inv = np.where(safe, 1.0 / np.where(safe, r2, 1.0), 0.0)
    cy, cx = x.data * inv, -y.data * inv
    return apply_op("atan2", ang, (y, x), lambda g: (g * cy, g * cx))


# ---------------------------------------------------------------------------
# structural


def tsum(x: Tensor) -> Tensor:
    shape = x.shape
    return apply_op("sum", np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape),))


def tmean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return apply_op(
        "mean", np.array(x.data.sum() / n), (x,), lambda g: (np.broadcast_to(g / n, shape),)
    )


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Materialize numpy-style broadcasting of ``x`` to ``shape``."""
    shape = tuple(shape)
    src = x.shape
    try:
        data = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"expand: cannot expand {src} to {shape}") from None
    lead = len(shape) - len(src)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, d in enumerate(src) if d == 1 and shape[lead + i] != 1
    )

    def vjp(g):
        return (g.sum(axis=axes, keepdims=True).reshape(src) if axes else g,)

    return apply_op("expand", data, (x,), vjp)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    nd = len(ref)
    ax = axis % nd
    for t in tensors[1:]:
        if len(t.shape) != nd or any(
            t.shape[i] != ref[i] for i in range(nd) if i != ax
        ):
            raise ShapeError(
                f"concat: shapes {ref} and {t.shape} differ outside axis {axis}"
            )
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    data = np.concatenate([t.data for t in tensors], axis=ax)

    def vjp(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * nd
            idx[ax] = slice(int(lo), int(hi))
            out.append(g[tuple(idx)])
        return tuple(out)

    return apply_op("concat", data, tuple(tensors), vjp)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack along the channel axis (third from the end)."""
    if a.ndim < 3 or b.ndim < 3 or a.shape[:-3] != b.shape[:-3] or a.shape[-2:] != b.shape[-2:]:
        raise ShapeError(f"concat_channels: spatial/batch mismatch {a.shape} vs {b.shape}")
    return concat([a, b], axis=-3)


def stack(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    for t in tensors[1:]:
        _same_shape("stack", tensors[0], t)
    data = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return apply_op("stack", data, tuple(tensors), vjp)


def roll(x: Tensor, shift: int, axis: int) -> Tensor:
    return apply_op(
        "roll", np.roll(x.data, shift, axis=axis), (x,), lambda g: (np.roll(g, -shift, axis=axis),)
    )


def _getitem(x: Tensor, key) -> Tensor:
    data = np.array(x.data[key], dtype=np.float64)
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return (full,)

    return apply_op("getitem", data, (x,), vjp)


# ---------------------------------------------------------------------------
# layers


def conv1x1(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Pointwise channel mixing of ``x[..., C_in, H, W]`` by ``weight[C_out, C_in]``."""
    if x.ndim < 3 or weight.ndim != 2 or weight.shape[1] != x.shape[-3]:
        raise ShapeError(f"conv1x1: weight {weight.shape} incompatible with input {x.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv1x1: bias {bias.shape} does not match weight {weight.shape}")
    cin, h, w = x.shape[-3:]
    lead = x.shape[:-3]
    cout = weight.shape[0]
    xr = x.data.reshape(*lead, cin, h * w)
    wd = weight.data
    out = np.matmul(wd, xr)
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(*lead, cout, h, w)
    lead_axes = tuple(range(len(lead)))

    def vjp(g):
        gr = g.reshape(*lead, cout, h * w)
        gx = np.matmul(wd.T, gr).reshape(x.shape)
        gw = np.matmul(gr, np.swapaxes(xr, -1, -2))
        if lead_axes:
            gw = gw.sum(axis=lead_axes)
        if bias is None:
            return gx, gw
        gb = gr.sum(axis=lead_axes + (len(lead) + 1,)) if lead_axes else gr.sum(axis=-1)
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return apply_op("conv1x1", out, inputs, vjp)


def mlp2(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    """Position-wise two-layer perceptron with a leaky-ReLU hidden layer."""
    if w1.shape[0] < 1:
        raise ShapeError("mlp2: hidden width must be at least 1")
    return conv1x1(leaky_relu(conv1x1(x, w1, b1), slope), w2, b2)


def glorot_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=tuple(shape))


# ---------------------------------------------------------------------------
# gradient checking


def gradcheck(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Largest relative error between backward and central differences.

    ``f(*inputs)`` must return a scalar tensor.  The error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.  With
    ``max_coords`` set, a seeded random subset of at most that many
    coordinates per input is checked.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step h must lie in [1e-7, 1e-3], got {h}")
    inputs = list(inputs)
    saved_flags = [t.requires_grad for t in inputs]
    for t in inputs:
        if not t.is_leaf:
            raise GraphError("gradcheck inputs must be leaf tensors")
        t.requires_grad = True
    try:
        with Graph() as g:
            out = f(*inputs)
            if not isinstance(out, Tensor) or out.size != 1:
                raise GraphError("gradcheck needs a scalar-valued function")
            grads = g.backward(out)
        rng = np.random.default_rng(seed)
        worst = 0.0
        with no_grad():
            for t in inputs:
                analytic = grads.get(t, np.zeros_like(t.data)).reshape(-1)
                base = t.data
                coords: Iterable[int] = range(base.size)
                if max_coords is not None and base.size > max_coords:
                    coords = np.sort(rng.choice(base.size, size=max_coords, replace=False))
                for c in coords:
                    flat = base.reshape(-1).copy()
                    flat[c] = base.reshape(-1)[c] + h
                    t.data = flat.reshape(base.shape)
                    fp = f(*inputs).item()
                    flat[c] = base.reshape(-1)[c] - h
                    t.data = flat.reshape(base.shape)
                    fm = f(*inputs).item()
                    t.data = base
                    numeric = (fp - fm) / (2.0 * h)
                    a = analytic[c]
                    err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
                    worst = max(worst, err)
    finally:
        for t, flag in zip(inputs, saved_flags):
            t.requires_grad = flag
            t.grad = None
    return worst
