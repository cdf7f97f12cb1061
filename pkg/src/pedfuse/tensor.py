"""Dense double-precision tensors with reverse-mode automatic differentiation.

Every tensor owns a row-major ``float64`` array.  Operations are ``Function``
subclasses; applying one to tensors that require gradients records the
function instance on the output (its op record), which links the output to
its inputs.  ``Tensor.backward`` replays those records in reverse creation
order.

Broadcasting is deliberately restricted: binary elementwise operations accept
equal shapes, or a scalar (Python number or a tensor of shape ``()``/``(1,)``)
against any tensor.  Everything else goes through explicit ``reshape``,
``concat`` and friends.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager, nullcontext as _nullcontext
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from pedfuse.errors import ContractError, DimensionError, NumericError

_ids = itertools.count()
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


def float_dtype():
    """Storage dtype for new tensors: float64, or long double inside ``extended_precision``."""
    return getattr(_state, "dtype", np.float64)


@contextmanager
def extended_precision():
    """Create tensors in ``np.longdouble`` (forward evaluation only)."""
    prev = float_dtype()
    _state.dtype = np.longdouble
    try:
        yield
    finally:
        _state.dtype = prev


@contextmanager
def no_grad():
    """Evaluate operations without recording them for backward."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "_grad", "requires_grad", "op", "id", "name")

    def __init__(self, data, requires_grad: bool = False, op: "Function | None" = None, name: str | None = None):
        if op is None:
            self.data = np.array(data, dtype=float_dtype())
        else:
            self.data = np.asarray(data, dtype=float_dtype())
        self._grad = None
        self.requires_grad = requires_grad
        self.op = op
        self.id = next(_ids)
        self.name = name

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = None if value is None else np.array(value, dtype=np.float64).reshape(self.data.shape)

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- autodiff -----------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(node) into ``grad`` of every node in the graph.

        Only scalar tensors may seed a backward pass.  Calling it twice without
        zeroing accumulates, as for any gradient accumulator.
        """
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = GraphTape.from_output(self).nodes
        pending = {self.id: np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(node.id, None)
            if g is None:
                continue
            if node._grad is None:
                node._grad = np.array(g, dtype=np.float64)
            else:
                node._grad += g
            if node.op is None:
                continue
            for parent, pg in zip(node.op.parents, node.op.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.data.shape:
                    raise RuntimeError(
                        f"{type(node.op).__name__}.backward produced grad {pg.shape} for input {parent.shape}"
                    )
                prev = pending.get(parent.id)
                pending[parent.id] = pg if prev is None else prev + pg

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class GraphTape:
    """Nodes of a graph in creation order.

    Creation order is a topological order (inputs always exist before the
    outputs computed from them), so iterating ``reversed(nodes)`` visits every
    node after all of its consumers.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "GraphTape":
        seen = {}
        stack = [out]
        while stack:
            node = stack.pop()
            if node.id in seen or not node.requires_grad:
                continue
            seen[node.id] = node
            if node.op is not None:
                stack.extend(node.op.parents)
        return cls([seen[k] for k in sorted(seen)])

    @property
    def records(self) -> list:
        return [n.op for n in self.nodes if n.op is not None]

    def __len__(self) -> int:
        return len(self.nodes)


class Function:
    """A differentiable operation.

    ``forward`` receives raw arrays and may stash whatever ``backward`` needs
    on ``self``.  ``backward`` returns one gradient (or ``None``) per parent.
    """

    def __init__(self, *parents: Tensor):
        self.parents = parents

    def forward(self, *arrays, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[np.ndarray | None]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *tensors: Tensor, **kwargs) -> Tensor:
        fn = cls(*tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        if grad_enabled() and any(t.requires_grad for t in tensors):
            return Tensor(out, requires_grad=True, op=fn)
        return _wrap(out)


def _wrap(arr) -> Tensor:
    # skips the defensive copy a user-facing constructor makes
    t = Tensor.__new__(Tensor)
    t.data = np.asarray(arr, dtype=float_dtype())
    t._grad = None
    t.requires_grad = False
    t.op = None
    t.id = next(_ids)
    t.name = None
    return t


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _is_scalar_shape(shape) -> bool:
    return len(shape) <= 1 and int(np.prod(shape)) == 1


def _check_binary(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape == b.shape or _is_scalar_shape(a.shape) or _is_scalar_shape(b.shape):
        return
    raise DimensionError(f"{what}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


class Add(Function):
    def forward(self, a, b):
        _check_binary(a, b, "add")
        self.shapes = a.shape, b.shape
        return a + b

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(g, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        _check_binary(a, b, "sub")
        self.shapes = a.shape, b.shape
        return a - b

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(-g, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        _check_binary(a, b, "mul")
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return _unbroadcast(g * self.b, self.a.shape), _unbroadcast(g * self.a, self.b.shape)


class Sigmoid(Function):
    def forward(self, x):
        # tanh form is overflow-free and gives sigmoid(0) == 0.5 exactly
        self.out = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self.out

    def backward(self, g):
        return (g * self.out * (1.0 - self.out),)


class Tanh(Function):
    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, g):
        return (g * (1.0 - self.out * self.out),)


class Relu(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, g):
        return (g * self.mask,)


class Exp(Function):
    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, g):
        return (g * self.out,)


class Log(Function):
    def forward(self, x):
        self.x = x
        return np.log(x)

    def backward(self, g):
        return (g / self.x,)


def _operands(a, b):
    return as_tensor(a), as_tensor(b)


def add(a, b) -> Tensor:
    return Add.apply(*_operands(a, b))


def sub(a, b) -> Tensor:
    return Sub.apply(*_operands(a, b))


def mul(a, b) -> Tensor:
    return Mul.apply(*_operands(a, b))


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(as_tensor(x))


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(as_tensor(x))


def relu(x: Tensor) -> Tensor:
    return Relu.apply(as_tensor(x))


def exp(x: Tensor) -> Tensor:
    return Exp.apply(as_tensor(x))


def log(x: Tensor) -> Tensor:
    return Log.apply(as_tensor(x))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def elementwise(op: str, *operands) -> Tensor:
    """Dispatch one of add/sub/mul/sigmoid/tanh/relu by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------

class MatMul(Function):
    def forward(self, a, b):
        ok = a.ndim == b.ndim and a.ndim in (2, 3) and a.shape[-1] == b.shape[-2]
        if ok and a.ndim == 3:
            ok = a.shape[0] == b.shape[0]
        if not ok:
            raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, g):
        return g @ np.swapaxes(self.b, -1, -2), np.swapaxes(self.a, -1, -2) @ g


class Linear(Function):
    """``x @ W.T (+ b)`` over the last axis of ``x``; W is [out, in]."""

    def forward(self, x, w, b=None):
        if w.ndim != 2 or x.ndim < 1 or x.shape[-1] != w.shape[1]:
            raise DimensionError(f"linear: input {x.shape} does not match weight {w.shape}")
        if b is not None and b.shape != (w.shape[0],):
            raise DimensionError(f"linear: bias {b.shape} does not match weight {w.shape}")
        self.x, self.w, self.has_bias = x, w, b is not None
        out = x @ w.T
        if b is not None:
            out = out + b
        return out

    def backward(self, g):
        out_dim, in_dim = self.w.shape
        g2 = g.reshape(-1, out_dim)
        gx = g @ self.w
        gw = g2.T @ self.x.reshape(-1, in_dim)
        if self.has_bias:
            return gx, gw, g2.sum(axis=0)
        return gx, gw


class Transpose(Function):
    def forward(self, x):
        if x.ndim < 2:
            raise DimensionError(f"transpose needs rank >= 2, got shape {x.shape}")
        return np.swapaxes(x, -1, -2).copy()

    def backward(self, g):
        return (np.swapaxes(g, -1, -2),)


class Reshape(Function):
    def forward(self, x, shape):
        self.in_shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError:
            raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None

    def backward(self, g):
        return (g.reshape(self.in_shape),)


class Concat(Function):
    def forward(self, *parts, axis=0):
        first = parts[0]
        ax = axis % first.ndim if first.ndim else 0
        for p in parts[1:]:
            same = p.ndim == first.ndim and all(
                p.shape[i] == first.shape[i] for i in range(first.ndim) if i != ax
            )
            if not same:
                raise DimensionError(
                    f"concat on axis {axis}: shapes {first.shape} and {p.shape} disagree off-axis"
                )
        self.axis = ax
        self.sizes = [p.shape[ax] for p in parts]
        return np.concatenate(parts, axis=ax)

    def backward(self, g):
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(g, cuts, axis=self.axis))


class Select(Function):
    """Pick one index along an axis, dropping that axis."""

    def forward(self, x, index, axis=0):
        if not -x.ndim <= axis < x.ndim:
            raise DimensionError(f"select: axis {axis} out of range for shape {x.shape}")
        self.shape, self.axis, self.index = x.shape, axis % x.ndim, index
        return np.take(x, index, axis=self.axis)

    def backward(self, g):
        out = np.zeros(self.shape)
        idx = [slice(None)] * len(self.shape)
        idx[self.axis] = self.index
        out[tuple(idx)] = g
        return (out,)


def _normalize_axes(axis, ndim: int, what: str) -> tuple:
    axes = tuple(range(ndim)) if axis is None else (axis if isinstance(axis, tuple) else (axis,))
    out = []
    for a in axes:
        if not -ndim <= a < ndim:
            raise DimensionError(f"{what}: axis {a} out of range for rank {ndim}")
        out.append(a % ndim)
    return tuple(sorted(set(out)))


class Sum(Function):
    def forward(self, x, axis=None):
        self.axes = _normalize_axes(axis, x.ndim, "sum")
        self.shape = x.shape
        return x.sum(axis=self.axes)

    def backward(self, g):
        return (np.broadcast_to(np.expand_dims(g, self.axes), self.shape).copy(),)


class Mean(Function):
    def forward(self, x, axis=None):
        self.axes = _normalize_axes(axis, x.ndim, "mean_pool")
        self.shape = x.shape
        self.count = int(np.prod([x.shape[a] for a in self.axes]))
        return x.mean(axis=self.axes)

    def backward(self, g):
        return (np.broadcast_to(np.expand_dims(g, self.axes) / self.count, self.shape).copy(),)


class Softmax(Function):
    def forward(self, x, axis=-1):
        if x.ndim == 0 or x.shape[axis] == 0:
            raise DimensionError(f"softmax over an empty axis (shape {x.shape})")
        self.axis = axis
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, g):
        s = self.out
        return (s * (g - (g * s).sum(axis=self.axis, keepdims=True)),)


def matmul(a, b) -> Tensor:
    return MatMul.apply(as_tensor(a), as_tensor(b))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if bias is None:
        return Linear.apply(as_tensor(x), weight)
    return Linear.apply(as_tensor(x), weight, bias)


def transpose(x: Tensor) -> Tensor:
    return Transpose.apply(as_tensor(x))


def reshape(x: Tensor, shape) -> Tensor:
    return Reshape.apply(as_tensor(x), shape=tuple(shape))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise DimensionError("concat of zero tensors")
    parts = [as_tensor(p) for p in parts]
    if len(parts) == 1:
        return parts[0]
    return Concat.apply(*parts, axis=axis)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join equal-shape tensors along a new axis (reshape + concat)."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("stack of zero tensors")
    ndim = parts[0].ndim + 1
    ax = axis % ndim
    lifted = [reshape(p, p.shape[:ax] + (1,) + p.shape[ax:]) for p in parts]
    return concat(lifted, axis=ax)


def select(x: Tensor, index: int, axis: int = 0) -> Tensor:
    return Select.apply(as_tensor(x), index=index, axis=axis)


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return Sum.apply(as_tensor(x), axis=axis)


def mean(x: Tensor, axis=None) -> Tensor:
    return Mean.apply(as_tensor(x), axis=axis)


def reduce(op: str, x: Tensor, axis=None) -> Tensor:
    if op == "sum":
        return sum(x, axis)
    if op in ("mean", "mean_pool"):
        return mean(x, axis)
    raise ContractError(f"unknown reduction {op!r}")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(as_tensor(x), axis=axis)


# ---------------------------------------------------------------------------
# convolution and pooling over channels-last layouts [N, *spatial, C]
# ---------------------------------------------------------------------------

class ConvNd(Function):
    """Stride-1 'same' convolution; kernel [*K, C_in, C_out] with odd K."""

    def forward(self, x, w, b):
        k = w.shape[:-2]
        nsp = len(k)
        if x.ndim != nsp + 2 or x.shape[-1] != w.shape[-2] or b.shape != (w.shape[-1],):
            raise DimensionError(f"conv: input {x.shape}, kernel {w.shape}, bias {b.shape} disagree")
        if any(s % 2 == 0 for s in k):
            raise DimensionError(f"conv: kernel extents must be odd, got {k}")
        pads = [(0, 0)] + [(s // 2, s // 2) for s in k] + [(0, 0)]
        xp = np.pad(x, pads)
        spatial = x.shape[1:-1]
        out = np.broadcast_to(b, x.shape[:-1] + (w.shape[-1],)).copy()
        self.slices = []
        for off in np.ndindex(*k):
            sl = (slice(None),) + tuple(slice(o, o + s) for o, s in zip(off, spatial)) + (slice(None),)
            self.slices.append((off, sl))
            out += xp[sl] @ w[off]
        self.xp, self.w, self.pads, self.x_shape = xp, w, pads, x.shape
        return out

    def backward(self, g):
        c_in, c_out = self.w.shape[-2:]
        gxp = np.zeros_like(self.xp)
        gw = np.zeros_like(self.w)
        g2 = g.reshape(-1, c_out)
        for off, sl in self.slices:
            gw[off] = self.xp[sl].reshape(-1, c_in).T @ g2
            gxp[sl] += g @ self.w[off].T
        inner = tuple(slice(lo, lo + s) for (lo, _), s in zip(self.pads, self.x_shape))
        return gxp[inner], gw, g2.sum(axis=0)


class MaxPoolNd(Function):
    """Non-overlapping max pooling; trailing remainders are cropped."""

    def forward(self, x, window):
        nsp = len(window)
        if x.ndim != nsp + 2:
            raise DimensionError(f"maxpool: input {x.shape} does not have {nsp} spatial axes")
        spatial = x.shape[1:-1]
        if any(s < w for s, w in zip(spatial, window)):
            raise DimensionError(f"maxpool: spatial dims {spatial} smaller than window {tuple(window)}")
        crop = (slice(None),) + tuple(slice(0, (s // w) * w) for s, w in zip(spatial, window)) + (slice(None),)
        xs = x[crop]
        shape = [x.shape[0]]
        for s, w in zip(spatial, window):
            shape += [s // w, w]
        shape.append(x.shape[-1])
        r = xs.reshape(shape)
        perm = [0] + [1 + 2 * i for i in range(nsp)] + [len(shape) - 1] + [2 + 2 * i for i in range(nsp)]
        t = r.transpose(perm)
        flat = t.reshape(t.shape[: nsp + 2] + (-1,))
        idx = flat.argmax(axis=-1)
        self.x_shape, self.crop, self.r_shape, self.perm = x.shape, crop, r.shape, perm
        self.t_shape, self.flat_shape, self.idx = t.shape, flat.shape, idx
        return np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(self, g):
        gflat = np.zeros(self.flat_shape)
        np.put_along_axis(gflat, self.idx[..., None], g[..., None], axis=-1)
        gt = gflat.reshape(self.t_shape).transpose(np.argsort(self.perm))
        gx = np.zeros(self.x_shape)
        gx[self.crop] = gt.reshape(gx[self.crop].shape)
        return (gx,)


def conv(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return ConvNd.apply(as_tensor(x), weight, bias)


def maxpool(x: Tensor, window: Sequence[int]) -> Tensor:
    return MaxPoolNd.apply(as_tensor(x), window=tuple(window))


# ---------------------------------------------------------------------------
# finite-difference gradient oracle
# ---------------------------------------------------------------------------

def _as_named(params) -> list[tuple[str, Tensor]]:
    if isinstance(params, Mapping):
        return list(params.items())
    if isinstance(params, Tensor):
        return [(params.name or "param", params)]
    return [(p.name or f"param{i}", p) for i, p in enumerate(params)]


def _scalar(value):
    # kept as a numpy scalar so long double objectives keep their precision
    v = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
    if v.size != 1:
        raise ContractError(f"objective must be scalar, got shape {v.shape}")
    v = v.reshape(-1)[0]
    if not np.isfinite(v):
        raise NumericError(f"objective is not finite ({v})")
    return v


def finite_diff_errors(
    f: Callable[[], Tensor],
    params,
    epsilon: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    extended: bool = False,
) -> dict[str, float]:
    """Per-parameter worst relative error between backprop and central differences.

    ``f`` takes no arguments and reads the current values of ``params``.  With
    ``max_coords`` set, at most that many coordinates per parameter are probed
    (chosen by ``rng``); otherwise every coordinate is.

    With ``extended`` the perturbed objectives are evaluated in long double.
    In float64 the difference quotient carries rounding noise of roughly
    ``ulp(f) / (2 * epsilon)``, which swamps coordinates whose true gradient
    is below ~1e-7; the analytic side is always computed in float64.
    """
    if epsilon <= 0:
        raise ContractError(f"epsilon must be positive, got {epsilon}")
    named = _as_named(params)
    for _, p in named:
        p.zero_grad()
    loss = f()
    _scalar(loss)
    loss.backward()
    analytic = {name: p.grad.copy() for name, p in named}
    rng = rng if rng is not None else np.random.default_rng(0)
    originals = [p.data for _, p in named]
    with no_grad(), (extended_precision() if extended else _nullcontext()):
        if extended:
            for _, p in named:
                p.data = p.data.astype(np.longdouble)
        try:
            errors = _probe(f, named, analytic, epsilon, max_coords, rng)
        finally:
            for (_, p), data in zip(named, originals):
                p.data = data
    for _, p in named:
        p.zero_grad()
    return errors


def _probe(f, named, analytic, epsilon, max_coords, rng) -> dict[str, float]:
    errors = {}
    for name, p in named:
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        ana = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = _scalar(f())
            flat[i] = orig - epsilon
            lo = _scalar(f())
            flat[i] = orig
            num = float((hi - lo) / (2 * flat.dtype.type(epsilon)))
            err = abs(ana[i] - num) / max(1e-8, abs(ana[i]) + abs(num))
            worst = max(worst, err)
        errors[name] = worst
    return errors


def finite_diff_check(f: Callable[[], Tensor], params, epsilon: float = 1e-5, **kwargs) -> float:
    """Max relative error over all probed coordinates; see ``finite_diff_errors``."""
    errors = finite_diff_errors(f, params, epsilon, **kwargs)
    return max(errors.values(), default=0.0)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
