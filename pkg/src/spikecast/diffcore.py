"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every primitive records its parents and a closure mapping the output
gradient to one gradient per parent. Custom backward rules (the spiking
surrogate, for instance) are registered the same way as exact ones, via
:func:`primitive`.
"""
from __future__ import annotations

import contextlib
import inspect
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


class ShapeError(ValueError):
    pass


class GraphStateError(RuntimeError):
    pass


class ContractError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph (inference, teacher targets)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")
    # make ndarray <op> Tensor defer to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 _parents: tuple = (), _backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = _parents
        self._backward = _backward

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
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- operators ----------------------------------------------------------
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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return slice_(self, index)

    # -- method forms -------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def backward(self, seed=None) -> None:
        """Accumulate d(self)/d(leaf) into every requires_grad leaf's ``grad``."""
        if seed is None:
            if self.size != 1:
                raise ContractError("backward on a non-scalar tensor needs an explicit seed")
            seed = np.ones_like(self.data)
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != self.shape:
            raise ShapeError(f"seed shape {seed.shape} does not match output {self.shape}")
        if not self.requires_grad:
            return
        order = topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): seed}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _node(op: str, value: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(value, True, op, tuple(parents), backward)
    return Tensor(value, op=op)


PRIMITIVES: dict[str, Callable] = {}


def primitive(name: str, n_inputs: int | None = None):
    """Register a differentiable primitive.

    The decorated function receives numpy arrays for its first ``n_inputs``
    arguments (default: those without defaults), plain values for the rest,
    and returns ``(value, backward)`` where ``backward(g)`` yields one
    gradient (or None) per tensor input.
    """
    def wrap(fn):
        n = n_inputs
        if n is None:
            sig = inspect.signature(fn).parameters.values()
            n = sum(1 for p in sig if p.default is inspect.Parameter.empty)

        def apply(*args, **kwargs):
            tensors = [as_tensor(x) for x in args[:n]]
            try:
                value, backward = fn(*[t.data for t in tensors], *args[n:], **kwargs)
            except ValueError as exc:
                shapes = ", ".join(str(t.shape) for t in tensors)
                raise ShapeError(f"node '{name}' rejected inputs of shape {shapes}: {exc}") from exc
            return _node(name, value, tensors, backward)

        apply.__name__ = name
        apply.__doc__ = fn.__doc__
        PRIMITIVES[name] = apply
        return apply
    return wrap


# -- elementwise arithmetic --------------------------------------------------
@primitive("add")
def add(a, b):
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


@primitive("sub")
def sub(a, b):
    return a - b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


@primitive("mul")
def mul(a, b):
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


@primitive("div")
def div(a, b):
    out = a / b
    return out, lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape))


@primitive("neg")
def neg(a):
    return -a, lambda g: (-g,)


@primitive("power", n_inputs=1)
def power(a, exponent: float):
    out = a ** exponent
    return out, lambda g: (g * exponent * a ** (exponent - 1),)


@primitive("exp")
def exp(a):
    out = np.exp(a)
    return out, lambda g: (g * out,)


@primitive("log")
def log(a):
    return np.log(a), lambda g: (g / a,)


@primitive("sqrt")
def sqrt(a):
    out = np.sqrt(a)
    return out, lambda g: (g * 0.5 / out,)


@primitive("abs")
def abs_(a):
    return np.abs(a), lambda g: (g * np.sign(a),)


@primitive("tanh")
def tanh(a):
    out = np.tanh(a)
    return out, lambda g: (g * (1.0 - out * out),)


@primitive("sigmoid")
def sigmoid(a):
    out = 0.5 * (1.0 + np.tanh(0.5 * a))
    return out, lambda g: (g * out * (1.0 - out),)


@primitive("elu")
def elu(a, alpha: float = 1.0):
    neg_part = alpha * np.expm1(np.minimum(a, 0.0))
    out = np.where(a > 0, a, neg_part)
    return out, lambda g: (g * np.where(a > 0, 1.0, neg_part + alpha),)


@primitive("leaky_relu")
def leaky_relu(a, slope: float = 0.2):
    return np.where(a > 0, a, slope * a), lambda g: (g * np.where(a > 0, 1.0, slope),)


# -- linear algebra and reductions ------------------------------------------
@primitive("matmul")
def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    out = np.matmul(a, b)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b, -1, -2))
        if b.ndim == 2 and a.ndim > 2:
            # shared weight: fold the batch axes instead of materialising per-sample outer products
            gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return out, backward


@primitive("sum")
def sum_(a, axis=None, keepdims=False):
    out = np.sum(a, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return out, backward


@primitive("mean")
def mean(a, axis=None, keepdims=False):
    out = np.mean(a, axis=axis, keepdims=keepdims)
    count = a.size // max(out.size, 1) if axis is not None else a.size

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)
    return out, backward


@primitive("softmax")
def softmax(a, axis: int = -1):
    shifted = a - np.max(a, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        # Jacobian-vector product: y * (g - <g, y>)
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)
    return out, backward


# -- structural ------------------------------------------------------------
@primitive("reshape", n_inputs=1)
def reshape(a, shape):
    return a.reshape(shape), lambda g: (g.reshape(a.shape),)


@primitive("transpose")
def transpose(a, axes=None):
    out = np.transpose(a, axes)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return out, lambda g: (np.transpose(g, inverse),)


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, np.integer)) or p is Ellipsis or p is None for p in parts)


@primitive("slice", n_inputs=1)
def slice_(a, index):
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(a)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)
    return a[index], backward


def concatenate(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        value = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"node 'concatenate': {exc}") from exc
    ax = axis % value.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=ax) for lo, hi in zip(bounds[:-1], bounds[1:]))
    return _node("concatenate", value, tensors, backward)


PRIMITIVES["concatenate"] = concatenate


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        value = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"node 'stack': {exc}") from exc
    ax = axis % value.ndim

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))
    return _node("stack", value, tensors, backward)


PRIMITIVES["stack"] = stack


# -- graph wrapper -----------------------------------------------------------
class Graph:
    """A traced function with a declared input signature.

    ``forward`` evaluates the function on leaf tensors and caches the node
    list; ``backward`` returns one gradient per input (None where the input
    does not require grad).
    """

    def __init__(self, fn: Callable[..., Tensor], input_shapes: Sequence[tuple] | None = None):
        self.fn = fn
        self.input_shapes = None if input_shapes is None else [tuple(s) for s in input_shapes]
        self.nodes: list[Tensor] = []
        self.inputs: list[Tensor] = []
        self.output: Tensor | None = None

    def forward(self, inputs: Sequence[Tensor]) -> Tensor:
        inputs = [as_tensor(x) for x in inputs]
        if self.input_shapes is not None:
            if len(inputs) != len(self.input_shapes):
                raise ShapeError(f"graph expects {len(self.input_shapes)} inputs, got {len(inputs)}")
            for i, (x, s) in enumerate(zip(inputs, self.input_shapes)):
                if x.shape != s:
                    raise ShapeError(f"input {i} has shape {x.shape}, graph declares {s}")
        self.inputs = inputs
        self.output = as_tensor(self.fn(*inputs))
        self.nodes = topological_order(self.output) if self.output.requires_grad else [self.output]
        return self.output

    def backward(self, seed_grad=None) -> list[np.ndarray | None]:
        if self.output is None:
            raise GraphStateError("backward called before forward")
        for x in self.inputs:
            x.grad = None
        if seed_grad is None:
            seed_grad = np.ones_like(self.output.data)
        seed = seed_grad.data if isinstance(seed_grad, Tensor) else np.asarray(seed_grad, dtype=np.float64)
        self.output.backward(seed)
        out = []
        for x in self.inputs:
            if not x.requires_grad:
                out.append(None)
            else:
                out.append(np.zeros_like(x.data) if x.grad is None else x.grad)
        return out


@dataclass
class GradCheckReport:
    op: str
    max_rel_error: float
    tol: float
    passed: bool


def grad_check(graph: Graph, inputs: Sequence[Tensor], tol: float = 1e-4, step: float = 1e-5,
               op: str = "graph", max_elems: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare backward gradients with central finite differences.

    Relative error uses the denominator max(|analytic|, |numeric|, 1e-8).
    ``max_elems`` caps how many entries per input are probed (sampled with
    ``rng``); None probes all of them. Plain arrays are treated as
    differentiable inputs; pass a non-grad Tensor to hold an input fixed.
    """
    inputs = [x if isinstance(x, Tensor) else Tensor(x, requires_grad=True) for x in inputs]
    if not any(x.requires_grad for x in inputs):
        raise ContractError("grad_check needs at least one input that requires grad")
    out = graph.forward(inputs)
    if out.size != 1:
        raise ContractError(f"grad_check needs a scalar output, got shape {out.shape}")
    analytic = graph.backward()
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for x, ga in zip(inputs, analytic):
        if ga is None:
            continue
        flat = x.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elems is not None and flat.size > max_elems:
            idx = np.sort(rng.choice(flat.size, size=max_elems, replace=False))
        ga_flat = ga.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = float(graph.fn(*inputs).data)
            flat[i] = orig - step
            fm = float(graph.fn(*inputs).data)
            flat[i] = orig
            numeric = (fp - fm) / (2 * step)
            denom = max(abs(ga_flat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(ga_flat[i] - numeric) / denom)
    graph.forward(inputs)
    return GradCheckReport(op, float(worst), tol, bool(worst <= tol))


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
