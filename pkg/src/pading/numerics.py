"""Dense 2-D arithmetic with reverse-mode gradients, optimizers and a gradient checker.

Every value is a 2-D float64 numpy array. ``Tensor`` wraps one and records the
operations that produced it so ``backward`` can push gradients back to the
leaves. Scalars are 1x1 tensors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import DimensionError, ParameterError, StateError, VerificationError

DTYPE = np.float64


def as_matrix(x) -> np.ndarray:
    """Coerce ``x`` to a 2-D float64 array (scalars become 1x1, vectors 1xn)."""
    arr = np.asarray(x, dtype=DTYPE)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = as_matrix(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads = {id(self): as_matrix(grad)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Param(Tensor):
    """Trainable leaf. ``grad`` stays ``None`` until the first backward or zero_grad."""

    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(np.array(as_matrix(data), copy=True), requires_grad=True, name=name)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.data.shape})"


def _topological_order(root):
    order, seen = [], set()
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


def lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward):
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward)
    return Tensor(data)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True).reshape(shape)


def _check_broadcast(a, b, op):
    for x, y in zip(a.shape, b.shape):
        if x != y and x != 1 and y != 1:
            raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    _check_broadcast(a, b, "add")
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    _check_broadcast(a, b, "sub")
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    _check_broadcast(a, b, "mul")
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def exp(a) -> Tensor:
    a = lift(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = lift(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = lift(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g / (2.0 * out),))


def square(a) -> Tensor:
    a = lift(a)
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def abs_(a) -> Tensor:
    # subgradient 0 at exact ties
    a = lift(a)
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def leaky_relu(a, slope=0.2) -> Tensor:
    a = lift(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return _node(a.data * factor, (a,), lambda g: (g * factor,))


def clip(a, lo, hi) -> Tensor:
    a = lift(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def dropout(a, rate, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity when ``train`` is false or ``rate`` is 0."""
    a = lift(a)
    if not train or rate <= 0.0:
        return a
    if rng is None:
        raise ParameterError("dropout in train mode needs an explicit rng")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return mul(a, keep)


# ------------------------------------------------------------------ structure

def matmul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a) -> Tensor:
    a = lift(a)
    return _node(a.data.T.copy(), (a,), lambda g: (g.T,))


def sum_(a, axis=None) -> Tensor:
    a = lift(a)
    if axis is None:
        return _node(a.data.sum().reshape(1, 1), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))
    out = a.data.sum(axis=axis, keepdims=True)
    return _node(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a, axis=None) -> Tensor:
    a = lift(a)
    count = a.data.size if axis is None else a.shape[axis]
    if count == 0:
        raise DimensionError(f"mean over an empty axis of shape {a.shape}")
    return mul(sum_(a, axis), 1.0 / count)


def concat_cols(parts: Sequence) -> Tensor:
    parts = [lift(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    return _node(np.concatenate([p.data for p in parts], axis=1), tuple(parts),
                 lambda g: tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])))


def concat_rows(parts: Sequence) -> Tensor:
    parts = [lift(p) for p in parts]
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise DimensionError(f"concat_rows: column counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])
    return _node(np.concatenate([p.data for p in parts], axis=0), tuple(parts),
                 lambda g: tuple(g[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])))


def slice_cols(a, lo, hi) -> Tensor:
    a = lift(a)

    def backward(g):
        out = np.zeros_like(a.data)
        out[:, lo:hi] = g
        return (out,)

    return _node(a.data[:, lo:hi].copy(), (a,), backward)


def split_cols(a, at):
    a = lift(a)
    return slice_cols(a, 0, at), slice_cols(a, at, a.shape[1])


def take_rows(a, index) -> Tensor:
    a = lift(a)
    index = np.asarray(index, dtype=np.intp)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _node(a.data[index], (a,), backward)


# ------------------------------------------------------------- fused kernels

def softmax_rows(m, temperature=1.0) -> Tensor:
    """Row-wise softmax of ``m / temperature`` with max-subtraction."""
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    m = lift(m)
    z = m.data / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return ((out * (g - (g * out).sum(axis=1, keepdims=True))) / temperature,)

    return _node(out, (m,), backward)


def log_softmax_rows(m, temperature=1.0) -> Tensor:
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    m = lift(m)
    z = m.data / temperature
    z = z - z.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    prob = np.exp(out)

    def backward(g):
        return ((g - prob * g.sum(axis=1, keepdims=True)) / temperature,)

    return _node(out, (m,), backward)


def masked_log_softmax_rows(m, mask, temperature=1.0) -> Tensor:
    """Log-softmax over the entries where ``mask`` is true; other entries are 0.

    Rows with no true entry come out all-zero and receive no gradient.
    """
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    m = lift(m)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != m.shape:
        raise DimensionError(f"mask shape {mask.shape} != {m.shape}")
    z = np.where(mask, m.data / temperature, -np.inf)
    top = z.max(axis=1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(z - top), 0.0)
    total = e.sum(axis=1, keepdims=True)
    safe = np.where(total > 0, total, 1.0)
    out = np.where(mask, z - top - np.log(safe), 0.0)
    prob = e / safe

    def backward(g):
        g = np.where(mask, g, 0.0)
        return ((g - prob * g.sum(axis=1, keepdims=True)) / temperature,)

    return _node(out, (m,), backward)


def cross_entropy(logits, labels, temperature=1.0) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits / temperature)``."""
    logits = lift(logits)
    labels = np.asarray(labels, dtype=np.intp)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"cross_entropy: {n} rows but {labels.shape} labels")
    if n == 0:
        raise DimensionError("cross_entropy over an empty batch")
    if labels.min() < 0 or labels.max() >= c:
        raise IndexError(f"label out of range for {c} classes")
    logp = log_softmax_rows(logits, temperature)
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = -1.0 / n
    return sum_(mul(logp, onehot))


def sqdist(a, b) -> Tensor:
    """Pairwise squared Euclidean distances, shape (len(a), len(b))."""
    a, b = lift(a), lift(b)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"sqdist: feature dims differ {a.shape} vs {b.shape}")
    an = (a.data ** 2).sum(axis=1, keepdims=True)
    bn = (b.data ** 2).sum(axis=1, keepdims=True)
    out = an + bn.T - 2.0 * (a.data @ b.data.T)

    def backward(g):
        ga = 2.0 * (a.data * g.sum(axis=1, keepdims=True) - g @ b.data)
        gb = 2.0 * (b.data * g.sum(axis=0)[:, None] - g.T @ a.data)
        return ga, gb

    return _node(out, (a, b), backward)


class NormalizedRows(NamedTuple):
    rows: np.ndarray
    zero_rows: np.ndarray  # boolean flag per row; True where the row was left as-is


def l2_normalize_rows(m) -> NormalizedRows:
    m = as_matrix(m)
    norms = np.sqrt((m ** 2).sum(axis=1))
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    return NormalizedRows(m / safe[:, None], zero)


def make_rng(*parts) -> np.random.Generator:
    """Generator seeded from a flattened sequence of non-negative ints (nested lists allowed)."""
    flat = []
    for part in parts:
        if isinstance(part, (list, tuple, np.ndarray)):
            flat.extend(int(v) for v in np.ravel(np.asarray(part, dtype=object)))
        else:
            flat.append(int(part))
    return np.random.default_rng(flat)


# ----------------------------------------------------------------- optimizers

def zero_grad(params: Sequence[Param]):
    for p in params:
        p.zero_grad()


@dataclass
class SgdState:
    learning_rate: float = 1e-3
    weight_decay: float = 5e-4
    momentum: float = 0.9
    velocity: list = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError("momentum must lie in [0, 1)")


@dataclass
class AdamState:
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    timestep: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be > 0")


def _grads(params):
    out = []
    for p in params:
        if p.grad is None:
            raise StateError(f"parameter {p.name or '?'} has no gradient")
        out.append(p.grad)
    return out


def sgd_step(params: Sequence[Param], state: SgdState):
    """Momentum SGD with the weight-decay term added to the gradient."""
    grads = _grads(params)
    if not state.velocity:
        state.velocity = [np.zeros_like(p.data) for p in params]
    for p, g, v in zip(params, grads, state.velocity):
        d = g + state.weight_decay * p.data if state.weight_decay else g
        v *= state.momentum
        v += d
        p.data -= state.learning_rate * v
    return params


def adam_step(params: Sequence[Param], state: AdamState):
    grads = _grads(params)
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    state.timestep += 1
    t = state.timestep
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params


# ------------------------------------------------------------ gradient check

@dataclass
class GradCheckReport:
    max_rel_error: float
    probes: list  # (param index, flat index, analytic, numeric, rel error)

    def passed(self, rtol: float) -> bool:
        return self.max_rel_error < rtol


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Param], probe_count: int = 20,
               eps: float = 1e-5, seed: int = 0, floor: float = 1e-6) -> GradCheckReport:
    """Compare backward() gradients to central finite differences at random scalar probes.

    ``loss_fn`` takes no arguments and must rebuild its graph (and any internal
    randomness) from scratch on every call. The relative error of a probe is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ParameterError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    params = list(params)
    first = loss_fn().item()
    second = loss_fn().item()
    if first != second:
        raise VerificationError(f"loss is not deterministic: {first!r} vs {second!r}")

    zero_grad(params)
    loss_fn().backward()
    analytic = [p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    sizes = np.array([p.data.size for p in params])
    probes, worst = [], 0.0
    for _ in range(probe_count):
        pi = int(rng.choice(len(params), p=sizes / sizes.sum()))
        fi = int(rng.integers(sizes[pi]))
        flat = params[pi].data.reshape(-1)
        orig = flat[fi]
        flat[fi] = orig + eps
        up = loss_fn().item()
        flat[fi] = orig - eps
        down = loss_fn().item()
        flat[fi] = orig
        numeric = (up - down) / (2.0 * eps)
        a = float(analytic[pi].reshape(-1)[fi])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        worst = max(worst, rel)
        probes.append((pi, fi, a, numeric, rel))
    return GradCheckReport(worst, probes)
