"""Dense reverse-mode automatic differentiation on float64 numpy arrays.

Operations executed on tensors that require gradients are appended to the
active :class:`GradTape`.  ``backward`` walks that tape once in reverse and
returns a mapping from leaf tensors to their gradients.  A tape is consumed
by its backward pass; the next operation opens a fresh one.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "Tensor", "GradTape", "Gradients", "Mlp", "Layer", "Optimizer",
    "TapeError", "ShapeError", "as_tensor", "backward", "forward",
    "grad_input_norm", "gradient_check", "jacobian", "predict", "step", "erf", "erfc", "exp", "log", "sqrt",
    "logaddexp", "logsumexp", "log_ndtr", "log1mexp",
    "relu", "leaky_relu", "sigmoid", "tanh", "softplus", "clamp_min",
    "ACTIVATIONS",
]

_SOFTPLUS_CUTOFF = 30.0


class TapeError(RuntimeError):
    """Raised on misuse of the gradient tape."""


class ShapeError(ValueError):
    """Raised when operand shapes do not compose."""


@dataclass
class _Node:
    out: "Tensor"
    parents: tuple["Tensor", ...]
    vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


@dataclass
class GradTape:
    """Append-only record of operations, in execution (topological) order."""

    nodes: list[_Node] = field(default_factory=list)
    consumed: bool = False

    def record(self, out, parents, vjp):
        if self.consumed:
            raise TapeError("tape already consumed by a backward pass")
        out._tape = self
        out._index = len(self.nodes)
        self.nodes.append(_Node(out, tuple(parents), vjp))

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False


_local = threading.local()


def _stack() -> list[GradTape]:
    if not hasattr(_local, "stack"):
        _local.stack = [GradTape()]
    return _local.stack


def _active_tape() -> GradTape:
    stack = _stack()
    if stack[-1].consumed:
        stack[-1] = GradTape()
    return stack[-1]


class Tensor:
    """A float64 array that may participate in the gradient tape.

    Leaves are created with ``requires_grad=True``; every tensor computed
    from a leaf is recorded on the active tape and gets a ``node_id``.
    """

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._tape: GradTape | None = None
        self._index: int | None = None

    # -- introspection -------------------------------------------------
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
    def node_id(self) -> int | None:
        return self._index

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self._tape is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_scalar(self)

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __len__(self):
        return len(self.data)

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        return _binary(self, other, np.add, lambda g, a, b: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract, lambda g, a, b: (g, -g))

    def __rsub__(self, other):
        return _binary(as_tensor(other), self, np.subtract, lambda g, a, b: (g, -g))

    def __mul__(self, other):
        return _binary(self, other, np.multiply, lambda g, a, b: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(self, other, np.divide, lambda g, a, b: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        return _unary(self, np.negative(self.data), lambda g: -g)

    def __pow__(self, power: float):
        if isinstance(power, Tensor):
            raise TypeError("tensor exponents are not supported")
        p = float(power)
        x = self.data
        return _unary(self, x ** p, lambda g: g * p * x ** (p - 1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, idx):
        x = self.data
        out = x[idx]

        def vjp(g):
            full = np.zeros_like(x)
            np.add.at(full, idx, g)
            return full

        return _unary(self, out, vjp)

    # -- reductions and reshapes --------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        x = self.data
        out = np.sum(x, axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, x.shape).copy()

        return _unary(self, out, vjp)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        x = self.data
        return _unary(self, x.reshape(*shape), lambda g: g.reshape(x.shape))

    @property
    def T(self):
        return _unary(self, self.data.T, lambda g: g.T)


def _raise_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _unary(x: Tensor, out: np.ndarray, vjp) -> Tensor:
    res = Tensor(out)
    if x.tracked:
        _active_tape().record(res, (x,), lambda g: (vjp(g),))
    return res


def _binary(a, b, fn, vjp) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(fn(a.data, b.data))
    if a.tracked or b.tracked:
        ad, bd = a.data, b.data

        def node_vjp(g):
            ga, gb = vjp(g, ad, bd)
            return _unbroadcast(np.asarray(ga), ad.shape), _unbroadcast(np.asarray(gb), bd.shape)

        _active_tape().record(out, (a, b), node_vjp)
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    if a.tracked or b.tracked:
        ad, bd = a.data, b.data
        _active_tape().record(out, (a, b), lambda g: (g @ bd.T, ad.T @ g))
    return out


# -- pointwise functions ----------------------------------------------

def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _unary(x, y, lambda g: g * y)


def log(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    return _unary(x, np.log(d), lambda g: g / d)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    y = np.sqrt(x.data)
    return _unary(x, y, lambda g: g * 0.5 / y)


def erf(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    return _unary(x, special.erf(d), lambda g: g * (2.0 / math.sqrt(math.pi)) * np.exp(-d * d))


def erfc(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    return _unary(x, special.erfc(d), lambda g: -g * (2.0 / math.sqrt(math.pi)) * np.exp(-d * d))


def log_ndtr(x) -> Tensor:
    """log of the standard normal CDF, accurate deep in the lower tail."""
    x = as_tensor(x)
    d = x.data
    y = special.log_ndtr(d)
    return _unary(x, y, lambda g: g * np.exp(-0.5 * d * d - 0.5 * math.log(2.0 * math.pi) - y))


def log1mexp(x) -> Tensor:
    """log(1 - exp(x)) for x < 0."""
    x = as_tensor(x)
    d = x.data
    y = np.log(-np.expm1(d))
    return _unary(x, y, lambda g: g / -np.expm1(-d))


def logaddexp(a, b) -> Tensor:
    return _binary(a, b, np.logaddexp,
                   lambda g, x, y: (g * special.expit(x - y), g * special.expit(y - x)))


def logsumexp(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    d = x.data
    out = special.logsumexp(d, axis=axis)

    def vjp(g):
        w = np.exp(d - np.expand_dims(out, axis))
        return np.expand_dims(g, axis) * w

    return _unary(x, out, vjp)


def clamp_min(x, floor: float) -> Tensor:
    """max(x, floor); the gradient is zero where the floor is active."""
    x = as_tensor(x)
    d = x.data
    mask = d > floor
    return _unary(x, np.where(mask, d, floor), lambda g: g * mask)


def relu(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    mask = d > 0.0
    return _unary(x, np.where(mask, d, 0.0), lambda g: g * mask)


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    d = x.data
    scale = np.where(d > 0.0, 1.0, slope)
    return _unary(x, d * scale, lambda g: g * scale)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = special.expit(x.data)
    return _unary(x, y, lambda g: g * y * (1.0 - y))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _unary(x, y, lambda g: g * (1.0 - y * y))


def softplus(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    mid = np.abs(d) <= _SOFTPLUS_CUTOFF
    safe = np.where(mid, d, 0.0)
    y = np.where(d > _SOFTPLUS_CUTOFF, d, np.where(mid, np.log1p(np.exp(safe)), np.exp(np.minimum(d, 0.0))))
    return _unary(x, y, lambda g: g * special.expit(d))


def identity(x) -> Tensor:
    return as_tensor(x)


ACTIVATIONS: dict[str, Callable[..., Tensor]] = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softplus": softplus,
    "identity": identity,
}


# -- backward ---------------------------------------------------------

class Gradients(dict):
    """Mapping from leaf tensors (by identity) to gradient arrays."""

    def __getitem__(self, key):
        return dict.__getitem__(self, id(key))[1]

    def __contains__(self, key):
        return dict.__contains__(self, id(key))

    def get(self, key, default=None):
        hit = dict.get(self, id(key))
        return default if hit is None else hit[1]

    def add(self, leaf: Tensor, grad: np.ndarray):
        dict.__setitem__(self, id(leaf), (leaf, grad))

    def leaves(self) -> list[Tensor]:
        return [v[0] for v in self.values()]


def backward(loss: Tensor) -> Gradients:
    """Reverse pass from a scalar ``loss`` over the tape that recorded it.

    Returns gradients for every leaf (``requires_grad=True``) reachable
    from ``loss``.  The tape is consumed.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise TapeError("loss is not on any gradient tape (no recorded forward pass)")
    if tape.consumed:
        raise TapeError("tape already consumed; rerun the forward pass")
    tape.consumed = True

    adj: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    grads = Gradients()
    for node in reversed(tape.nodes[: loss._index + 1]):
        g = adj.pop(id(node.out), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.tracked:
                continue
            key = id(parent)
            if parent._tape is tape:
                adj[key] = adj[key] + pg if key in adj else pg
            elif parent.requires_grad:
                prev = grads.get(parent)
                grads.add(parent, pg if prev is None else prev + pg)
    tape.nodes.clear()
    return grads


# -- networks ---------------------------------------------------------

@dataclass
class Layer:
    weight: Tensor
    bias: Tensor
    activation: str = "identity"
    slope: float = 0.2

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown nonlinearity {self.activation!r}")
        if self.activation == "leaky_relu" and not self.slope > 0:
            raise ValueError("leaky slope must be positive")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"layer weight {self.weight.shape} and bias {self.bias.shape} do not compose")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        h = x @ self.weight + self.bias
        if self.activation == "leaky_relu":
            return leaky_relu(h, self.slope)
        return ACTIVATIONS[self.activation](h)


class Mlp:
    """Stack of affine maps each followed by a pointwise nonlinearity."""

    def __init__(self, layers: Sequence[Layer]):
        layers = list(layers)
        if not layers:
            raise ValueError("an Mlp needs at least one layer")
        for i, (a, b) in enumerate(zip(layers, layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer {i} outputs {a.out_dim} but layer {i + 1} expects {b.in_dim}")
        self.layers = layers
        for i, layer in enumerate(layers):
            layer.weight.name = f"layer{i}.weight"
            layer.bias.name = f"layer{i}.bias"

    @classmethod
    def init(cls, sizes: Sequence[int], activations: Sequence[str] | str,
             rng: np.random.Generator, slope: float = 0.2, gain: float = 1.0) -> "Mlp":
        """Glorot-uniform weights, zero biases."""
        n_layers = len(sizes) - 1
        if isinstance(activations, str):
            activations = [activations] * (n_layers - 1) + ["identity"]
        if len(activations) != n_layers:
            raise ValueError(f"{n_layers} layers but {len(activations)} nonlinearities")
        layers = []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
            lim = gain * math.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-lim, lim, size=(fan_in, fan_out))
            layers.append(Layer(Tensor(w, requires_grad=True), Tensor(np.zeros(fan_out), requires_grad=True), act, slope))
        return cls(layers)

    @classmethod
    def from_arrays(cls, weights, biases, activations, slope: float = 0.2) -> "Mlp":
        return cls([
            Layer(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True), a, slope)
            for w, b, a in zip(weights, biases, activations)
        ])

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in (layer.weight, layer.bias)]

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.parameters()])

    def set_flat_parameters(self, flat: np.ndarray) -> None:
        offset = 0
        for p in self.parameters():
            p.data = np.asarray(flat[offset:offset + p.size], dtype=np.float64).reshape(p.shape).copy()
            offset += p.size

    def copy(self) -> "Mlp":
        return Mlp([
            Layer(Tensor(l.weight.data.copy(), requires_grad=True), Tensor(l.bias.data.copy(), requires_grad=True),
                  l.activation, l.slope)
            for l in self.layers
        ])

    def __call__(self, x) -> Tensor:
        return forward(self, x)


def forward(net: Mlp, x) -> Tensor:
    """Evaluate ``net`` on a batch ``(n, in_dim)`` or a single point ``(in_dim,)``."""
    x = as_tensor(x)
    single = x.ndim == 1
    if single:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeError(f"input shape {x.shape} does not match network input dimension {net.in_dim}")
    h = x
    for layer in net.layers:
        h = layer(h)
    return h.reshape(-1) if single else h


def predict(net: Mlp, x) -> np.ndarray:
    """Evaluate ``net`` without recording anything on a tape."""
    h = Tensor(np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64))
    single = h.ndim == 1
    if single:
        h = h.reshape(1, -1)
    if h.ndim != 2 or h.shape[1] != net.in_dim:
        raise ShapeError(f"input shape {h.shape} does not match network input dimension {net.in_dim}")
    for layer in net.layers:
        z = h @ Tensor(layer.weight.data) + Tensor(layer.bias.data)
        h = leaky_relu(z, layer.slope) if layer.activation == "leaky_relu" else ACTIVATIONS[layer.activation](z)
    return h.data.reshape(-1) if single else h.data


def flatten_grads(grads: Gradients, params: Sequence[Tensor]) -> np.ndarray:
    return np.concatenate([
        (grads.get(p) if p in grads else np.zeros_like(p.data)).ravel() for p in params
    ])


def grad_input_norm(net: Mlp, x) -> np.ndarray:
    """Euclidean norm of the input gradient of a scalar-output ``net``.

    ``x`` may be one point or a batch; batches return one norm per row.
    """
    if net.out_dim != 1:
        raise ShapeError(f"grad_input_norm needs a scalar-output network, got output dimension {net.out_dim}")
    xs = np.atleast_2d(np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64))
    leaf = Tensor(xs, requires_grad=True)
    with GradTape():
        grads = backward(forward(net, leaf).sum())
    norms = np.linalg.norm(grads[leaf], axis=1)
    return norms if np.ndim(x.data if isinstance(x, Tensor) else x) == 2 else norms[0]


def jacobian(net: Mlp, x, wrt: str = "input") -> np.ndarray:
    """Full Jacobian of ``net`` at a single point, one backward pass per output.

    ``wrt="input"`` gives shape ``(out_dim, in_dim)``; ``wrt="parameters"``
    gives ``(out_dim, n_params)`` with parameters flattened in
    :meth:`Mlp.parameters` order.
    """
    if wrt not in ("input", "parameters"):
        raise ValueError(f"wrt must be 'input' or 'parameters', not {wrt!r}")
    point = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64).reshape(-1)
    params = net.parameters()
    rows = []
    for k in range(net.out_dim):
        leaf = Tensor(point, requires_grad=wrt == "input")
        with GradTape():
            grads = backward(forward(net, leaf)[k])
        rows.append(grads[leaf] if wrt == "input" else flatten_grads(grads, params))
    return np.stack(rows)


def gradient_check(net: Mlp, x, h: float = 1e-5) -> float:
    """Relative error between tape and central-difference parameter gradients.

    The probed scalar is ``sum(net(x) ** 2)``; differences are taken one
    parameter at a time with untracked evaluations.  Parameters are
    restored afterwards.
    """
    params = net.parameters()
    with GradTape():
        out = forward(net, x)
        ad = flatten_grads(backward((out * out).sum()), params)
    flat0 = net.flat_parameters()
    fd = np.empty_like(flat0)
    try:
        for i in range(flat0.size):
            shifted = flat0.copy()
            shifted[i] = flat0[i] + h
            net.set_flat_parameters(shifted)
            up = float(np.sum(predict(net, x) ** 2))
            shifted[i] = flat0[i] - h
            net.set_flat_parameters(shifted)
            down = float(np.sum(predict(net, x) ** 2))
            fd[i] = (up - down) / (2.0 * h)
    finally:
        net.set_flat_parameters(flat0)
    return float(np.linalg.norm(ad - fd) / max(np.linalg.norm(fd), 1e-300))


# -- optimizers -------------------------------------------------------

@dataclass
class Optimizer:
    kind: str = "sgd"
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")

    def step(self, params: Sequence[Tensor], grads) -> Sequence[Tensor]:
        return step(self, params, grads)


def step(opt: Optimizer, params: Sequence[Tensor], grads) -> Sequence[Tensor]:
    """Update ``params`` in place from ``grads`` (a :class:`Gradients` or aligned list)."""
    if isinstance(grads, Gradients):
        garr = [grads.get(p) if p in grads else np.zeros_like(p.data) for p in params]
    else:
        garr = [np.asarray(g, dtype=np.float64) for g in grads]
    if len(garr) != len(params):
        raise ValueError(f"{len(params)} parameters but {len(garr)} gradients")
    for i, (p, g) in enumerate(zip(params, garr)):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.name or i} {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {p.name or i}")
    if opt.kind == "sgd":
        for p, g in zip(params, garr):
            p.data = p.data - opt.lr * g
        return params
    opt.t += 1
    c1 = 1.0 - opt.beta1 ** opt.t
    c2 = 1.0 - opt.beta2 ** opt.t
    for i, (p, g) in enumerate(zip(params, garr)):
        key = id(p)
        m = opt.m.get(key, np.zeros_like(p.data))
        v = opt.v.get(key, np.zeros_like(p.data))
        if m.shape != p.shape:
            raise ShapeError(f"moment buffer shape {m.shape} does not match parameter {p.name or i} {p.shape}")
        m = opt.beta1 * m + (1.0 - opt.beta1) * g
        v = opt.beta2 * v + (1.0 - opt.beta2) * g * g
        opt.m[key], opt.v[key] = m, v
        p.data = p.data - opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return params
