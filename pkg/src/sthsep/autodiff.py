"""Minimal reverse-mode automatic differentiation on top of numpy.

Every value that flows through the network is a :class:`Tensor` holding a
float64 ``numpy.ndarray``.  Operations record their parents and a backward
closure; :meth:`Tensor.backward` walks the recorded tape in reverse
topological order and accumulates gradients into every leaf that requires
them.  Trainable leaves live in a :class:`ParamStore`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError

DTYPE = np.float64


class Tensor:
    """Dense float64 array with an optional gradient tape entry."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None, op: str = ""):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = parents
        self._backward = backward
        self.op = op

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf.

        Gradients add across repeated uses and across calls; callers zero them
        between optimisation steps.
        """
        if not self.requires_grad:
            return
        if grad is None:
            if self.size != 1:
                raise ShapeError("backward", self.shape, (), "implicit seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        pending: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in order:
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    # operator sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x)


def _make(data, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a) -> Tensor:
    # subgradient at 0 is 0
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out = a.data ** p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1),), "power")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


# ---------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape),)

    return _make(out, (a,), backward, "mean")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward, "softmax")


def layer_norm(a, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Normalise to zero mean and unit (population) variance along ``axis``."""
    a = as_tensor(a)
    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axis, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=axis, keepdims=True)
        gxm = (g * xhat).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return _make(xhat, (a,), backward, "layer_norm")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _make(out, (a, b), backward, "matmul")


def einsum(spec: str, a, b) -> Tensor:
    """Two-operand einsum without repeated or operand-private summed indices."""
    a, b = as_tensor(a), as_tensor(b)
    ins, out_idx = spec.replace(" ", "").split("->")
    ia, ib = ins.split(",")
    for own, other in ((ia, ib), (ib, ia)):
        if len(set(own)) != len(own) or any(c not in other and c not in out_idx for c in own):
            raise ValueError(f"einsum spec {spec!r} not supported")
    try:
        out = np.einsum(spec, a.data, b.data, optimize=True)
    except ValueError:
        raise ShapeError("einsum", a.shape, b.shape, spec) from None

    def backward(g):
        ga = np.einsum(f"{out_idx},{ib}->{ia}", g, b.data, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out_idx},{ia}->{ib}", g, a.data, optimize=True) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), backward, "einsum")


# ---------------------------------------------------------------- shape ops

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError("broadcast_to", a.shape, tuple(shape)) from None
    return _make(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast_to")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]
    fancy = isinstance(idx, (list, np.ndarray)) or (
        isinstance(idx, tuple) and any(isinstance(i, (list, np.ndarray)) for i in idx)
    )

    def backward(g):
        full = np.zeros(a.shape, dtype=DTYPE)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] += g
        return (full,)

    return _make(out, (a,), backward, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
            t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise ShapeError("concat", ts[0].shape, t.shape)
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=ax))

    return _make(np.concatenate([t.data for t in ts], axis=ax), ts, backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    return concat([expand_dims(t, axis) for t in ts], axis=axis)


def expand_dims(a, axis: int) -> Tensor:
    a = as_tensor(a)
    return reshape(a, np.expand_dims(a.data, axis).shape)


# ---------------------------------------------------------------- convolution

def conv1d_causal(x, w, b=None, dilation: int = 1) -> Tensor:
    """Causal dilated convolution along the second-to-last axis.

    ``x`` is ``(..., T, C_in)``, ``w`` is ``(K, C_in, C_out)``.  Output at step
    ``t`` reads ``x[t - (K-1-k)*dilation]`` through tap ``k``; steps before the
    start are zero.  Output length equals input length.
    """
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 3 or x.shape[-1] != w.shape[1]:
        raise ShapeError("conv1d_causal", x.shape, w.shape)
    K = w.shape[0]
    T = x.shape[-2]
    pad = (K - 1) * dilation
    if pad >= T:
        raise ShapeError("conv1d_causal", x.shape, w.shape, f"receptive span {pad + 1} exceeds length {T}")
    widths = [(0, 0)] * x.ndim
    widths[-2] = (pad, 0)
    xp = np.pad(x.data, widths)
    out = np.zeros(x.shape[:-1] + (w.shape[2],), dtype=DTYPE)
    for k in range(K):
        s = k * dilation
        out += xp[..., s:s + T, :] @ w.data[k]
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out += b.data
        parents.append(b)

    def backward(g):
        gx = gw = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for k in range(K):
                s = k * dilation
                gxp[..., s:s + T, :] += g @ w.data[k].T
            gx = gxp[..., pad:, :]
        if w.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            gw = np.stack([
                xp[..., k * dilation:k * dilation + T, :].reshape(-1, xp.shape[-1]).T @ g2
                for k in range(K)
            ])
        grads = [gx, gw]
        if b is not None:
            grads.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return tuple(grads)

    return _make(out, parents, backward, "conv1d_causal")


# ---------------------------------------------------------------- parameters

@dataclass
class Param:
    tensor: Tensor
    frozen: bool = False

    @property
    def grad(self) -> np.ndarray:
        g = self.tensor.grad
        return np.zeros_like(self.tensor.data) if g is None else g


class ParamStore:
    """Named trainable arrays with freeze flags and accumulated gradients."""

    def __init__(self):
        self._entries: dict[str, Param] = {}

    def add(self, name: str, value, frozen: bool = False) -> Tensor:
        if name in self._entries:
            raise KeyError(f"parameter {name!r} already defined")
        t = Tensor(np.array(value, dtype=DTYPE), requires_grad=not frozen)
        self._entries[name] = Param(t, frozen)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return ((n, p.tensor) for n, p in self._entries.items())

    def entry(self, name: str) -> Param:
        return self._entries[name]

    def grad(self, name: str) -> np.ndarray:
        return self._entries[name].grad

    def is_frozen(self, name: str) -> bool:
        return self._entries[name].frozen

    def set_frozen(self, name: str, frozen: bool = True) -> None:
        p = self._entries[name]
        p.frozen = frozen
        p.tensor.requires_grad = not frozen
        p.tensor.grad = None

    def trainable(self) -> list[str]:
        return [n for n, p in self._entries.items() if not p.frozen]

    def zero_grad(self) -> None:
        for p in self._entries.values():
            p.tensor.grad = None

    def n_values(self, trainable_only: bool = False) -> int:
        return sum(p.tensor.size for p in self._entries.values() if not (trainable_only and p.frozen))

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.tensor.data.copy() for n, p in self._entries.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, value in state.items():
            t = self._entries[name].tensor
            value = np.asarray(value, dtype=DTYPE)
            if value.shape != t.shape:
                raise ShapeError(f"load parameter {name!r}", t.shape, value.shape)
            t.data = value.copy()


# ---------------------------------------------------------------- gradient checks

@dataclass
class GradCheckConfig:
    epsilon: float = 1e-5
    rel_tol: float = 1e-4
    exclusion_band: float = 1e-3

    def __post_init__(self):
        if self.epsilon <= 0 or self.rel_tol <= 0:
            raise ValueError("epsilon and rel_tol must be positive")


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst: tuple  # (input index or name, flat coordinate)
    n_checked: int
    rel_tol: float
    errors: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.rel_tol


class NonFiniteGradient(ArithmeticError):
    def __init__(self, where, coord):
        super().__init__(f"non-finite gradient at {where}, coordinate {coord}")
        self.where = where
        self.coord = coord


def _projector(out: Tensor, seed: int) -> np.ndarray:
    if out.size == 1:
        return np.ones(out.shape)
    return np.random.default_rng(seed).standard_normal(out.shape)


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    cfg: GradCheckConfig | None = None,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backprop against central differences for ``fn(*inputs)``.

    Non-scalar outputs are reduced with a fixed random projection so every
    output coordinate contributes.  Error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    cfg = cfg or GradCheckConfig()
    arrays = [np.array(x, dtype=DTYPE) for x in inputs]
    leaves = [Tensor(x, requires_grad=True) for x in arrays]
    out = fn(*leaves)
    proj = _projector(out, seed)
    (out * proj).sum().backward()

    def value(xs):
        return float((fn(*[Tensor(x) for x in xs]).data * proj).sum())

    rng = np.random.default_rng(seed + 1)
    errs = []
    worst, worst_at = -1.0, None
    for i, (x, leaf) in enumerate(zip(arrays, leaves)):
        analytic = np.zeros_like(x) if leaf.grad is None else leaf.grad
        coords = np.arange(x.size)
        if max_coords is not None and x.size > max_coords:
            coords = rng.choice(x.size, size=max_coords, replace=False)
        flat = x.reshape(-1)
        for c in coords:
            a = analytic.reshape(-1)[c]
            if not np.isfinite(a):
                raise NonFiniteGradient(i, int(c))
            orig = flat[c]
            flat[c] = orig + cfg.epsilon
            fp = value(arrays)
            flat[c] = orig - cfg.epsilon
            fm = value(arrays)
            flat[c] = orig
            num = (fp - fm) / (2 * cfg.epsilon)
            err = abs(a - num) / max(1.0, abs(a))
            errs.append(err)
            if err > worst:
                worst, worst_at = err, (i, int(c))
    return GradCheckReport(max(errs, default=0.0), worst_at, len(errs), cfg.rel_tol, errs)


def grad_check_params(
    loss_fn: Callable[[], Tensor],
    store: ParamStore,
    coords: Iterable[tuple[str, int]],
    cfg: GradCheckConfig | None = None,
) -> GradCheckReport:
    """Check ``loss_fn()`` gradients against central differences at chosen parameter coordinates."""
    cfg = cfg or GradCheckConfig()
    store.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {n: store.grad(n).copy() for n in store}
    errs = []
    worst, worst_at = -1.0, None
    for name, c in coords:
        a = analytic[name].reshape(-1)[c]
        if not np.isfinite(a):
            raise NonFiniteGradient(name, c)
        flat = store[name].data.reshape(-1)
        orig = flat[c]
        flat[c] = orig + cfg.epsilon
        fp = loss_fn().item()
        flat[c] = orig - cfg.epsilon
        fm = loss_fn().item()
        flat[c] = orig
        num = (fp - fm) / (2 * cfg.epsilon)
        err = abs(a - num) / max(1.0, abs(a))
        errs.append(err)
        if err > worst:
            worst, worst_at = err, (name, c)
    store.zero_grad()
    return GradCheckReport(max(errs, default=0.0), worst_at, len(errs), cfg.rel_tol, errs)


def sample_away_from_kinks(rng: np.random.Generator, shape, band: float, scale: float = 1.0) -> np.ndarray:
    """Standard-normal draws (times ``scale``) with every |x| > band."""
    x = np.array(rng.standard_normal(shape) * scale, dtype=DTYPE)
    small = np.abs(x) <= band
    x[small] = np.where(x[small] >= 0, 1.0, -1.0) * (band + rng.uniform(band, 2 * band + scale, small.sum()))
    return x
