"""Dense numpy tensors with reverse-mode automatic differentiation.

Each op computes its forward value eagerly and records a closure that maps
the output gradient to parent gradients. ``backward`` walks the recorded
graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
import logging
import threading
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from uecct.errors import DataError
from uecct.maskgen import NEG_INF

logger = logging.getLogger(__name__)

DTYPE = np.float64
LAYER_NORM_EPS = 1e-5
BCE_EPS = 1e-7


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        _parents: tuple[Tensor, ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_lift(other), -1.0))

    def __rsub__(self, other):
        return add(_lift(other), scale(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        return transpose(self, axes or None)

    def sum(self, axis=None) -> Tensor:
        return tsum(self, axis)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_grad_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (per thread); used for evaluation."""
    previous = grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    requires = grad_enabled() and any(p.requires_grad for p in parents)
    if not requires:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# =============================================================================
# Core ops
# =============================================================================


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise DataError(f"add: incompatible shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    """Element-wise product with broadcasting."""
    a, b = _lift(a), _lift(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise DataError(f"mul: incompatible shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        _accumulate(a, g * c)

    return _make(a.data * c, (a,), backward)


def matmul(a, b) -> Tensor:
    """Batched matrix product; leading axes broadcast like ``np.matmul``."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DataError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        _accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(data, (a, b), backward)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(a, np.transpose(g, inverse))

    return _make(np.transpose(a.data, axes), (a,), backward)


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    try:
        data = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DataError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from exc
    return _make(data, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DataError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(index)])

    return _make(data, tensors, backward)


def take(a: Tensor, index) -> Tensor:
    """Basic or advanced indexing (``a[index]``)."""

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        _accumulate(a, full)

    return _make(a.data[index], (a,), backward)


def tsum(a: Tensor, axis=None) -> Tensor:
    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape))
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _make(np.sum(a.data, axis=axis), (a,), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis), 1.0 / float(count))


# Set while grad_check evaluates a function; relu records inputs closer to zero
# than the finite-difference step because the finite difference straddles the kink there.
_kink_watch: dict | None = None


@contextlib.contextmanager
def kink_watch(threshold: float):
    global _kink_watch
    previous = _kink_watch
    _kink_watch = {"threshold": threshold, "hit": False}
    try:
        yield _kink_watch
    finally:
        _kink_watch = previous


def relu(a: Tensor) -> Tensor:
    if _kink_watch is not None and np.any(np.abs(a.data) <= _kink_watch["threshold"]):
        _kink_watch["hit"] = True
    positive = a.data > 0

    def backward(g):
        _accumulate(a, g * positive)

    return _make(np.where(positive, a.data, 0.0), (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accumulate(a, g * out * (1.0 - out))

    return _make(out, (a,), backward)


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis of ``a + mask``.

    ``mask`` is additive ({0, NEG_INF}) and broadcast against ``a``. Masked
    entries get probability exactly 0; a fully masked row comes out as zeros.
    """
    x = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=DTYPE)
        try:
            z = x + mask
        except ValueError as exc:
            raise DataError(f"softmax: mask shape {mask.shape} does not fit {a.shape}") from exc
        masked = np.broadcast_to(mask <= NEG_INF / 2, z.shape)
        peak = np.max(np.where(masked, -np.inf, z), axis=-1, keepdims=True)
        peak = np.where(np.isfinite(peak), peak, 0.0)
        e = np.where(masked, 0.0, np.exp(np.where(masked, 0.0, z - peak)))
    else:
        peak = np.max(x, axis=-1, keepdims=True)
        e = np.exp(x - peak)
    total = e.sum(axis=-1, keepdims=True)
    out = e / np.where(total == 0.0, 1.0, total)

    def backward(g):
        inner = np.sum(g * out, axis=-1, keepdims=True)
        _accumulate(a, _unbroadcast(out * (g - inner), a.shape))

    return _make(out, (a,), backward)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then apply the affine ``gamma * x + beta``."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = np.mean(centered**2, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    d = x.shape[-1]

    def backward(g):
        _accumulate(gamma, _unbroadcast(g * xhat, gamma.shape))
        _accumulate(beta, _unbroadcast(g, beta.shape))
        if a.requires_grad:
            gx = g * gamma.data
            dx = (
                inv_std
                / d
                * (d * gx - gx.sum(axis=-1, keepdims=True) - xhat * np.sum(gx * xhat, axis=-1, keepdims=True))
            )
            _accumulate(a, dx)

    return _make(xhat * gamma.data + beta.data, (a, gamma, beta), backward)


# =============================================================================
# Masked memory attention kernel
# =============================================================================


@dataclass(frozen=True)
class ActiveIndex:
    """Unmasked (batch, row, col) triples of a (batch, N, d_l) mask stack."""

    batch: np.ndarray
    row: np.ndarray
    col: np.ndarray

    @classmethod
    def from_masks(cls, masks: np.ndarray) -> ActiveIndex:
        b, r, c = np.nonzero(np.asarray(masks) > NEG_INF / 2)
        return cls(batch=b, row=r, col=c)

    def __len__(self) -> int:
        return int(self.batch.size)


def sparse_attend(probs: Tensor, memory: Tensor, active: ActiveIndex) -> Tensor:
    """out[b, h, r] = sum over active (b, r, c) of probs[b, 0, r, c] * memory[b, h, c].

    ``probs`` is (B, 1, N, d_l), shared by all heads; ``memory`` is
    (B, H, d_l, d_k). Only the listed entries are touched.
    """
    P, U = probs.data, memory.data
    B, _, N, _ = P.shape
    _, H, _, dk = U.shape
    b, r, c = active.batch, active.row, active.col
    w = P[b, 0, r, c]
    picked = U[b, :, c, :]  # (E, H, d_k)
    out_t = np.zeros((B, N, H, dk), dtype=DTYPE)
    np.add.at(out_t, (b, r), w[:, None, None] * picked)

    def backward(g):
        g_rows = np.transpose(g, (0, 2, 1, 3))[b, r]  # (E, H, d_k)
        if probs.requires_grad:
            gp = np.zeros_like(P)
            np.add.at(gp, (b, 0, r, c), np.sum(g_rows * picked, axis=(1, 2)))
            _accumulate(probs, gp)
        if memory.requires_grad:
            gu_t = np.zeros((B, U.shape[2], H, dk), dtype=DTYPE)
            np.add.at(gu_t, (b, c), w[:, None, None] * g_rows)
            _accumulate(memory, np.transpose(gu_t, (0, 2, 1, 3)))

    return _make(np.transpose(out_t, (0, 2, 1, 3)), (probs, memory), backward)


# =============================================================================
# Loss
# =============================================================================


def bce_loss(pred: Tensor, target, active) -> Tensor:
    """-sum over active positions of t*log(p) + (1-t)*log(1-p), p clamped to [eps, 1-eps]."""
    t = np.asarray(target, dtype=DTYPE)
    keep = np.asarray(active, dtype=bool)
    if t.shape != pred.shape or keep.shape != pred.shape:
        raise DataError(
            f"bce_loss: pred {pred.shape}, target {t.shape}, active {keep.shape} must match"
        )
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    terms = np.where(keep, t * np.log(p) + (1.0 - t) * np.log1p(-p), 0.0)
    inside = (pred.data >= BCE_EPS) & (pred.data <= 1.0 - BCE_EPS)

    def backward(g):
        d = -(t / p - (1.0 - t) / (1.0 - p))
        _accumulate(pred, g * np.where(keep & inside, d, 0.0))

    return _make(np.array(-terms.sum()), (pred,), backward)


# =============================================================================
# Backward pass and parameters
# =============================================================================


def _topological(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf reachable from a scalar loss."""
    if loss.data.size != 1:
        raise DataError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward() already ran on this graph; rebuild it before calling again")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            if not node.is_leaf:
                node.grad = None
    loss._consumed = True


def parameter(shape: Sequence[int], rng: np.random.Generator, fan_in: int | None = None, name=None) -> Tensor:
    """Trainable weight drawn from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    fan_in = fan_in if fan_in is not None else shape[0]
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=tuple(shape)), requires_grad=True, name=name)


def zeros(shape: Sequence[int], name=None) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), requires_grad=True, name=name)


def ones(shape: Sequence[int], name=None) -> Tensor:
    return Tensor(np.ones(tuple(shape)), requires_grad=True, name=name)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# =============================================================================
# Finite-difference gradient check
# =============================================================================


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    status: str  # "pass", "fail" or "kink"
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def grad_check(
    f: Callable[[Tensor], Tensor], point: Tensor, tol: float = 1e-4, step: float = 1e-6
) -> GradCheckReport:
    """Compare the analytic gradient of scalar ``f`` at ``point`` with central differences.

    The error is max |analytic - numeric| over entries, relative to the
    largest gradient magnitude. A relu input within ``step`` of zero makes the
    check report "kink" instead of pass/fail.
    """
    x0 = np.array(point.data, dtype=DTYPE, copy=True)
    trial = Tensor(x0.copy(), requires_grad=True)
    with kink_watch(step) as watch:
        loss = f(trial)
        backward(loss)
        analytic = trial.grad if trial.grad is not None else np.zeros_like(x0)

        numeric = np.zeros_like(x0)
        flat = numeric.reshape(-1)
        for i in range(x0.size):
            bumped = x0.copy().reshape(-1)
            bumped[i] += step
            up = f(Tensor(bumped.reshape(x0.shape))).item()
            bumped[i] -= 2 * step
            down = f(Tensor(bumped.reshape(x0.shape))).item()
            flat[i] = (up - down) / (2 * step)

    scale_ = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    err = float(np.max(np.abs(analytic - numeric)) / scale_)
    if watch["hit"]:
        status = "kink"
    else:
        status = "pass" if err <= tol else "fail"
    if status != "pass":
        logger.debug("grad_check %s: max relative error %.3e (tol %.1e)", status, err, tol)
    return GradCheckReport(max_rel_error=err, tol=tol, status=status, analytic=analytic, numeric=numeric)
