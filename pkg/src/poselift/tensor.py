"""Dense float64 tensors with reverse-mode automatic differentiation.

Tensors wrap contiguous row-major numpy arrays. Each differentiable operation
records the node's parents and a gradient closure; ``backward`` replays the
reachable part of the graph in exact reverse creation order (creation order is
a topological order because inputs always exist before their consumers).

Broadcasting is deliberately restricted: elementwise ops require identical
shapes except for a 1-D bias added on the last axis. Anything wider must be
spelled out with ``expand_leading``.
"""

from __future__ import annotations

import contextlib
import itertools
import struct
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "CheckpointError",
    "backward",
    "grad_check",
    "primitive_forward",
    "no_grad",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "transpose",
    "reshape",
    "concat",
    "slice_axis",
    "gather_rows",
    "softmax_lastdim",
    "layernorm_lastdim",
    "gelu",
    "conv1d_valid",
    "expand_leading",
    "sum_all",
    "mean_all",
    "sum_lastdim",
    "sqrt",
    "OptimizerState",
    "AdamW",
    "adamw_step",
    "save_tensors",
    "load_tensors",
]


class ShapeError(ValueError):
    """Raised when operand shapes violate a primitive's contract."""


_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation-only forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_id", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all dispatch to module-level primitives
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes=None) -> "Tensor":
        return transpose(self, axes)


def _record(out_data, parents: Sequence[Tensor], grad_fn) -> Tensor:
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=requires)
    if requires:
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _reachable_reverse_order(root: Tensor) -> list[Tensor]:
    """Graph nodes that feed ``root``, sorted in reverse creation order."""
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node._id in seen:
            continue
        seen[node._id] = node
        stack.extend(node._parents)
    return [seen[i] for i in sorted(seen, reverse=True)]


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``.

    ``loss`` must be scalar. Leaf gradients accumulate across calls; clear them
    with ``zero_grad`` between steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not require grad (no recorded graph)")
    grads: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.data)}
    for node in _reachable_reverse_order(loss):
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if node._grad_fn is None:
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node._grad_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product on the last two axes.

    Accepted operand ranks: both 2-D; one side 2-D against a batched other
    side; or equal batch dimensions on both. No other broadcasting.
    """
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {ad.shape} vs {bd.shape}")
    if ad.ndim > 2 and bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions differ, {ad.shape} vs {bd.shape}")
    out = np.matmul(ad, bd)

    def grad_fn(g):
        if bd.ndim == 2 and ad.ndim >= 2:
            ga = np.matmul(g, bd.T)
            gb = np.matmul(ad.reshape(-1, ad.shape[-1]).T, g.reshape(-1, g.shape[-1]))
        elif ad.ndim == 2 and bd.ndim > 2:
            ga = np.tensordot(g, bd, axes=([*range(g.ndim - 2), g.ndim - 1], [*range(bd.ndim - 2), bd.ndim - 1]))
            gb = np.matmul(ad.T, g)
        else:
            ga = np.matmul(g, np.swapaxes(bd, -1, -2))
            gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return ga, gb

    return _record(out, (a, b), grad_fn)


def _check_addsub(op: str, a: Tensor, b: Tensor) -> bool:
    """Returns True for the bias case (1-D b on the last axis of a)."""
    if a.shape == b.shape:
        return False
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return True
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match (bias-add on last axis is the only broadcast)")


def add(a: Tensor, b: Tensor) -> Tensor:
    bias = _check_addsub("add", a, b)
    out = a.data + b.data

    def grad_fn(g):
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if bias else g
        return g, gb

    return _record(out, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    bias = _check_addsub("sub", a, b)
    out = a.data - b.data

    def grad_fn(g):
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if bias else g
        return g, -gb

    return _record(out, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} must match exactly")
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _record(a.data * s, (a,), lambda g: (g * s,))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} are not a permutation for shape {a.shape}")
    inverse = np.argsort(axes)
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from exc
    return _record(out, (a,), lambda g: (g.reshape(old),))


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat: empty input list")
    shapes = [p.shape for p in parts]
    base = list(shapes[0])
    for s in shapes[1:]:
        probe = list(s)
        probe[axis] = base[axis]
        if probe != base:
            raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [s[axis] for s in shapes]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        slicer = [slice(None)] * g.ndim
        pieces = []
        for i in range(len(sizes)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(slicer)])
        return pieces

    return _record(out, tuple(parts), grad_fn)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    n = a.shape[axis]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice: range [{start}:{stop}] out of bounds for axis {axis} of shape {a.shape}")
    slicer = [slice(None)] * a.ndim
    slicer[axis] = slice(start, stop)
    slicer = tuple(slicer)
    out = a.data[slicer]
    full_shape = a.shape

    def grad_fn(g):
        ga = np.zeros(full_shape, dtype=np.float64)
        ga[slicer] = g
        return (ga,)

    return _record(out, (a,), grad_fn)


def gather_rows(a: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: indices must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for axis 0 of shape {a.shape}")
    out = a.data[idx]
    full_shape = a.shape

    def grad_fn(g):
        ga = np.zeros(full_shape, dtype=np.float64)
        np.add.at(ga, idx, g)
        return (ga,)

    return _record(out, (a,), grad_fn)


def softmax_lastdim(a: Tensor) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _record(s, (a,), grad_fn)


def layernorm_lastdim(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layernorm_lastdim: affine shapes {gamma.shape}/{beta.shape} do not match last dim {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = xhat * gamma.data + beta.data
    gd = gamma.data

    def grad_fn(g):
        gxhat = g * gd
        m1 = gxhat.mean(axis=-1, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (gxhat - m1 - xhat * m2)
        ggamma = (g * xhat).reshape(-1, d).sum(axis=0)
        gbeta = g.reshape(-1, d).sum(axis=0)
        return gx, ggamma, gbeta

    return _record(out, (x, gamma, beta), grad_fn)


_GELU_C = np.sqrt(2.0 / np.pi)


def _gelu_value(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    du = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    # derivative looked up at call time so tests can swap in a broken rule
    return _record(_gelu_value(x), (a,), lambda g: (g * _gelu_grad(x),))


def conv1d_valid(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Valid 1-D convolution along the next-to-last axis.

    ``x`` is ``[L, C]`` or ``[B, L, C]``; ``w`` is ``[K, C, O]``; optional bias
    ``[O]``. Output length is ``L - K + 1``.
    """
    if w.ndim != 3:
        raise ShapeError(f"conv1d_valid: weight must be [K, C, O], got {w.shape}")
    batched = x.ndim == 3
    if x.ndim not in (2, 3):
        raise ShapeError(f"conv1d_valid: input must be [L, C] or [B, L, C], got {x.shape}")
    k, c, o = w.shape
    length = x.shape[-2]
    if x.shape[-1] != c or length < k:
        raise ShapeError(f"conv1d_valid: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (o,):
        raise ShapeError(f"conv1d_valid: bias {b.shape} does not match out channels {o}")

    xd = x.data if batched else x.data[None]
    wd = w.data
    l_out = length - k + 1
    out = np.empty((xd.shape[0], l_out, o), dtype=np.float64)
    for i in range(l_out):
        out[:, i, :] = np.tensordot(xd[:, i : i + k, :], wd, axes=([1, 2], [0, 1]))
    if b is not None:
        out = out + b.data
    if not batched:
        out = out[0]

    def grad_fn(g):
        gb3 = g if batched else g[None]
        gx = np.zeros_like(xd)
        gw = np.zeros_like(wd)
        for i in range(l_out):
            gi = gb3[:, i, :]
            gw += np.einsum("bkc,bo->kco", xd[:, i : i + k, :], gi)
            gx[:, i : i + k, :] += np.einsum("bo,kco->bkc", gi, wd)
        if not batched:
            gx = gx[0]
        gbias = gb3.sum(axis=(0, 1)) if b is not None else None
        return (gx, gw, gbias) if b is not None else (gx, gw)

    parents = (x, w) if b is None else (x, w, b)
    return _record(out, parents, grad_fn)


def expand_leading(a: Tensor, k: int) -> Tensor:
    """Stack ``k`` identical copies along a new leading axis."""
    if k < 1:
        raise ShapeError(f"expand_leading: k must be positive, got {k}")
    out = np.broadcast_to(a.data, (k,) + a.shape).copy()
    return _record(out, (a,), lambda g: (g.sum(axis=0),))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _record(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.size)


def sum_lastdim(a: Tensor) -> Tensor:
    out = a.data.sum(axis=-1)
    n = a.shape[-1]
    return _record(out, (a,), lambda g: (np.repeat(g[..., None], n, axis=-1),))


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root; the derivative at exactly zero is taken as 0."""
    r = np.sqrt(a.data)

    def grad_fn(g):
        with np.errstate(divide="ignore"):
            d = np.where(r > 0.0, 0.5 / np.where(r > 0.0, r, 1.0), 0.0)
        return (g * d,)

    return _record(r, (a,), grad_fn)


_PRIMITIVES: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "transpose": transpose,
    "reshape": reshape,
    "concat": concat,
    "slice": slice_axis,
    "softmax_lastdim": softmax_lastdim,
    "layernorm_lastdim": layernorm_lastdim,
    "gelu": gelu,
    "conv1d_valid": conv1d_valid,
    "gather_rows": gather_rows,
}


def primitive_forward(op: str, inputs: Iterable[Tensor], **kwargs) -> Tensor:
    """Dispatch one named primitive. Records a graph node if any input requires grad."""
    try:
        fn = _PRIMITIVES[op]
    except KeyError:
        raise ValueError(f"unknown primitive {op!r}; valid: {sorted(_PRIMITIVES)}") from None
    inputs = list(inputs)
    if op == "concat":
        return fn(inputs, **kwargs)
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5, tol: float = 1e-4) -> tuple[bool, float]:
    """Compare analytic gradients of scalar ``f`` against central differences.

    Passes iff ``max_i |analytic_i - numeric_i| / max(1, |analytic_i|) <= tol``.
    Non-finite values fail with the offending flat index reported via warning.
    """
    leaf = Tensor(x.data.copy(), requires_grad=True)
    out = f(leaf)
    if out.data.size != 1:
        raise ValueError(f"grad_check: f must be scalar-valued, got shape {out.shape}")
    backward(out)
    analytic = (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)).ravel()

    base = x.data.ravel().copy()
    numeric = np.zeros_like(base)
    for i in range(base.size):
        bumped = base.copy()
        bumped[i] = base[i] + h
        fp = f(Tensor(bumped.reshape(x.shape))).item()
        bumped[i] = base[i] - h
        fm = f(Tensor(bumped.reshape(x.shape))).item()
        numeric[i] = (fp - fm) / (2.0 * h)

    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    if not np.all(np.isfinite(err)):
        bad = int(np.argmax(~np.isfinite(err)))
        warnings.warn(f"grad_check: non-finite value at flat index {bad}")
        return False, float("inf")
    max_err = float(err.max()) if err.size else 0.0
    return max_err <= tol, max_err


def finite_difference_grad(loss_fn: Callable[[], float], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``loss_fn()`` w.r.t. one parameter tensor.

    ``loss_fn`` must re-evaluate the loss from the parameter's current data.
    The parameter is restored exactly afterwards.
    """
    base = param.data
    flat = base.ravel().copy()
    num = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        param.data = flat.reshape(base.shape)
        fp = loss_fn()
        flat[i] = orig - h
        param.data = flat.reshape(base.shape)
        fm = loss_fn()
        flat[i] = orig
        num[i] = (fp - fm) / (2.0 * h)
    param.data = flat.reshape(base.shape)
    return num.reshape(base.shape)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    """Adam moments plus hyperparameters; decay is decoupled from the moments."""

    lr: float = 8e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.1
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: Mapping[str, Tensor], state: OptimizerState) -> None:
    """One bias-corrected Adam step with decoupled weight decay.

    Decay is applied as ``p -= lr * wd * p`` independently of the moment
    update. Every parameter must carry a gradient.
    """
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"adamw_step: parameter {name!r} has no gradient")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        step = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data = p.data - state.lr * state.weight_decay * p.data - state.lr * step


class AdamW:
    """Convenience wrapper binding a parameter dict to an ``OptimizerState``."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 8e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.1):
        self.params = dict(params)
        self.state = OptimizerState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)

    def step(self, lr: float | None = None) -> None:
        if lr is not None:
            self.state.lr = lr
        adamw_step(self.params, self.state)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


# ---------------------------------------------------------------------------
# checkpoint I/O

_MAGIC = b"PFV2"
_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is malformed; the message carries the byte offset."""


def save_tensors(path, named: Mapping[str, "Tensor | np.ndarray"]) -> None:
    """Write named tensors to the flat binary checkpoint format."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(named)))
        for name, t in named.items():
            arr = np.ascontiguousarray(t.data if isinstance(t, Tensor) else t, dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes for {what} at offset {fh.tell() - len(buf)}")
    return buf


def load_tensors(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into an ordered name-to-array mapping."""
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != _MAGIC:
            raise CheckpointError(f"bad magic {magic!r} at offset 0, expected {_MAGIC!r}")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != _VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, "dims")) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            raw = _read_exact(fh, 8 * n, f"payload of {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
    return out
