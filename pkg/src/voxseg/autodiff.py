"""Minimal dense-tensor computation graph with reverse-mode differentiation.

The operator set is closed and deliberately small: exactly what the
volumetric network and its losses need.  Tensors link back to the tensors
that produced them, and creation order doubles as topological order, so
``backward`` walks the implicit graph from a scalar output in reverse
creation order and accumulates gradients additively into every tensor
that requires them.

Elementwise operators accept equal shapes or a size-1 (scalar) operand;
there is no general broadcasting.  Training runs in float32, gradient
checking in float64.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError

_SEQ = itertools.count()


class Tensor:
    """N-dimensional value participating in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._seq = next(_SEQ)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"<Tensor{tag} shape={self.data.shape} dtype={self.data.dtype}>"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-mode pass from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise ContractError(f"backward() starts from a scalar, got shape {self.data.shape}")
        self.grad = np.ones_like(self.data)
        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[Tensor] = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node._parents)
        nodes.sort(key=lambda t: t._seq, reverse=True)
        for node in nodes:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar; numbers wrap into constants of matching dtype
    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    def __rmul__(self, other):
        return mul(_wrap(other, self), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self))

    def __rtruediv__(self, other):
        return div(_wrap(other, self), self)

    def __neg__(self):
        return scale(self, -1.0)


def constant(data, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _binary_shapes(a: Tensor, b: Tensor):
    """Equal shapes or one size-1 operand; returns the output shape."""
    if a.data.shape == b.data.shape:
        return a.data.shape
    if a.data.size == 1:
        return b.data.shape
    if b.data.size == 1:
        return a.data.shape
    raise ShapeError(f"operand shapes differ: {a.data.shape} vs {b.data.shape}")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.data.shape:
        return g
    return np.sum(g, dtype=g.dtype).reshape(t.data.shape)


# ---------------------------------------------------------------------------
# Elementwise suite
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b)

    def bwd(g):
        if a.requires_grad:
            a._accum(_reduce_to(g, a))
        if b.requires_grad:
            b._accum(_reduce_to(g, b))

    return _node(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b)

    def bwd(g):
        if a.requires_grad:
            a._accum(_reduce_to(g, a))
        if b.requires_grad:
            b._accum(_reduce_to(-g, b))

    return _node(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b)

    def bwd(g):
        if a.requires_grad:
            a._accum(_reduce_to(g * b.data, a))
        if b.requires_grad:
            b._accum(_reduce_to(g * a.data, b))

    return _node(a.data * b.data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b)

    def bwd(g):
        if a.requires_grad:
            a._accum(_reduce_to(g / b.data, a))
        if b.requires_grad:
            b._accum(_reduce_to(-g * a.data / (b.data * b.data), b))

    return _node(a.data / b.data, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * s)

    return _node(a.data * s, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g):
        if a.requires_grad:
            a._accum(g * mask)  # subgradient 0 at the kink

    return _node(np.where(mask, a.data, 0), (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * out * (1.0 - out))

    return _node(out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a._accum(g / a.data)

    return _node(np.log(a.data), (a,), bwd)


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    def bwd(g):
        if a.requires_grad:
            a._accum(np.broadcast_to(g, a.data.shape))

    return _node(np.sum(a.data), (a,), bwd)


def mean(a: Tensor) -> Tensor:
    n = a.data.size

    def bwd(g):
        if a.requires_grad:
            a._accum(np.broadcast_to(g / n, a.data.shape))

    return _node(np.mean(a.data), (a,), bwd)


# ---------------------------------------------------------------------------
# Spatial operators on (N, C, D, H, W) tensors
# ---------------------------------------------------------------------------

def _require_5d(a: Tensor, op: str) -> None:
    if a.data.ndim != 5:
        raise ShapeError(f"{op} expects a (N, C, D, H, W) tensor, got shape {a.data.shape}")


def max_pool2(a: Tensor) -> Tensor:
    """2x max pooling over each spatial axis; ties route to the first voxel."""
    _require_5d(a, "max_pool2")
    n, c, d, h, w = a.data.shape
    if d % 2 or h % 2 or w % 2:
        raise ShapeError(f"max_pool2 needs even spatial dims, got {(d, h, w)}")
    blocks = (
        a.data.reshape(n, c, d // 2, 2, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 6, 3, 5, 7)
        .reshape(n, c, d // 2, h // 2, w // 2, 8)
    )
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        if not a.requires_grad:
            return
        onehot = np.arange(8).reshape(1, 1, 1, 1, 1, 8) == idx[..., None]
        gb = (g[..., None] * onehot).astype(g.dtype)
        gb = gb.reshape(n, c, d // 2, h // 2, w // 2, 2, 2, 2)
        a._accum(gb.transpose(0, 1, 2, 5, 3, 6, 4, 7).reshape(n, c, d, h, w))

    return _node(out, (a,), bwd)


def upsample2x(a: Tensor) -> Tensor:
    """Nearest-neighbor doubling of the three spatial axes."""
    _require_5d(a, "upsample2x")
    n, c, d, h, w = a.data.shape
    out = np.broadcast_to(
        a.data[:, :, :, None, :, None, :, None], (n, c, d, 2, h, 2, w, 2)
    ).reshape(n, c, 2 * d, 2 * h, 2 * w)

    def bwd(g):
        if a.requires_grad:
            a._accum(g.reshape(n, c, d, 2, h, 2, w, 2).sum(axis=(3, 5, 7)))

    return _node(out, (a,), bwd)


def _im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    """(C, D, H, W) -> (C*k^3, D*H*W) column matrix under same padding."""
    c, d, h, w = x.shape
    if k == 1:
        return x.reshape(c, d * h * w)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))
    return win.transpose(0, 4, 5, 6, 1, 2, 3).reshape(c * k * k * k, d * h * w)


def conv3d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """3-D cross-correlation with same padding (odd kernels).

    ``x``: (N, C_in, D, H, W); ``weight``: (C_out, C_in, k, k, k);
    ``bias``: (C_out,).  Backward produces exact gradients for all three.
    """
    _require_5d(x, "conv3d")
    if weight.data.ndim != 5 or not (weight.data.shape[2] == weight.data.shape[3] == weight.data.shape[4]):
        raise ShapeError(f"conv3d weight must be (C_out, C_in, k, k, k), got {weight.data.shape}")
    n, ci, d, h, w = x.data.shape
    co, wci, k = weight.data.shape[0], weight.data.shape[1], weight.data.shape[2]
    if wci != ci:
        raise ShapeError(f"channel mismatch: input {x.data.shape} vs weight {weight.data.shape}")
    if bias.data.shape != (co,):
        raise ShapeError(f"bias shape {bias.data.shape} does not match C_out={co}")
    if k % 2 == 0:
        raise ShapeError(f"same padding needs an odd kernel, got k={k}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    pad = (k - 1) // 2

    wmat = weight.data.reshape(co, ci * k * k * k)
    cols = [None] * n
    full = np.empty((n, co, d, h, w), dtype=x.data.dtype)
    for i in range(n):
        cols[i] = _im2col(x.data[i], k, pad)
        full[i] = (wmat @ cols[i]).reshape(co, d, h, w)
    full += bias.data.reshape(1, co, 1, 1, 1)
    out = full if stride == 1 else np.ascontiguousarray(full[:, :, ::stride, ::stride, ::stride])

    def bwd(g):
        if stride == 1:
            gfull = g
        else:
            gfull = np.zeros((n, co, d, h, w), dtype=g.dtype)
            gfull[:, :, ::stride, ::stride, ::stride] = g
        gmat = gfull.reshape(n, co, d * h * w)
        if bias.requires_grad:
            bias._accum(gmat.sum(axis=(0, 2)))
        if weight.requires_grad:
            dw = np.zeros_like(weight.data)
            for i in range(n):
                dw += (gmat[i] @ cols[i].T).reshape(weight.data.shape)
            weight._accum(dw)
        if x.requires_grad:
            # input gradient = correlation of the output gradient with the
            # spatially flipped, channel-transposed kernel
            wt = weight.data[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4)
            wtmat = wt.reshape(ci, co * k * k * k)
            dx = np.empty_like(x.data)
            for i in range(n):
                dx[i] = (wtmat @ _im2col(gfull[i], k, pad)).reshape(ci, d, h, w)
            x._accum(dx)

    return _node(out, (x, weight, bias), bwd)


# ---------------------------------------------------------------------------
# Finite-difference gradient checker
# ---------------------------------------------------------------------------

@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    tolerance: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def summary(self) -> str:
        lines = [
            f"{'PASS' if e.passed else 'FAIL'}  {e.name:<28} max_rel_err={e.max_rel_err:.3e}"
            for e in self.entries
        ]
        return "\n".join(lines)


def _rel_err(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = np.abs(a - b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    err = diff / denom
    return np.where(diff < 1e-8, 0.0, err)


def grad_check(builder, inputs: list[Tensor], tol: float = 1e-3, h: float = 1e-4) -> GradCheckReport:
    """Compare reverse-mode gradients against central finite differences.

    ``builder`` maps the leaf ``inputs`` to one scalar Tensor and is called
    repeatedly while leaf data is perturbed, so it must rebuild its graph
    from the leaves on every call.  Inputs must be float64.
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ContractError(f"grad_check needs float64 inputs, got {t.data.dtype}")
    for t in inputs:
        t.zero_grad()
    out = builder(inputs)
    if out.data.size != 1:
        raise ContractError(f"builder must produce a scalar, got shape {out.data.shape}")
    out.backward()
    analytic = [None if t.grad is None else t.grad.copy() for t in inputs]

    report = GradCheckReport(tolerance=tol)
    for slot, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        ana = analytic[slot]
        if ana is None:
            ana = np.zeros_like(t.data)
        fd = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        fd_flat = fd.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fplus = builder(inputs).item()
            flat[j] = orig - h
            fminus = builder(inputs).item()
            flat[j] = orig
            fd_flat[j] = (fplus - fminus) / (2.0 * h)
        err = float(_rel_err(ana, fd).max()) if flat.size else 0.0
        name = t.name or f"input{slot}"
        report.entries.append(GradCheckEntry(name=name, max_rel_err=err, passed=err < tol))
    return report
