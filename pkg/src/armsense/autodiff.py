"""Minimal reverse-mode autodiff over numpy arrays.

Tensors wrap row-major numpy buffers; every op records a closure that turns
the output adjoint into input adjoints. Ops accept leading batch axes and
un-broadcast gradients back to parameter shapes, so the same graph code runs
per-sample (for gradient checks) and per-minibatch (for training).
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import (
    GraphConsumed,
    HeadDivisibility,
    NonScalarOutput,
    ProbabilityOutOfRange,
    ShapeMismatch,
)

RngState = np.random.Generator


def make_rng(seed: int) -> RngState:
    """Deterministic generator: same seed and call sequence give identical draws."""
    return np.random.default_rng(seed)


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            # copy: adjoints may alias forward buffers owned by other nodes
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (have, want) in enumerate(zip(g.shape, shape)):
        if want == 1 and have != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _swap_last(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul {a.data.shape} @ {b.data.shape}")
    # promote 1-D operands so the adjoint algebra sees matrices throughout
    a_vec = a.data.ndim == 1
    b_vec = b.data.ndim == 1
    a2 = a.data[None, :] if a_vec else a.data
    b2 = b.data[:, None] if b_vec else b.data

    def backward(g):
        g2 = g
        if a_vec:  # reshape handles the 0-d vector@vector adjoint too
            g2 = g2.reshape(g2.shape[:-1] + (1,) + g2.shape[-1:])
        if b_vec:
            g2 = g2.reshape(g2.shape + (1,))
        if a.requires_grad:
            da = g2 @ _swap_last(b2)
            if a_vec:
                da = np.squeeze(da, axis=-2)
            a.accumulate_grad(_unbroadcast(da, a.data.shape))
        if b.requires_grad:
            db = _swap_last(a2) @ g2
            if b_vec:
                db = np.squeeze(db, axis=-1)
            b.accumulate_grad(_unbroadcast(db, b.data.shape))

    return _result(a.data @ b.data, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _result(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _result(a.data * b.data, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * c)

    return _result(x.data * c, (x,), backward)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(_swap_last(g))

    return _result(_swap_last(x.data), (x,), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g.reshape(x.data.shape))

    return _result(x.data.reshape(shape), (x,), backward)


def take_rows(x: Tensor, n: int) -> Tensor:
    """First n rows along the leading axis (positional-table slicing)."""

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[:n] = g
            x.accumulate_grad(full)

    return _result(x.data[:n], (x,), backward)


def concat_last_dim(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[:-1] != b.data.shape[:-1]:
        raise ShapeMismatch(f"concat {a.data.shape} with {b.data.shape}")
    split = a.data.shape[-1]

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g[..., :split])
        if b.requires_grad:
            b.accumulate_grad(g[..., split:])

    return _result(np.concatenate([a.data, b.data], axis=-1), (a, b), backward)


def concat_all_last_dim(parts: Iterable[Tensor]) -> Tensor:
    parts = list(parts)
    out = parts[0]
    for p in parts[1:]:
        out = concat_last_dim(out, p)
    return out


def mean_over_axis(x: Tensor, axis: int) -> Tensor:
    n = x.data.shape[axis]

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.repeat(np.expand_dims(g, axis), n, axis=axis) / n)

    return _result(x.data.mean(axis=axis), (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.data, float(g)))

    return _result(x.data.sum(), (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * mask)

    return _result(np.where(mask, x.data, 0.0), (x,), backward)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF form: x * Phi(x)."""
    phi = erf(x.data * _INV_SQRT2)
    phi += 1.0
    phi *= 0.5

    def backward(g):
        if x.requires_grad:
            pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
            x.accumulate_grad(g * (phi + x.data * pdf))

    return _result(x.data * phi, (x,), backward)


def softmax_last_dim(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * y).sum(axis=-1, keepdims=True)
            x.accumulate_grad(y * (g - dot))

    return _result(y, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply per-feature gain and bias."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def backward(g):
        if gain.requires_grad:
            gain.accumulate_grad(_unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad:
            bias.accumulate_grad(_unbroadcast(g, bias.data.shape))
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(inv_std * (dxhat - m1 - xhat * m2))

    return _result(xhat * gain.data + bias.data, (x, gain, bias), backward)


def dropout(x: Tensor, p: float, rng: RngState, train: bool) -> Tensor:
    """Zero each cell with probability p and rescale survivors (train mode only)."""
    if not 0.0 <= p < 1.0:
        raise ProbabilityOutOfRange(f"dropout probability {p}")
    if not train or p == 0.0:
        return x
    dtype = x.data.dtype
    draw_dtype = np.float32 if dtype == np.float32 else np.float64
    mask = (rng.random(x.data.shape, dtype=draw_dtype) >= p).astype(dtype)
    mask *= 1.0 / (1.0 - p)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * mask)

    return _result(x.data * mask, (x,), backward)


def cross_entropy(logits: Tensor, class_index) -> Tensor:
    """Mean negative log softmax over a batch (or one sample) of logit rows."""
    z = logits.data
    squeeze = z.ndim == 1
    if squeeze:
        z = z[None, :]
    targets = np.atleast_1d(np.asarray(class_index, dtype=np.int64))
    if targets.shape[0] != z.shape[0]:
        raise ShapeMismatch(f"{targets.shape[0]} targets for {z.shape[0]} logit rows")
    m = z.max(axis=-1, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=-1)) + m[:, 0]
    rows = np.arange(z.shape[0])
    losses = lse - z[rows, targets]
    n = z.shape[0]

    def backward(g):
        if logits.requires_grad:
            soft = np.exp(shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True)))
            soft[rows, targets] -= 1.0
            grad = soft * (float(g) / n)
            logits.accumulate_grad(grad[0] if squeeze else grad)

    return _result(losses.mean(), (logits,), backward)


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate grads of every reachable requires_grad tensor from a scalar loss."""
    if loss.data.size != 1:
        raise NonScalarOutput(f"backward needs a scalar, got shape {loss.data.shape}")
    if loss._consumed:
        raise GraphConsumed("backward already ran on this graph; re-run the forward pass")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._consumed:
            raise GraphConsumed("graph node reused after backward")
        if node._backward is not None:
            node._backward(node.grad)
            node._consumed = True
            node._backward = None  # free closure memory


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_check(f: Callable[[], Tensor], params: list[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between backward grads and central differences.

    f must be deterministic and scalar-valued; run it in 64-bit with dropout
    disabled or the comparison is meaningless.
    """
    out = f()
    if out.data.size != 1:
        raise NonScalarOutput("grad_check target must be scalar-valued")
    zero_grads(params)
    backward(out)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f().data)
            flat[i] = orig - eps
            f_minus = float(f().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(1e-8, abs(gflat[i]) + abs(numeric))
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention: softmax(Q K^T / sqrt(d_k)) V."""
    if q.data.shape[-1] != k.data.shape[-1]:
        raise ShapeMismatch("query/key feature dims differ")
    if k.data.shape[-2] != v.data.shape[-2]:
        raise ShapeMismatch("key/value row counts differ")
    d_k = q.data.shape[-1]
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d_k))
    return matmul(softmax_last_dim(scores), v)


def multi_head_attention(x: Tensor, weights: dict) -> Tensor:
    """Concatenated per-head self-attention followed by the output projection.

    weights holds per-head projection lists "wq", "wk", "wv" (each L x L/M)
    and the L x L output matrix "wo".
    """
    wq, wk, wv, wo = weights["wq"], weights["wk"], weights["wv"], weights["wo"]
    heads = len(wq)
    dim = x.data.shape[-1]
    if dim % heads != 0:
        raise HeadDivisibility(f"embedding size {dim} not divisible by {heads} heads")
    head_dim = dim // heads
    for w in (*wq, *wk, *wv):
        if w.data.shape != (dim, head_dim):
            raise ShapeMismatch(f"head projection must be {dim}x{head_dim}, got {w.data.shape}")
    if wo.data.shape != (dim, dim):
        raise ShapeMismatch(f"output projection must be {dim}x{dim}")
    outputs = [
        attention(matmul(x, wq[i]), matmul(x, wk[i]), matmul(x, wv[i])) for i in range(heads)
    ]
    return matmul(concat_all_last_dim(outputs), wo)
