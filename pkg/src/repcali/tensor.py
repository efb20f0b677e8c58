"""Dense tensors with reverse-mode automatic differentiation.

A small tape-based engine, just large enough for an encoder-decoder
transformer: elementwise arithmetic, batched matmul, softmax, layer norm,
embedding lookup, token-level cross entropy, concatenation and axis
permutations. Data is float32 by default; float64 inputs propagate
through every op unchanged so the finite-difference checker can run the
same graph at higher precision.

Recording happens only inside a `with Tape() as tape:` block, so code run
outside a tape (evaluation, greedy decoding) is pure and allocation-light.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_tls = threading.local()


def _active_tape() -> Optional["Tape"]:
    return getattr(_tls, "tape_stack", [None])[-1] if getattr(_tls, "tape_stack", None) else None


class Tensor:
    """A dense n-dimensional array, optionally tracked on a tape.

    Invariants: `data` is contiguous row-major; `grad`, when present, has
    the same shape as `data`; a tensor never registered on a tape never
    receives gradient writes.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr) if arr.ndim else np.asarray(arr)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node_id: Optional[int] = None
        self.tape: Optional[Tape] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the real work happens in the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def permute(self, axes):
        return permute(self, axes)


class _Node:
    __slots__ = ("out", "parents", "backward_fn", "tag")

    def __init__(self, out, parents, backward_fn, tag):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn
        self.tag = tag


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended in execution order, which is a topological order by
    construction. The backward pass walks the list once, in reverse.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        if not hasattr(_tls, "tape_stack"):
            _tls.tape_stack = []
        _tls.tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        _tls.tape_stack.pop()
        return False

    def record(self, out: Tensor, parents: Sequence[Tensor],
               backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
               tag: str) -> None:
        out.node_id = len(self.nodes)
        out.tape = self
        out.requires_grad = True
        self.nodes.append(_Node(out, tuple(parents), backward_fn, tag))

    def __len__(self):
        return len(self.nodes)


def _tracked(t) -> bool:
    if not isinstance(t, Tensor):
        return False
    tape = _active_tape()
    return t.requires_grad or (t.tape is tape and t.node_id is not None)


def _record(out: Tensor, parents, backward_fn, tag: str) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(_tracked(p) for p in parents):
        tape.record(out, [p for p in parents if isinstance(p, Tensor)], backward_fn, tag)
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def backward(tape: Tape, root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into every requires-grad leaf.

    Repeated calls without clearing leaf grads accumulate, matching the
    usual convention for gradient accumulation.
    """
    if root.tape is not tape or root.node_id is None:
        raise ValueError("backward root was not recorded on this tape")
    if root.data.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
    flowing: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = flowing.pop(id(node.out), None)
        if g is None:
            continue
        parent_grads = node.backward_fn(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None:
                continue
            key = id(parent)
            if key in flowing:
                flowing[key] = flowing[key] + pg
            else:
                flowing[key] = pg
            if parent.node_id is None and parent.requires_grad:
                leaves[key] = parent
    for key, leaf in leaves.items():
        g = flowing[key]
        if leaf.grad is None:
            leaf.grad = np.array(g, dtype=leaf.data.dtype, copy=True)
        else:
            leaf.grad = leaf.grad + g.astype(leaf.grad.dtype)


# ---------------------------------------------------------------------------
# primitives


def _as_operand(x, ref: Tensor):
    """Python scalars stay scalars (numpy keeps the tensor dtype for them)."""
    if isinstance(x, Tensor):
        return x
    return float(x)


def add(a: Tensor, b) -> Tensor:
    b = _as_operand(b, a)
    bd = b.data if isinstance(b, Tensor) else b
    out = Tensor(a.data + bd)

    def back(g):
        ga = _unbroadcast(g, a.data.shape)
        gb = _unbroadcast(g, b.data.shape) if isinstance(b, Tensor) else None
        return (ga, gb) if isinstance(b, Tensor) else (ga,)

    parents = (a, b) if isinstance(b, Tensor) else (a,)
    return _record(out, parents, back, "add")


def mul(a: Tensor, b) -> Tensor:
    b = _as_operand(b, a)
    bd = b.data if isinstance(b, Tensor) else b
    out = Tensor(a.data * bd)

    def back(g):
        ga = _unbroadcast(g * bd, a.data.shape)
        if isinstance(b, Tensor):
            return ga, _unbroadcast(g * a.data, b.data.shape)
        return (ga,)

    parents = (a, b) if isinstance(b, Tensor) else (a,)
    return _record(out, parents, back, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(np.matmul(a.data, b.data))

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _record(out, (a, b), back, "matmul")


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))
    mask = x.data > 0

    def back(g):
        return (g * mask,)

    return _record(out, (x,), back, "relu")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = Tensor(x.data.reshape(shape))

    def back(g):
        return (g.reshape(x.data.shape),)

    return _record(out, (x,), back, "reshape")


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(np.transpose(x.data, axes)))

    def back(g):
        return (np.transpose(g, inv),)

    return _record(out, (x,), back, "permute")


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _record(out, tuple(parts), back, "concat")


def tile_batch(x: Tensor, reps: int) -> Tensor:
    """Stack `reps` copies of x along a new leading axis."""
    out = Tensor(np.broadcast_to(x.data, (reps,) + x.data.shape).copy())

    def back(g):
        return (g.sum(axis=0),)

    return _record(out, (x,), back, "tile_batch")


def tsum(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum(dtype=x.data.dtype))

    def back(g):
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _record(out, (x,), back, "sum")


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(x.data.mean(dtype=x.data.dtype))

    def back(g):
        return (np.broadcast_to(g / n, x.data.shape).copy(),)

    return _record(out, (x,), back, "mean")


def softmax(x: Tensor) -> Tensor:
    """Row-stochastic softmax over the last axis, max-shifted for stability."""
    if not np.all(np.isfinite(x.data)):
        raise ValueError("softmax input contains non-finite values")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)

    def back(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _record(out, (x,), back, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-last-axis normalization: gain*(v-mean)/sqrt(var+eps) + bias."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ValueError(
            f"layer_norm gain/bias must have shape ({d},), got {gain.data.shape} and {bias.data.shape}")
    if eps < 0:
        raise ValueError("layer_norm eps must be nonnegative")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = Tensor(gain.data * xhat + bias.data)

    def back(g):
        lead = tuple(range(g.ndim - 1))
        g_bias = g.sum(axis=lead)
        g_gain = (g * xhat).sum(axis=lead)
        gx_hat = g * gain.data
        g_x = inv_std * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return g_x, g_gain, g_bias

    return _record(out, (x, gain, bias), back, "layer_norm")


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of `table`; backward scatter-adds into the table."""
    ids = np.asarray(ids)
    vocab = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = np.argwhere((ids < 0) | (ids >= vocab))[0]
        pos = tuple(int(v) for v in bad)
        raise IndexError(
            f"embedding id {int(ids[pos])} at position {pos} outside [0, {vocab})")
    out = Tensor(table.data[ids])

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        return (gt,)

    return _record(out, (table,), back, "embedding_lookup")


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_id: int = -100) -> Tensor:
    """Mean negative log-softmax probability of targets over non-ignored positions."""
    targets = np.asarray(targets)
    if targets.shape != logits.data.shape[:-1]:
        raise ValueError(
            f"targets shape {targets.shape} does not match logits {logits.data.shape[:-1]}")
    valid = targets != ignore_id
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("cross_entropy: every position is ignored")
    vocab = logits.data.shape[-1]
    safe_targets = np.where(valid, targets, 0)
    if safe_targets.min() < 0 or safe_targets.max() >= vocab:
        raise IndexError(f"target id outside [0, {vocab})")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logprobs = shifted - logsumexp
    picked = np.take_along_axis(logprobs, safe_targets[..., None], axis=-1)[..., 0]
    loss = -(picked * valid).sum(dtype=logits.data.dtype) / n_valid
    out = Tensor(np.asarray(loss, dtype=logits.data.dtype))

    def back(g):
        probs = np.exp(logprobs)
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, safe_targets[..., None], 1.0, axis=-1)
        gl = (probs - onehot) * valid[..., None] / n_valid
        return (gl * g,)

    return _record(out, (logits,), back, "cross_entropy")


def dropout(x: Tensor, p: float, rng) -> Tensor:
    """Inverted dropout; draws the mask from `rng`. Identity when p == 0."""
    if p <= 0.0:
        return x
    keep = (rng.uniform(x.data.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return mul(x, Tensor(keep))


# ---------------------------------------------------------------------------
# finite-difference oracle


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-3) -> float:
    """Max relative disagreement between reverse-mode and central differences.

    The check runs in float64 regardless of x's dtype; the relative error
    denominator is max(1, |analytic|) per coordinate.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x64 = Tensor(x.data.astype(np.float64), requires_grad=True, dtype=np.float64)
    with Tape() as tape:
        y = f(x64)
    if y.data.size != 1:
        raise ValueError("grad_check target must be scalar-valued")
    if not np.isfinite(y.data):
        raise ValueError("grad_check: function value is non-finite")
    backward(tape, y)
    analytic = x64.grad if x64.grad is not None else np.zeros_like(x64.data)

    numeric = np.zeros_like(x64.data)
    flat = x64.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x64).item()
        flat[i] = orig - h
        lo = f(x64).item()
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError("grad_check: function evaluated to non-finite value")
        num_flat[i] = (hi - lo) / (2.0 * h)

    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(rel.max()) if rel.size else 0.0
