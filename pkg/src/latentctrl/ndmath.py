"""Dense float32 tensors with reverse-mode automatic differentiation.

Every forward operation records itself on an implicit computation graph
(a DAG of ``_Node`` records hanging off the produced tensors). ``backward``
walks that graph once, in reverse topological order, and returns float64
gradients for the requested leaf tensors.

Numeric policy: tensor storage is 32-bit; reductions, matrix products and
gradient accumulation run in 64-bit and are truncated back to 32-bit.
Every public operation verifies its result is finite and raises
``NumericsError`` otherwise.

Randomness comes from ``Rng``: a PCG64 core (fixed, documented algorithm,
stable across platforms) with normal variates produced by Box-Muller.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Operand dimensions do not conform."""


class DomainError(ValueError):
    """Input outside the mathematical domain of the operation (log/sqrt)."""


class NumericsError(FloatingPointError):
    """A public operation produced or received a non-finite value."""


class GraphError(RuntimeError):
    """Misuse of the computation graph (non-scalar loss, repeated backward)."""


class _Node:
    """Operation record: parents and the local vector-Jacobian product."""

    __slots__ = ("op", "parents", "vjp", "consumed")

    def __init__(self, op, parents, vjp):
        self.op = op
        self.parents = parents
        self.vjp = vjp  # grad_out (float64) -> tuple of parent grads
        self.consumed = False


class Tensor:
    """Row-major float32 array, optionally attached to the graph.

    Tensors without a node are leaves (parameters or constants); they are
    immutable by convention and safe to share. ``data`` must stay finite.
    """

    __slots__ = ("data", "node")

    def __init__(self, data, node=None, _checked=False):
        arr = np.asarray(data, dtype=DTYPE)
        if not _checked and not np.all(np.isfinite(arr)):
            raise NumericsError("tensor holds non-finite entries")
        self.data = arr
        self.node = node

    @property
    def dims(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of dims {self.dims}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(dims={self.dims})"

    # operator sugar; scalars are plain Python floats, not graph nodes
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _result(op, data64, parents, vjp):
    out = np.asarray(data64, dtype=DTYPE)
    if not np.all(np.isfinite(out)):
        raise NumericsError(f"{op}: non-finite result")
    return Tensor(out, _Node(op, parents, vjp), _checked=True)


def _as_scalar(x):
    if isinstance(x, (int, float, np.floating, np.integer)):
        return float(x)
    return None


def _check_same_dims(op, a, b):
    if a.dims != b.dims:
        raise ShapeError(f"{op}: dims {a.dims} vs {b.dims}")


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.dims[1] != b.dims[0]:
        raise ShapeError(f"matmul: dims {a.dims} @ {b.dims}")
    a64 = a.data.astype(np.float64)
    b64 = b.data.astype(np.float64)
    out = a64 @ b64

    def vjp(g):
        return g @ b64.T, a64.T @ g

    return _result("matmul", out, (a, b), vjp)


def add(a: Tensor, b) -> Tensor:
    s = _as_scalar(b)
    if s is not None:
        return _result("add", a.data.astype(np.float64) + s, (a,), lambda g: (g,))
    _check_same_dims("add", a, b)
    return _result("add", a.data.astype(np.float64) + b.data, (a, b),
                   lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    s = _as_scalar(b)
    if s is not None:
        return _result("sub", a.data.astype(np.float64) - s, (a,), lambda g: (g,))
    _check_same_dims("sub", a, b)
    return _result("sub", a.data.astype(np.float64) - b.data, (a, b),
                   lambda g: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    s = _as_scalar(b)
    if s is not None:
        return scale(a, s)
    _check_same_dims("mul", a, b)
    a64 = a.data.astype(np.float64)
    b64 = b.data.astype(np.float64)
    return _result("mul", a64 * b64, (a, b), lambda g: (g * b64, g * a64))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _result("scale", a.data.astype(np.float64) * s, (a,),
                   lambda g: (g * s,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data.astype(np.float64))
    return _result("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log: non-positive input")
    a64 = a.data.astype(np.float64)
    return _result("log", np.log(a64), (a,), lambda g: (g / a64,))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise DomainError("sqrt: negative input")
    out = np.sqrt(a.data.astype(np.float64))
    return _result("sqrt", out, (a,), lambda g: (g / (2.0 * np.maximum(out, 1e-30)),))


def square(a: Tensor) -> Tensor:
    a64 = a.data.astype(np.float64)
    return _result("square", a64 * a64, (a,), lambda g: (2.0 * a64 * g,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data.astype(np.float64))
    return _result("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a: Tensor) -> Tensor:
    a64 = a.data.astype(np.float64)
    out = np.maximum(a64, 0.0) + np.log1p(np.exp(-np.abs(a64)))

    def vjp(g):
        return (g / (1.0 + np.exp(-a64)),)

    return _result("softplus", out, (a,), vjp)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    # gradient is passed through inside [lo, hi] and zeroed outside
    a64 = a.data.astype(np.float64)
    inside = ((a64 >= lo) & (a64 <= hi)).astype(np.float64)
    return _result("clip", np.clip(a64, lo, hi), (a,), lambda g: (g * inside,))


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis."""
    a64 = a.data.astype(np.float64)
    m = np.max(a64, axis=-1, keepdims=True)
    e = np.exp(a64 - m)
    out = e / np.sum(e, axis=-1, keepdims=True)

    def vjp(g):
        dot = np.sum(g * out, axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _result("softmax", out, (a,), vjp)


def logsumexp(a: Tensor) -> Tensor:
    """log(sum(exp(a))) along the last axis; last axis is reduced away."""
    a64 = a.data.astype(np.float64)
    m = np.max(a64, axis=-1, keepdims=True)
    e = np.exp(a64 - m)
    s = np.sum(e, axis=-1, keepdims=True)
    out = (m + np.log(s)).reshape(a64.shape[:-1])
    soft = e / s

    def vjp(g):
        return (np.expand_dims(g, -1) * soft,)

    return _result("logsumexp", out, (a,), vjp)


def sum_all(a: Tensor) -> Tensor:
    out = np.sum(a.data, dtype=np.float64)
    return _result("sum", out, (a,),
                   lambda g: (np.full(a.dims, float(g), dtype=np.float64),))


def mean_all(a: Tensor) -> Tensor:
    n = max(a.size, 1)
    out = np.sum(a.data, dtype=np.float64) / n
    return _result("mean", out, (a,),
                   lambda g: (np.full(a.dims, float(g) / n, dtype=np.float64),))


def sum_rows(a: Tensor) -> Tensor:
    """Sum a matrix over its first axis, yielding one row."""
    if a.data.ndim != 2:
        raise ShapeError(f"sum_rows: expected matrix, got dims {a.dims}")
    out = np.sum(a.data, axis=0, dtype=np.float64)

    def vjp(g):
        return (np.broadcast_to(g, a.dims).astype(np.float64),)

    return _result("sum_rows", out, (a,), vjp)


def l2_norm(a: Tensor) -> Tensor:
    a64 = a.data.astype(np.float64)
    out = np.sqrt(np.sum(a64 * a64))

    def vjp(g):
        return (float(g) * a64 / max(out, 1e-12),)

    return _result("l2_norm", out, (a,), vjp)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows of a matrix by integer index (embedding-style lookup)."""
    idx = np.asarray(idx, dtype=np.int64)
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows: expected matrix, got dims {a.dims}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.dims[0]):
        raise ShapeError("gather_rows: index out of range")
    out = a.data[idx].astype(np.float64)

    def vjp(g):
        acc = np.zeros(a.dims, dtype=np.float64)
        np.add.at(acc, idx, g)
        return (acc,)

    return _result("gather_rows", out, (a,), vjp)


def pick(a: Tensor, idx) -> Tensor:
    """Per-row gather along the last axis: out[i] = a[i, idx[i]]."""
    idx = np.asarray(idx, dtype=np.int64)
    if a.data.ndim != 2 or idx.shape != (a.dims[0],):
        raise ShapeError(f"pick: dims {a.dims} with index shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.dims[1]):
        raise ShapeError("pick: index out of range")
    rows = np.arange(a.dims[0])
    out = a.data[rows, idx].astype(np.float64)

    def vjp(g):
        acc = np.zeros(a.dims, dtype=np.float64)
        np.add.at(acc, (rows, idx), g)
        return (acc,)

    return _result("pick", out, (a,), vjp)


def reshape(a: Tensor, dims) -> Tensor:
    dims = tuple(int(d) for d in dims)
    if int(np.prod(dims)) != a.size:
        raise ShapeError(f"reshape: {a.dims} -> {dims}")
    return _result("reshape", a.data.astype(np.float64).reshape(dims), (a,),
                   lambda g: (g.reshape(a.dims),))


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """Add a length-n row vector to every row of an [m, n] matrix."""
    if a.data.ndim != 2 or b.data.ndim != 1 or a.dims[1] != b.dims[0]:
        raise ShapeError(f"add_bias: dims {a.dims} + {b.dims}")
    out = a.data.astype(np.float64) + b.data

    def vjp(g):
        return g, np.sum(g, axis=0)

    return _result("add_bias", out, (a, b), vjp)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor, wrt) -> list[np.ndarray]:
    """Gradients of a scalar loss w.r.t. the given leaf tensors (float64).

    Leaves not reached by the graph get zero gradients. Each graph may be
    swept once: a second backward through already-visited nodes raises
    ``GraphError``.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward: loss must be scalar, got dims {loss.dims}")
    wrt = list(wrt)
    if loss.node is None:
        return [np.zeros(p.dims, dtype=np.float64) for p in wrt]
    if loss.node.consumed:
        raise GraphError("backward: graph already swept")

    # iterative reverse topological order over graph-attached tensors
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen or t.node is None:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t.node.parents:
            stack.append((p, False))

    grads: dict[int, np.ndarray] = {
        id(loss): np.ones(loss.dims, dtype=np.float64)
    }
    for t in reversed(order):
        node = t.node
        if node.consumed:
            raise GraphError("backward: graph already swept")
        node.consumed = True
        g = grads.pop(id(t), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            pg = np.asarray(pg, dtype=np.float64).reshape(parent.dims)
            if id(parent) in grads:
                grads[id(parent)] += pg
            else:
                grads[id(parent)] = pg

    out = []
    for p in wrt:
        g = grads.get(id(p))
        if g is None:
            g = np.zeros(p.dims, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NumericsError("backward: non-finite gradient")
        out.append(g)
    return out


# ---------------------------------------------------------------------------
# optimizer


class AdamW:
    """Decoupled-weight-decay Adam with bias correction.

    Moment buffers are float64 and shaped like their parameters; the
    update is computed in float64 and truncated to float32. A step with
    non-finite gradients is rejected without touching any state.
    """

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.01):
        if lr <= 0:
            raise ValueError("lr must be positive")
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ValueError("betas must lie in (0, 1)")
        if weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = [np.zeros(p.dims, dtype=np.float64) for p in self.params]
        self.v = [np.zeros(p.dims, dtype=np.float64) for p in self.params]

    def step(self, grads) -> None:
        grads = list(grads)
        if len(grads) != len(self.params):
            raise ShapeError("adamw: gradient count mismatch")
        for p, g in zip(self.params, grads):
            if np.asarray(g).shape != p.dims:
                raise ShapeError("adamw: gradient dims mismatch")
            if not np.all(np.isfinite(g)):
                raise NumericsError("adamw: non-finite gradient, step rejected")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            g = np.asarray(g, dtype=np.float64)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[i] / bc1
            vhat = self.v[i] / bc2
            p64 = p.data.astype(np.float64)
            p64 *= 1.0 - self.lr * self.weight_decay
            p64 -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
            p.data = p64.astype(DTYPE)


# ---------------------------------------------------------------------------
# randomness


class Rng:
    """Seeded deterministic random source.

    Core stream: PCG64 (a fixed, documented 64-bit generator with stable
    cross-platform output). Normal variates are produced by Box-Muller from
    the uniform stream. Child generators for independent chains derive
    deterministically from (seed, key).
    """

    def __init__(self, seed):
        if isinstance(seed, (int, np.integer)):
            entropy = (int(seed),)
        else:
            entropy = tuple(int(s) for s in seed)
        self._entropy = entropy
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy)))

    @property
    def entropy(self):
        return self._entropy

    def spawn(self, key: int) -> "Rng":
        return Rng(self._entropy + (int(key),))

    def uniform(self, size=None, low=0.0, high=1.0, dtype=DTYPE):
        u = self._gen.random(size)
        return np.asarray(low + (high - low) * u, dtype=dtype)

    def normal(self, size=None, dtype=DTYPE):
        shape = () if size is None else (
            (size,) if isinstance(size, (int, np.integer)) else tuple(size))
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # in (0, 1], keeps log finite
        u2 = self._gen.random(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        out = np.asarray(z, dtype=dtype)
        return out.reshape(shape) if shape else out[0]

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size, dtype=np.int64)

    def categorical(self, probs, size):
        """Indices drawn from a discrete distribution (probs sum to 1)."""
        cdf = np.cumsum(np.asarray(probs, dtype=np.float64))
        cdf[-1] = 1.0
        u = self._gen.random(size)
        return np.searchsorted(cdf, u, side="right").astype(np.int64)

    def permutation(self, n: int):
        return self._gen.permutation(n)


def glorot_uniform(rng: Rng, fan_in: int, fan_out: int, dims=None) -> Tensor:
    """Parameter init: uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    a = float(np.sqrt(6.0 / (fan_in + fan_out)))
    if dims is None:
        dims = (fan_in, fan_out)
    return Tensor(rng.uniform(size=dims, low=-a, high=a))


def zeros(dims) -> Tensor:
    return Tensor(np.zeros(dims, dtype=DTYPE))
