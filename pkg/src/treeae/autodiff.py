"""Reverse-mode autodiff over a per-run operation tape.

Tree-shaped models build a different graph for every sentence, so the
graph is recorded define-by-run: each operation that produces a tensor
requiring gradients appends a backward closure to the active :class:`Tape`.
``Tape.backward`` replays the closures in exact reverse execution order,
accumulating into ``Tensor.grad``.

Forward passes outside any tape (or inside :func:`no_tape`) record
nothing, which is how inference and finite-difference probes run.

Every forward result is checked for NaN/Inf and raises
:class:`NonFiniteError` on violation, so a diverging training run halts
at the op that produced the bad value.
"""

import threading

import numpy as np

from . import kernels

COSINE_EPS = 1e-8


class NonFiniteError(RuntimeError):
    """A forward operation produced a NaN or Inf value."""


class Tensor:
    """A shaped float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return "Tensor(shape=%s, requires_grad=%s)" % (self.shape, self.requires_grad)


_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed operations for one forward pass."""

    def __init__(self):
        self._ops = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def record(self, closure):
        self._ops.append(closure)

    def backward(self, loss):
        """Seed ``loss.grad`` with ones and replay closures in reverse."""
        if loss.data.size != 1:
            raise ValueError("backward expects a scalar loss, got shape %s" % (loss.shape,))
        loss.grad = np.ones_like(loss.data)
        for closure in reversed(self._ops):
            closure()

    def __len__(self):
        return len(self._ops)


class no_tape:
    """Context manager that suspends recording (pure forward evaluation)."""

    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False


def _check_finite(data):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("non-finite value in forward result")


def op_output(data, *inputs):
    """Wrap an op result, validating finiteness and propagating requires_grad."""
    data = np.asarray(data, dtype=np.float64)
    _check_finite(data)
    return Tensor(data, requires_grad=any(t.requires_grad for t in inputs))


def record_backward(out, closure):
    """Register a backward closure if recording is active and needed."""
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.record(closure)


def accum_grad(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


# ---------------------------------------------------------------------------
# Primitive operations.

def add(a, b):
    out = op_output(a.data + b.data, a, b)

    def backward():
        if out.grad is None:
            return
        if a.requires_grad:
            accum_grad(a, out.grad)
        if b.requires_grad:
            accum_grad(b, out.grad)

    record_backward(out, backward)
    return out


def sub(a, b):
    out = op_output(a.data - b.data, a, b)

    def backward():
        if out.grad is None:
            return
        if a.requires_grad:
            accum_grad(a, out.grad)
        if b.requires_grad:
            accum_grad(b, -out.grad)

    record_backward(out, backward)
    return out


def mul(a, b):
    out = op_output(a.data * b.data, a, b)

    def backward():
        if out.grad is None:
            return
        if a.requires_grad:
            accum_grad(a, out.grad * b.data)
        if b.requires_grad:
            accum_grad(b, out.grad * a.data)

    record_backward(out, backward)
    return out


def scale(x, c):
    c = float(c)
    out = op_output(x.data * c, x)

    def backward():
        if out.grad is None:
            return
        if x.requires_grad:
            accum_grad(x, out.grad * c)

    record_backward(out, backward)
    return out


def neg(x):
    return scale(x, -1.0)


def matmul(a, b):
    out = op_output(a.data @ b.data, a, b)

    def backward():
        if out.grad is None:
            return
        if a.requires_grad:
            accum_grad(a, out.grad @ b.data.T)
        if b.requires_grad:
            accum_grad(b, a.data.T @ out.grad)

    record_backward(out, backward)
    return out


def matvec(m, v):
    """(R, C) @ (C,) -> (R,)."""
    out = op_output(m.data @ v.data, m, v)

    def backward():
        if out.grad is None:
            return
        if m.requires_grad:
            accum_grad(m, np.outer(out.grad, v.data))
        if v.requires_grad:
            accum_grad(v, m.data.T @ out.grad)

    record_backward(out, backward)
    return out


def tanh(x):
    out = op_output(np.tanh(x.data), x)

    def backward():
        if out.grad is None:
            return
        if x.requires_grad:
            accum_grad(x, (1.0 - out.data * out.data) * out.grad)

    record_backward(out, backward)
    return out


def tanh_matmul(a, b):
    """Fused tanh(a @ b); kernel-backed, equals tanh(matmul(a, b))."""
    out = op_output(kernels.tanh_matmul_fw(a.data, b.data), a, b)

    def backward():
        if out.grad is None:
            return
        da, db = kernels.tanh_matmul_bw(a.data, b.data, out.data, out.grad)
        if a.requires_grad:
            accum_grad(a, da)
        if b.requires_grad:
            accum_grad(b, db)

    record_backward(out, backward)
    return out


def log(x):
    out = op_output(np.log(x.data), x)

    def backward():
        if out.grad is None:
            return
        if x.requires_grad:
            accum_grad(x, out.grad / x.data)

    record_backward(out, backward)
    return out


def clamp_min(x, floor):
    floor = float(floor)
    mask = x.data >= floor
    out = op_output(np.maximum(x.data, floor), x)

    def backward():
        if out.grad is None:
            return
        if x.requires_grad:
            accum_grad(x, out.grad * mask)

    record_backward(out, backward)
    return out


def mean(x):
    out = op_output(x.data.mean(), x)
    inv = 1.0 / x.data.size

    def backward():
        if out.grad is None:
            return
        if x.requires_grad:
            accum_grad(x, np.full_like(x.data, float(out.grad) * inv))

    record_backward(out, backward)
    return out


def sum_all(x):
    out = op_output(x.data.sum(), x)

    def backward():
        if out.grad is None:
            return
        if x.requires_grad:
            accum_grad(x, np.full_like(x.data, float(out.grad)))

    record_backward(out, backward)
    return out


def mean_of(scalars):
    """Mean of a list of scalar tensors."""
    if not scalars:
        raise ValueError("mean_of requires at least one term")
    out = op_output(
        np.mean([s.data for s in scalars]), *scalars
    )
    inv = 1.0 / len(scalars)

    def backward():
        if out.grad is None:
            return
        g = float(out.grad) * inv
        for s in scalars:
            if s.requires_grad:
                accum_grad(s, np.full_like(s.data, g))

    record_backward(out, backward)
    return out


def hcat(a, b):
    """Concatenate two matrices side by side."""
    out = op_output(np.concatenate([a.data, b.data], axis=1), a, b)
    split = a.data.shape[1]

    def backward():
        if out.grad is None:
            return
        if a.requires_grad:
            accum_grad(a, out.grad[:, :split])
        if b.requires_grad:
            accum_grad(b, out.grad[:, split:])

    record_backward(out, backward)
    return out


def hsplit(x):
    """Split a matrix at its middle column into (left, right)."""
    cols = x.data.shape[1]
    if cols % 2 != 0:
        raise ValueError("hsplit needs an even column count, got %d" % cols)
    half = cols // 2
    left = op_output(x.data[:, :half].copy(), x)
    right = op_output(x.data[:, half:].copy(), x)

    def backward():
        if not x.requires_grad:
            return
        if left.grad is None and right.grad is None:
            return
        g = np.zeros_like(x.data)
        if left.grad is not None:
            g[:, :half] += left.grad
        if right.grad is not None:
            g[:, half:] += right.grad
        accum_grad(x, g)

    tape = _active_tape()
    if tape is not None and x.requires_grad:
        tape.record(backward)
    return left, right


def flatten(x):
    """Row-major reshape from a square matrix to a vector."""
    out = op_output(x.data.reshape(-1).copy(), x)

    def backward():
        if out.grad is None:
            return
        if x.requires_grad:
            accum_grad(x, out.grad.reshape(x.data.shape))

    record_backward(out, backward)
    return out


def square(x):
    """Row-major reshape from a length-n*n vector to an n-by-n matrix."""
    size = x.data.size
    side = int(round(np.sqrt(size)))
    if side * side != size:
        raise ValueError("square needs a perfect-square length, got %d" % size)
    out = op_output(x.data.reshape(side, side).copy(), x)

    def backward():
        if out.grad is None:
            return
        if x.requires_grad:
            accum_grad(x, out.grad.reshape(-1))

    record_backward(out, backward)
    return out


def gather_row(m, i):
    i = int(i)
    out = op_output(m.data[i].copy(), m)

    def backward():
        if out.grad is None:
            return
        if m.requires_grad:
            if m.grad is None:
                m.grad = np.zeros_like(m.data)
            m.grad[i] += out.grad

    record_backward(out, backward)
    return out


def pick(v, i):
    """Select one element of a vector as a scalar."""
    i = int(i)
    out = op_output(v.data[i], v)

    def backward():
        if out.grad is None:
            return
        if v.requires_grad:
            if v.grad is None:
                v.grad = np.zeros_like(v.data)
            v.grad[i] += float(out.grad)

    record_backward(out, backward)
    return out


def stack_rows(rows):
    """Stack 1-D tensors into an (M, d) matrix."""
    if not rows:
        raise ValueError("stack_rows requires at least one row")
    out = op_output(np.stack([r.data for r in rows]), *rows)

    def backward():
        if out.grad is None:
            return
        for k, r in enumerate(rows):
            if r.requires_grad:
                accum_grad(r, out.grad[k])

    record_backward(out, backward)
    return out


def add_bias(m, b):
    """Add a row vector to every row of a matrix."""
    out = op_output(m.data + b.data[None, :], m, b)

    def backward():
        if out.grad is None:
            return
        if m.requires_grad:
            accum_grad(m, out.grad)
        if b.requires_grad:
            accum_grad(b, out.grad.sum(axis=0))

    record_backward(out, backward)
    return out


def tempered_softmax(x, tau):
    """Softmax of a vector with logits divided by temperature ``tau``.

    Computed with max subtraction; the output sums to one to within
    1e-12. ``tau`` must be strictly positive.
    """
    if tau <= 0.0:
        raise ValueError("temperature must be > 0, got %r" % (tau,))
    if x.data.ndim != 1:
        raise ValueError("tempered_softmax expects a vector")
    tau = float(tau)
    out = op_output(kernels.softmax_fw(x.data, tau), x)

    def backward():
        if out.grad is None:
            return
        if x.requires_grad:
            accum_grad(x, kernels.softmax_bw(out.data, out.grad, tau))

    record_backward(out, backward)
    return out


def cosine_similarity_matrix(u, d, eps=COSINE_EPS):
    """Pairwise cosine similarity matrix between rows of ``u`` and ``d``.

    The norm product carries an additive ``eps`` so zero rows never
    divide by zero (at the cost of their similarities being exactly 0).
    """
    if u.data.ndim != 2 or d.data.ndim != 2 or u.data.shape[1] != d.data.shape[1]:
        raise ValueError("cosine_similarity_matrix expects row-compatible matrices")
    a, nu, nd = kernels.cosine_matrix_fw(u.data, d.data, eps)
    out = op_output(a, u, d)

    def backward():
        if out.grad is None:
            return
        du, dd = kernels.cosine_matrix_bw(u.data, d.data, out.data, nu, nd, out.grad, eps)
        if u.requires_grad:
            accum_grad(u, du)
        if d.requires_grad:
            accum_grad(d, dd)

    record_backward(out, backward)
    return out


def rowwise_cosine(u, d, eps=COSINE_EPS):
    """Cosine between corresponding rows of ``u`` and ``d`` -> (M,) vector."""
    if u.data.shape != d.data.shape:
        raise ValueError("rowwise_cosine expects same-shape matrices")
    c, nu, nd = kernels.rowwise_cosine_fw(u.data, d.data, eps)
    out = op_output(c, u, d)

    def backward():
        if out.grad is None:
            return
        du, dd = kernels.rowwise_cosine_bw(u.data, d.data, out.data, nu, nd, out.grad, eps)
        if u.requires_grad:
            accum_grad(u, du)
        if d.requires_grad:
            accum_grad(d, dd)

    record_backward(out, backward)
    return out


def softmax_cross_entropy(logits, labels):
    """Mean cross entropy of row-wise softmax against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(len(labels))
    out = op_output(-logp[rows, labels].mean(), logits)
    p = np.exp(logp)

    def backward():
        if out.grad is None:
            return
        if logits.requires_grad:
            g = p.copy()
            g[rows, labels] -= 1.0
            accum_grad(logits, g * (float(out.grad) / len(labels)))

    record_backward(out, backward)
    return out


# ---------------------------------------------------------------------------
# Finite-difference checking.

def check_gradients(f, params, h=1e-5, sample=100, rng=None):
    """Compare tape gradients of ``f()`` against central differences.

    ``f`` must build its forward pass from scratch on every call and
    return a scalar tensor. For each parameter, up to ``sample``
    coordinates are probed (all of them when the tensor is small).
    Returns the maximum relative error
    ``|g_tape - g_fd| / max(|g_tape|, |g_fd|, 1e-8)``.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    def value():
        with no_tape():
            out = f()
        if out.data.size != 1:
            raise ValueError("check_gradients expects a scalar-valued function")
        return float(out.data)

    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        if flat.size <= sample:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=sample, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = value()
            flat[i] = orig - h
            fm = value()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            err = abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), 1e-8)
            if err > worst:
                worst = err
    return worst
