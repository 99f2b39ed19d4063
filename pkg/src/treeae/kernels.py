"""Numeric hot-path kernels, each with a numba and a pure-numpy twin.

Every kernel exists twice: ``_<name>_numpy`` and ``_<name>_numba``. The
active implementation is bound to the public name once at import time.
Numba is used when it is importable, unless the environment variable
``TREEAE_NUMBA`` is set to ``0``/``false``/``no``/``off``, in which case
the numpy twins are used. ``benchmarks/bench_kernels.py`` times the two
paths against each other.

All kernels operate on contiguous float64 arrays and are pure functions
except ``adam_update``, which updates its buffers in place.
"""

import os
import warnings

import numpy as np

_env = os.environ.get("TREEAE_NUMBA", "1").strip().lower()
_want_numba = _env not in ("0", "false", "no", "off")

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via TREEAE_NUMBA=0 instead
    HAS_NUMBA = False
    if _want_numba:
        warnings.warn("numba not installed; falling back to pure-numpy kernels")

USE_NUMBA = HAS_NUMBA and _want_numba


# ---------------------------------------------------------------------------
# tanh(a @ b): the composition/decomposition workhorse (small matrices,
# called once or twice per tree node).

def _tanh_matmul_fw_numpy(a, b):
    return np.tanh(a @ b)


def _tanh_matmul_bw_numpy(a, b, out, dout):
    dz = dout * (1.0 - out * out)
    return dz @ b.T, a.T @ dz


# ---------------------------------------------------------------------------
# Tempered softmax over a vector (leaf reconstruction over the vocabulary).

def _softmax_fw_numpy(x, tau):
    z = (x - x.max()) / tau
    e = np.exp(z)
    return e / e.sum()


def _softmax_bw_numpy(p, dp, tau):
    return p * (dp - np.dot(dp, p)) / tau


# ---------------------------------------------------------------------------
# Pairwise cosine similarity between the rows of two row-aligned matrices.
# A[i, j] = <u_i, d_j> / (|u_i| |d_j| + eps).

def _cosine_matrix_fw_numpy(u, d, eps):
    nu = np.sqrt((u * u).sum(axis=1))
    nd = np.sqrt((d * d).sum(axis=1))
    a = (u @ d.T) / (np.outer(nu, nd) + eps)
    return a, nu, nd


def _cosine_matrix_bw_numpy(u, d, a, nu, nd, da, eps):
    denom = np.outer(nu, nd) + eps
    w = da / denom
    nu_safe = np.where(nu > 0.0, nu, 1.0)
    nd_safe = np.where(nd > 0.0, nd, 1.0)
    # d/du_i of <u_i,d_j>/denom_ij has a direct term and a norm term.
    row_coef = (da * a * nd[None, :] / denom).sum(axis=1) / nu_safe
    col_coef = (da * a * nu[:, None] / denom).sum(axis=0) / nd_safe
    du = w @ d - row_coef[:, None] * u
    dd = w.T @ u - col_coef[:, None] * d
    return du, dd


# ---------------------------------------------------------------------------
# Row-aligned cosine (the diagonal of the matrix above, without the matrix).

def _rowwise_cosine_fw_numpy(u, d, eps):
    nu = np.sqrt((u * u).sum(axis=1))
    nd = np.sqrt((d * d).sum(axis=1))
    c = (u * d).sum(axis=1) / (nu * nd + eps)
    return c, nu, nd


def _rowwise_cosine_bw_numpy(u, d, c, nu, nd, dc, eps):
    denom = nu * nd + eps
    nu_safe = np.where(nu > 0.0, nu, 1.0)
    nd_safe = np.where(nd > 0.0, nd, 1.0)
    du = (dc / denom)[:, None] * d - (dc * c * nd / denom / nu_safe)[:, None] * u
    dd = (dc / denom)[:, None] * u - (dc * c * nu / denom / nd_safe)[:, None] * d
    return du, dd


# ---------------------------------------------------------------------------
# Paired InfoNCE over a similarity matrix: the positive of row i and of
# column i is the diagonal entry; both directions averaged over 2M terms.

def _contrastive_fw_numpy(a, tau):
    m = a.shape[0]
    la = a / tau
    rmax = la.max(axis=1)
    rlse = rmax + np.log(np.exp(la - rmax[:, None]).sum(axis=1))
    cmax = la.max(axis=0)
    clse = cmax + np.log(np.exp(la - cmax[None, :]).sum(axis=0))
    diag = np.diagonal(la)
    loss = -((diag - rlse).sum() + (diag - clse).sum()) / (2.0 * m)
    r = np.exp(la - rlse[:, None])
    c = np.exp(la - clse[None, :])
    return loss, r, c


def _contrastive_bw_numpy(r, c, tau):
    m = r.shape[0]
    da = r + c
    idx = np.arange(m)
    da[idx, idx] -= 2.0
    return da / (2.0 * m * tau)


# ---------------------------------------------------------------------------
# Fused Adam update, in place over flat views of one parameter.

def _adam_update_numpy(p, g, m, v, lr, b1, b2, eps, t):
    m[:] = b1 * m + (1.0 - b1) * g
    v[:] = b2 * v + (1.0 - b2) * g * g
    mhat = m / (1.0 - b1 ** t)
    vhat = v / (1.0 - b2 ** t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)


if HAS_NUMBA:

    @njit(cache=True)
    def _tanh_matmul_fw_numba(a, b):
        return np.tanh(np.dot(a, b))

    @njit(cache=True)
    def _tanh_matmul_bw_numba(a, b, out, dout):
        rows, cols = out.shape
        dz = np.empty((rows, cols))
        for i in range(rows):
            for j in range(cols):
                dz[i, j] = dout[i, j] * (1.0 - out[i, j] * out[i, j])
        da = np.dot(dz, np.ascontiguousarray(b.T))
        db = np.dot(np.ascontiguousarray(a.T), dz)
        return da, db

    @njit(cache=True)
    def _softmax_fw_numba(x, tau):
        hi = x[0]
        for i in range(x.size):
            if x[i] > hi:
                hi = x[i]
        out = np.empty_like(x)
        total = 0.0
        for i in range(x.size):
            e = np.exp((x[i] - hi) / tau)
            out[i] = e
            total += e
        inv = 1.0 / total
        for i in range(x.size):
            out[i] *= inv
        return out

    @njit(cache=True)
    def _softmax_bw_numba(p, dp, tau):
        dot = 0.0
        for i in range(p.size):
            dot += dp[i] * p[i]
        out = np.empty_like(p)
        for i in range(p.size):
            out[i] = p[i] * (dp[i] - dot) / tau
        return out

    @njit(cache=True)
    def _cosine_matrix_fw_numba(u, d, eps):
        rows = u.shape[0]
        cols = d.shape[0]
        nu = np.empty(rows)
        nd = np.empty(cols)
        for i in range(rows):
            s = 0.0
            for k in range(u.shape[1]):
                s += u[i, k] * u[i, k]
            nu[i] = np.sqrt(s)
        for j in range(cols):
            s = 0.0
            for k in range(d.shape[1]):
                s += d[j, k] * d[j, k]
            nd[j] = np.sqrt(s)
        a = np.dot(u, np.ascontiguousarray(d.T))
        for i in range(rows):
            for j in range(cols):
                a[i, j] /= nu[i] * nd[j] + eps
        return a, nu, nd

    @njit(cache=True)
    def _cosine_matrix_bw_numba(u, d, a, nu, nd, da, eps):
        rows, cols = a.shape
        w = np.empty((rows, cols))
        row_coef = np.zeros(rows)
        col_coef = np.zeros(cols)
        for i in range(rows):
            for j in range(cols):
                denom = nu[i] * nd[j] + eps
                w[i, j] = da[i, j] / denom
                t = da[i, j] * a[i, j] / denom
                row_coef[i] += t * nd[j]
                col_coef[j] += t * nu[i]
        du = np.dot(w, d)
        dd = np.dot(np.ascontiguousarray(w.T), u)
        for i in range(rows):
            coef = row_coef[i] / (nu[i] if nu[i] > 0.0 else 1.0)
            for k in range(u.shape[1]):
                du[i, k] -= coef * u[i, k]
        for j in range(cols):
            coef = col_coef[j] / (nd[j] if nd[j] > 0.0 else 1.0)
            for k in range(d.shape[1]):
                dd[j, k] -= coef * d[j, k]
        return du, dd

    @njit(cache=True)
    def _rowwise_cosine_fw_numba(u, d, eps):
        rows = u.shape[0]
        nu = np.empty(rows)
        nd = np.empty(rows)
        c = np.empty(rows)
        for i in range(rows):
            su = 0.0
            sd = 0.0
            dot = 0.0
            for k in range(u.shape[1]):
                su += u[i, k] * u[i, k]
                sd += d[i, k] * d[i, k]
                dot += u[i, k] * d[i, k]
            nu[i] = np.sqrt(su)
            nd[i] = np.sqrt(sd)
            c[i] = dot / (nu[i] * nd[i] + eps)
        return c, nu, nd

    @njit(cache=True)
    def _rowwise_cosine_bw_numba(u, d, c, nu, nd, dc, eps):
        rows, width = u.shape
        du = np.empty((rows, width))
        dd = np.empty((rows, width))
        for i in range(rows):
            denom = nu[i] * nd[i] + eps
            nu_safe = nu[i] if nu[i] > 0.0 else 1.0
            nd_safe = nd[i] if nd[i] > 0.0 else 1.0
            cu = dc[i] * c[i] * nd[i] / denom / nu_safe
            cd = dc[i] * c[i] * nu[i] / denom / nd_safe
            for k in range(width):
                du[i, k] = dc[i] / denom * d[i, k] - cu * u[i, k]
                dd[i, k] = dc[i] / denom * u[i, k] - cd * d[i, k]
        return du, dd

    @njit(cache=True)
    def _contrastive_fw_numba(a, tau):
        m = a.shape[0]
        r = np.empty((m, m))
        c = np.empty((m, m))
        loss = 0.0
        for i in range(m):
            hi = a[i, 0]
            for j in range(m):
                if a[i, j] > hi:
                    hi = a[i, j]
            total = 0.0
            for j in range(m):
                total += np.exp((a[i, j] - hi) / tau)
            lse = hi / tau + np.log(total)
            for j in range(m):
                r[i, j] = np.exp(a[i, j] / tau - lse)
            loss -= a[i, i] / tau - lse
        for j in range(m):
            hi = a[0, j]
            for i in range(m):
                if a[i, j] > hi:
                    hi = a[i, j]
            total = 0.0
            for i in range(m):
                total += np.exp((a[i, j] - hi) / tau)
            lse = hi / tau + np.log(total)
            for i in range(m):
                c[i, j] = np.exp(a[i, j] / tau - lse)
            loss -= a[j, j] / tau - lse
        return loss / (2.0 * m), r, c

    @njit(cache=True)
    def _contrastive_bw_numba(r, c, tau):
        m = r.shape[0]
        da = np.empty((m, m))
        scale = 1.0 / (2.0 * m * tau)
        for i in range(m):
            for j in range(m):
                base = r[i, j] + c[i, j]
                if i == j:
                    base -= 2.0
                da[i, j] = base * scale
        return da

    @njit(cache=True)
    def _adam_update_numba(p, g, m, v, lr, b1, b2, eps, t):
        bc1 = 1.0 - b1 ** t
        bc2 = 1.0 - b2 ** t
        for i in range(p.size):
            m[i] = b1 * m[i] + (1.0 - b1) * g[i]
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
            p[i] -= lr * (m[i] / bc1) / (np.sqrt(v[i] / bc2) + eps)


_KERNEL_NAMES = [
    "tanh_matmul_fw",
    "tanh_matmul_bw",
    "softmax_fw",
    "softmax_bw",
    "cosine_matrix_fw",
    "cosine_matrix_bw",
    "rowwise_cosine_fw",
    "rowwise_cosine_bw",
    "contrastive_fw",
    "contrastive_bw",
    "adam_update",
]

# name -> {"numpy": fn, "numba": fn or None}; used by tests and benchmarks.
IMPLEMENTATIONS = {
    name: {
        "numpy": globals()["_%s_numpy" % name],
        "numba": globals().get("_%s_numba" % name),
    }
    for name in _KERNEL_NAMES
}

_active = "numba" if USE_NUMBA else "numpy"
for _name in _KERNEL_NAMES:
    globals()[_name] = IMPLEMENTATIONS[_name][_active]
