"""Hot numeric kernels: numba-compiled loops with a pure-numpy fallback.

The backend is chosen at import time.  Set ``BOED_DISABLE_NUMBA=1`` to force
the numpy path (or it is used automatically when numba is missing).  Both
implementations are importable for testing and benchmarking via
``numpy_impls()`` / ``numba_impls()``.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("BOED_DISABLE_NUMBA", "").strip().lower()
NUMBA_REQUESTED = _FLAG not in {"1", "true", "yes", "on"}

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised via the env flag instead
    numba = None
    NUMBA_AVAILABLE = False


def _c64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# Pure-numpy implementations
# ---------------------------------------------------------------------------


def _repeated_tridiag_solve_np(batch, lower, diag, upper, steps):
    """Solve the constant-coefficient tridiagonal system ``steps`` times.

    Each row of ``batch`` is advanced independently:  x <- T^{-1} x with
    T = tridiag(lower, diag, upper).  The sweep is sequential in the grid
    index, so the numpy form loops over columns (this is exactly the loop
    the numba path exists to accelerate).
    """
    batch = _c64(batch)
    m, n = batch.shape
    out = batch.copy()
    cp = np.empty(n)
    for _ in range(steps):
        dp = out.copy()
        cp[0] = upper / diag
        dp[:, 0] /= diag
        for i in range(1, n):
            w = diag - lower * cp[i - 1]
            cp[i] = upper / w
            dp[:, i] = (dp[:, i] - lower * dp[:, i - 1]) / w
        out[:, n - 1] = dp[:, n - 1]
        for i in range(n - 2, -1, -1):
            out[:, i] = dp[:, i] - cp[i] * out[:, i + 1]
    return out


def _rowwise_weighted_sqnorm_np(x, weights):
    """Per-row weighted squared norm: out[i] = sum_j w[j] x[i,j]^2."""
    return (np.asarray(x, dtype=np.float64) ** 2) @ np.asarray(weights, dtype=np.float64)


def _rowwise_transform_sqnorm_np(y, p):
    """Per-row squared norm after a linear map: out[i] = |P y[i]|^2."""
    z = np.asarray(y, dtype=np.float64) @ np.asarray(p, dtype=np.float64).T
    return np.einsum("ij,ij->i", z, z)


def _rowwise_residual_sqnorm_np(u, k, y):
    """Per-row squared residual: out[i] = |K u[i] - y|^2."""
    r = np.asarray(u, dtype=np.float64) @ np.asarray(k, dtype=np.float64).T
    r -= np.asarray(y, dtype=np.float64)[None, :]
    return np.einsum("ij,ij->i", r, r)


_NP_IMPLS = {
    "repeated_tridiag_solve": _repeated_tridiag_solve_np,
    "rowwise_weighted_sqnorm": _rowwise_weighted_sqnorm_np,
    "rowwise_transform_sqnorm": _rowwise_transform_sqnorm_np,
    "rowwise_residual_sqnorm": _rowwise_residual_sqnorm_np,
}


# ---------------------------------------------------------------------------
# Numba implementations
# ---------------------------------------------------------------------------

_NB_CACHE: dict | None = None


def _build_numba_impls():
    from numba import njit

    @njit(cache=True)
    def repeated_tridiag_solve(batch, lower, diag, upper, steps):
        m, n = batch.shape
        out = batch.copy()
        cp = np.empty(n)
        dp = np.empty(n)
        for r in range(m):
            for _ in range(steps):
                cp[0] = upper / diag
                dp[0] = out[r, 0] / diag
                for i in range(1, n):
                    w = diag - lower * cp[i - 1]
                    cp[i] = upper / w
                    dp[i] = (out[r, i] - lower * dp[i - 1]) / w
                out[r, n - 1] = dp[n - 1]
                for i in range(n - 2, -1, -1):
                    out[r, i] = dp[i] - cp[i] * out[r, i + 1]
        return out

    @njit(cache=True)
    def rowwise_weighted_sqnorm(x, weights):
        m, n = x.shape
        out = np.empty(m)
        for i in range(m):
            acc = 0.0
            for j in range(n):
                acc += weights[j] * x[i, j] * x[i, j]
            out[i] = acc
        return out

    @njit(cache=True)
    def rowwise_transform_sqnorm(y, p):
        m, q = y.shape
        r = p.shape[0]
        out = np.empty(m)
        for i in range(m):
            acc = 0.0
            for a in range(r):
                dot = 0.0
                for j in range(q):
                    dot += p[a, j] * y[i, j]
                acc += dot * dot
            out[i] = acc
        return out

    @njit(cache=True)
    def rowwise_residual_sqnorm(u, k, y):
        m, n = u.shape
        q = k.shape[0]
        out = np.empty(m)
        for i in range(m):
            acc = 0.0
            for a in range(q):
                dot = -y[a]
                for j in range(n):
                    dot += k[a, j] * u[i, j]
                acc += dot * dot
            out[i] = acc
        return out

    return {
        "repeated_tridiag_solve": repeated_tridiag_solve,
        "rowwise_weighted_sqnorm": rowwise_weighted_sqnorm,
        "rowwise_transform_sqnorm": rowwise_transform_sqnorm,
        "rowwise_residual_sqnorm": rowwise_residual_sqnorm,
    }


def numpy_impls() -> dict:
    return dict(_NP_IMPLS)


def numba_impls() -> dict:
    """Compile (once) and return the numba kernels; raises if numba is missing."""
    global _NB_CACHE
    if not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not available")
    if _NB_CACHE is None:
        _NB_CACHE = _build_numba_impls()
    return dict(_NB_CACHE)


NUMBA_ENABLED = NUMBA_REQUESTED and NUMBA_AVAILABLE
_ACTIVE = numba_impls() if NUMBA_ENABLED else numpy_impls()


def backend() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


def repeated_tridiag_solve(batch, lower, diag, upper, steps):
    return _ACTIVE["repeated_tridiag_solve"](_c64(batch), float(lower), float(diag), float(upper), int(steps))


def rowwise_weighted_sqnorm(x, weights):
    return _ACTIVE["rowwise_weighted_sqnorm"](_c64(x), _c64(weights))


def rowwise_transform_sqnorm(y, p):
    return _ACTIVE["rowwise_transform_sqnorm"](_c64(y), _c64(p))


def rowwise_residual_sqnorm(u, k, y):
    return _ACTIVE["rowwise_residual_sqnorm"](_c64(u), _c64(k), _c64(y))
