"""Linear algebra with respect to a weighted (quadrature) inner product.

A ``Space`` carries a diagonal mass weighting ``M`` so that
``<x, y> = sum_i m_i x_i y_i`` stands in for the inner product of a
discretized function space.  Operators are represented by their
coefficient arrays (the matrix acting on nodal values); adjoints,
self-adjointness, eigendecompositions and traces are all taken with
respect to the weighted inner products of the operator's domain and
codomain, not the raw Euclidean one.

The adjoint of a coefficient matrix ``K`` mapping a space with mass ``M``
into one with mass ``W`` is ``M^{-1} K^T W``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.linalg


class SpectralError(RuntimeError):
    """Numerical failure in a factorization or eigendecomposition."""


class TruncationError(SpectralError):
    """A vector has components outside the retained spectral span."""


# Dense fallbacks (eigendecomposition, trace of opaque compositions) are
# refused above this dimension instead of silently thrashing memory.
DENSE_LIMIT = 4096

# Pivots of a shifted-inverse factorization smaller than this (relative to
# the largest pivot) are treated as singular.
PIVOT_RTOL = 1e-14


def _as_vector(x, n: int, what: str = "vector") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"{what} has shape {x.shape}, expected ({n},)")
    return x


@dataclass(frozen=True, eq=False)
class Space:
    """A discretization dimension plus strictly positive quadrature weights."""

    mass: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mass, dtype=float))
        if m.ndim != 1 or m.size == 0:
            raise ValueError("mass must be a non-empty 1-d array")
        if not np.all(m > 0):
            raise ValueError("all mass weights must be strictly positive")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)

    @property
    def n(self) -> int:
        return self.mass.size

    @staticmethod
    def euclidean(n: int) -> "Space":
        """Identity-weighted R^n (e.g. the data space)."""
        return Space(np.ones(n)) if n > 0 else Space._empty()

    @staticmethod
    def _empty() -> "Space":
        # Degenerate zero-dimensional data space for designs with no sensors.
        obj = object.__new__(Space)
        empty = np.ones(0)
        empty.setflags(write=False)
        object.__setattr__(obj, "mass", empty)
        return obj

    def compatible(self, other: "Space") -> bool:
        return self.n == other.n and np.array_equal(self.mass, other.mass)

    def inner(self, x, y) -> float:
        x = _as_vector(x, self.n)
        y = _as_vector(y, self.n)
        return float(np.dot(self.mass * x, y))

    def norm(self, x) -> float:
        return float(np.sqrt(max(self.inner(x, x), 0.0)))


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenpairs of a self-adjoint operator, M-orthonormal, values descending.

    ``vectors`` has one eigenvector per column; ``values`` is sorted
    non-increasing.  A truncated spectrum represents the operator restricted
    to its leading eigenspace, with the complement implicitly mapped to zero.
    """

    space: Space
    values: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        vals = np.atleast_1d(np.asarray(self.values, dtype=float))
        vecs = np.asarray(self.vectors, dtype=float)
        if vals.size == 0:
            vecs = np.zeros((self.space.n, 0))
        if vecs.shape != (self.space.n, vals.size):
            raise ValueError(
                f"vectors have shape {vecs.shape}, expected ({self.space.n}, {vals.size})"
            )
        if vals.size > 1 and np.any(np.diff(vals) > 1e-10 * max(1.0, abs(vals[0]))):
            raise ValueError("eigenvalues must be sorted non-increasing")
        vals = vals.copy()
        vecs = vecs.copy()
        vals.setflags(write=False)
        vecs.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "vectors", vecs)

    @property
    def rank(self) -> int:
        return self.values.size

    def coefficients(self, x) -> np.ndarray:
        """M-inner products <e_i, x> of x against every eigenvector."""
        x = _as_vector(x, self.space.n)
        return self.vectors.T @ (self.space.mass * x)

    def truncate(self, rank: int) -> "Spectrum":
        rank = min(rank, self.rank)
        return Spectrum(self.space, self.values[:rank], self.vectors[:, :rank])

    @staticmethod
    def empty(space: Space) -> "Spectrum":
        return Spectrum(space, np.zeros(0), np.zeros((space.n, 0)))


def orthonormality_defect(spec: Spectrum) -> float:
    """Largest deviation of <e_i, e_j> from the identity, in the M inner product."""
    if spec.rank == 0:
        return 0.0
    gram = spec.vectors.T @ (spec.space.mass[:, None] * spec.vectors)
    return float(np.max(np.abs(gram - np.eye(spec.rank))))


class LinearOperator:
    """Base class: a linear map between two weighted spaces."""

    domain: Space
    codomain: Space
    self_adjoint: bool = False

    def apply(self, x) -> np.ndarray:
        raise NotImplementedError

    def adjoint_apply(self, y) -> np.ndarray:
        """Apply the adjoint taken w.r.t. the weighted inner products."""
        return self.adjoint().apply(y)

    def adjoint(self) -> "LinearOperator":
        raise NotImplementedError

    def matrix(self) -> np.ndarray:
        """Dense coefficient array (codomain.n x domain.n)."""
        raise NotImplementedError

    def _check_square(self):
        if not self.domain.compatible(self.codomain):
            raise ValueError("operation requires a square operator (domain == codomain)")


class DenseOperator(LinearOperator):
    def __init__(self, matrix, domain: Space, codomain: Space, self_adjoint: bool = False):
        k = np.asarray(matrix, dtype=float)
        if k.shape != (codomain.n, domain.n):
            raise ValueError(f"matrix has shape {k.shape}, expected ({codomain.n}, {domain.n})")
        self._matrix = k.copy()
        self._matrix.setflags(write=False)
        self.domain = domain
        self.codomain = codomain
        self.self_adjoint = self_adjoint

    def apply(self, x):
        return self._matrix @ _as_vector(x, self.domain.n)

    def adjoint(self):
        if self.self_adjoint:
            return self
        k_adj = (self._matrix.T * self.codomain.mass[None, :]) / self.domain.mass[:, None]
        return DenseOperator(k_adj, self.codomain, self.domain)

    def matrix(self):
        return self._matrix


class DiagonalOperator(LinearOperator):
    """Diagonal action on a single space; always self-adjoint (diagonal mass)."""

    def __init__(self, diag, space: Space):
        d = _as_vector(diag, space.n, "diagonal")
        self._diag = d.copy()
        self._diag.setflags(write=False)
        self.domain = space
        self.codomain = space
        self.self_adjoint = True

    @property
    def diag(self) -> np.ndarray:
        return self._diag

    def apply(self, x):
        return self._diag * _as_vector(x, self.domain.n)

    def adjoint(self):
        return self

    def matrix(self):
        return np.diag(self._diag)


def identity(space: Space) -> DiagonalOperator:
    return DiagonalOperator(np.ones(space.n), space)


class LowRankOperator(LinearOperator):
    """Spectral form ``sum_i lam_i e_i <e_i, .>`` on one space; self-adjoint."""

    def __init__(self, spectrum: Spectrum):
        self.spectrum = spectrum
        self.domain = spectrum.space
        self.codomain = spectrum.space
        self.self_adjoint = True

    def apply(self, x):
        s = self.spectrum
        if s.rank == 0:
            return np.zeros(self.domain.n)
        return s.vectors @ (s.values * s.coefficients(x))

    def adjoint(self):
        return self

    def matrix(self):
        s = self.spectrum
        return (s.vectors * s.values[None, :]) @ (s.vectors.T * self.domain.mass[None, :])


class ComposedOperator(LinearOperator):
    """Composition in matrix-product order: factors ``[A, B]`` act as ``A(B(x))``."""

    def __init__(self, factors, self_adjoint: bool = False):
        flat = []
        for f in factors:
            if isinstance(f, ComposedOperator):
                flat.extend(f.factors)
            else:
                flat.append(f)
        if not flat:
            raise ValueError("composition needs at least one factor")
        for left, right in zip(flat[:-1], flat[1:]):
            if not left.domain.compatible(right.codomain):
                raise ValueError("composition factors have incompatible spaces")
        self.factors = tuple(flat)
        self.domain = flat[-1].domain
        self.codomain = flat[0].codomain
        self.self_adjoint = self_adjoint

    def apply(self, x):
        x = _as_vector(x, self.domain.n)
        for f in reversed(self.factors):
            x = f.apply(x)
        return x

    def adjoint(self):
        if self.self_adjoint:
            return self
        return ComposedOperator([f.adjoint() for f in reversed(self.factors)])

    def matrix(self):
        return reduce(np.matmul, [f.matrix() for f in self.factors])


class ShiftedInverseOperator(LinearOperator):
    """Action of ``(base + shift I)^{-1}`` on the base operator's space.

    A dense factorization is computed on first use and cached; if the base is
    already in spectral form the inverse is applied in closed form instead.
    """

    def __init__(self, base: LinearOperator, shift: float):
        base._check_square()
        self.base = base
        self.shift = float(shift)
        self.domain = base.domain
        self.codomain = base.codomain
        self.self_adjoint = base.self_adjoint
        self._lu = None
        self._lock = threading.Lock()

    def _factorization(self):
        with self._lock:
            if self._lu is None:
                a = self.base.matrix() + self.shift * np.eye(self.domain.n)
                lu, piv = scipy.linalg.lu_factor(a)
                pivots = np.abs(np.diag(lu))
                if pivots.size and pivots.min() <= PIVOT_RTOL * max(pivots.max(), 1.0):
                    raise SpectralError("shifted operator is numerically singular")
                self._lu = (lu, piv)
        return self._lu

    def apply(self, x):
        x = _as_vector(x, self.domain.n)
        if isinstance(self.base, LowRankOperator):
            s = self.base.spectrum
            if self.shift == 0.0:
                raise SpectralError("zero shift on a rank-deficient spectral operator")
            if s.rank == 0:
                return x / self.shift
            gains = s.values / (s.values + self.shift)
            return (x - s.vectors @ (gains * s.coefficients(x))) / self.shift
        lu, piv = self._factorization()
        return scipy.linalg.lu_solve((lu, piv), x)

    def adjoint(self):
        if self.self_adjoint:
            return self
        return ShiftedInverseOperator(self.base.adjoint(), self.shift)

    def matrix(self):
        n = self.domain.n
        if isinstance(self.base, LowRankOperator):
            cols = [self.apply(e) for e in np.eye(n)]
            return np.array(cols).T
        lu, piv = self._factorization()
        return scipy.linalg.lu_solve((lu, piv), np.eye(n))


def to_matrix(op: LinearOperator) -> np.ndarray:
    return op.matrix()


def adjoint_defect(op: LinearOperator, x, y) -> float:
    """Relative gap between <Ax, y> and <x, A*y> for one vector pair."""
    ax = op.apply(x)
    ay = op.adjoint_apply(y)
    lhs = op.codomain.inner(ax, y)
    rhs = op.domain.inner(x, ay)
    scale = max(1.0, abs(lhs), abs(rhs))
    return abs(lhs - rhs) / scale


# ---------------------------------------------------------------------------
# Eigendecomposition
# ---------------------------------------------------------------------------


def _dense_eig(op: LinearOperator) -> tuple[np.ndarray, np.ndarray]:
    """Full symmetric eigendecomposition in the weighted geometry.

    The similarity ``B = M^{1/2} K M^{-1/2}`` of a self-adjoint coefficient
    array is symmetric; its eigenvectors pull back to M-orthonormal ones.
    """
    n = op.domain.n
    if n > DENSE_LIMIT:
        raise SpectralError(f"dense eigendecomposition refused for n={n} > {DENSE_LIMIT}")
    k = op.matrix()
    s = np.sqrt(op.domain.mass)
    b = (k * (1.0 / s)[None, :]) * s[:, None]
    sym_defect = np.max(np.abs(b - b.T))
    if sym_defect > 1e-8 * max(1.0, np.max(np.abs(b))):
        raise ValueError("operator is not self-adjoint in the weighted inner product")
    vals, q = np.linalg.eigh(0.5 * (b + b.T))
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = (q / s[:, None])[:, order]
    return vals, vecs


def _lanczos_m(op: LinearOperator, k: int, tol: float, seed: int, max_dim: int):
    """Lanczos with full reorthogonalization in the M inner product.

    Returns the leading ``k`` Ritz pairs of a self-adjoint operator.  On
    invariant-subspace breakdown the iteration restarts from a fresh random
    direction so rank-deficient operators still yield a complete basis.
    """
    space = op.domain
    n, mass = space.n, space.mass
    rng = np.random.default_rng(seed)
    q_vecs = np.zeros((n, 0))

    def m_orthogonalize(v):
        for _ in range(2):  # twice is enough for full reorthogonalization
            if q_vecs.shape[1]:
                v = v - q_vecs @ (q_vecs.T @ (mass * v))
        return v

    def fresh_start():
        for _ in range(20):
            v = m_orthogonalize(rng.standard_normal(n))
            nv = np.sqrt(np.dot(mass * v, v))
            if nv > 1e-10:
                return v / nv
        raise SpectralError("could not generate a new Lanczos start vector")

    t_mat = np.zeros((max_dim, max_dim))
    q = fresh_start()
    beta_prev, q_prev = 0.0, np.zeros(n)
    j = 0
    while j < max_dim:
        q_vecs = np.hstack([q_vecs, q[:, None]])
        w = op.apply(q)
        alpha = float(np.dot(mass * w, q))
        t_mat[j, j] = alpha
        w = w - alpha * q - beta_prev * q_prev
        w = m_orthogonalize(w)
        beta = float(np.sqrt(max(np.dot(mass * w, w), 0.0)))
        j += 1
        if j >= max_dim or q_vecs.shape[1] >= n:
            break
        if beta < 1e-12 * max(1.0, abs(alpha)):
            # invariant subspace found; restart in the orthogonal complement
            q_prev, beta_prev = np.zeros(n), 0.0
            q = fresh_start()
            continue
        t_mat[j, j - 1] = t_mat[j - 1, j] = beta
        q_prev, beta_prev = q, beta
        q = w / beta

    dim = q_vecs.shape[1]
    ritz_vals, ritz_vecs = np.linalg.eigh(t_mat[:dim, :dim])
    order = np.argsort(ritz_vals)[::-1][:k]
    vals = ritz_vals[order]
    vecs = q_vecs @ ritz_vecs[:, order]
    # renormalize in M to wash out accumulated roundoff
    norms = np.sqrt(np.einsum("ij,ij->j", vecs, mass[:, None] * vecs))
    vecs = vecs / norms[None, :]
    return vals, vecs


def eig_self_adjoint(op: LinearOperator, rank="full", tol: float = 1e-9, seed: int = 0) -> Spectrum:
    """Leading M-orthonormal eigenpairs of a self-adjoint operator.

    ``rank="full"`` uses a dense symmetric solver; an integer rank runs
    Lanczos with full reorthogonalization in the weighted inner product.
    Every returned pair must satisfy ``|A e - lam e| <= tol * max(1, |lam|)``
    or a SpectralError is raised.
    """
    op._check_square()
    n = op.domain.n
    if rank == "full" or int(rank) >= n:
        vals, vecs = _dense_eig(op)
    else:
        k = int(rank)
        if k <= 0:
            return Spectrum.empty(op.domain)
        budget = min(n, max(4 * k + 20, 40))
        vals, vecs = _lanczos_m(op, k, tol, seed, budget)
        if vals.size < k:
            raise SpectralError("Lanczos produced fewer eigenpairs than requested")
    spec = Spectrum(op.domain, vals, vecs)
    _check_residuals(op, spec, tol)
    return spec


def _check_residuals(op: LinearOperator, spec: Spectrum, tol: float):
    for lam, vec in zip(spec.values, spec.vectors.T):
        resid = op.domain.norm(op.apply(vec) - lam * vec)
        if resid > tol * max(1.0, abs(lam)):
            raise SpectralError(
                f"eigenpair residual {resid:.3e} exceeds tolerance for eigenvalue {lam:.6e}"
            )


# ---------------------------------------------------------------------------
# Traces and determinants
# ---------------------------------------------------------------------------


def trace(op: LinearOperator) -> float:
    """Trace w.r.t. any M-orthonormal basis (= trace of the coefficient array).

    Compositions containing a spectral (finite-rank) factor are reduced with
    the cyclic identity tr(AB) = tr(BA); otherwise the composition is
    densified, which is refused beyond DENSE_LIMIT.
    """
    op._check_square()
    if isinstance(op, DiagonalOperator):
        return float(np.sum(op.diag))
    if isinstance(op, LowRankOperator):
        return float(np.sum(op.spectrum.values))
    if isinstance(op, DenseOperator):
        return float(np.trace(op.matrix()))
    if isinstance(op, ComposedOperator):
        for i, f in enumerate(op.factors):
            if isinstance(f, LowRankOperator):
                rest = op.factors[i + 1:] + op.factors[:i]
                return _trace_lowrank_product(f.spectrum, list(rest))
        if op.domain.n > DENSE_LIMIT:
            raise SpectralError(
                "trace of an opaque composition without a finite-rank factor "
                f"is unsupported for n={op.domain.n} > {DENSE_LIMIT}"
            )
        return float(np.trace(op.matrix()))
    if isinstance(op, ShiftedInverseOperator):
        return float(np.trace(op.matrix()))
    return float(np.trace(op.matrix()))


def _trace_lowrank_product(spec: Spectrum, rest: list) -> float:
    """tr(R . Rest) for spectral R via tr(R B) = sum_i lam_i <e_i, B e_i>."""
    if spec.rank == 0:
        return 0.0
    if not rest:
        return float(np.sum(spec.values))
    rest_op = rest[0] if len(rest) == 1 else ComposedOperator(rest)
    total = 0.0
    for lam, vec in zip(spec.values, spec.vectors.T):
        total += lam * spec.space.inner(vec, rest_op.apply(vec))
    return float(total)


def logdet_i_plus(values) -> float:
    """log of the (Fredholm-style) determinant of I + A from A's eigenvalues."""
    if isinstance(values, Spectrum):
        values = values.values
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if values.size == 0:
        return 0.0
    if np.any(values <= -1.0):
        raise SpectralError("determinant of I + A requires all eigenvalues > -1")
    return float(np.sum(np.log1p(values)))


def sqrt_apply(spec: Spectrum, x) -> np.ndarray:
    """Apply the operator square root spanned by ``spec``.

    Components of ``x`` outside the retained span map to zero; callers must
    pick the truncation so that this is acceptable.  Eigenvalues below
    -1e-12 raise; tiny negatives are clamped to zero.
    """
    x = _as_vector(x, spec.space.n)
    if spec.rank == 0:
        return np.zeros_like(x)
    vals = np.asarray(spec.values, dtype=float)
    if np.any(vals < -1e-12 * max(1.0, abs(vals[0]))):
        raise SpectralError("square root of an operator with negative eigenvalues")
    vals = np.clip(vals, 0.0, None)
    return spec.vectors @ (np.sqrt(vals) * spec.coefficients(x))
