"""The Bayesian linear inverse problem: noise model, misfit, posterior,
misfit Hessian, its prior-preconditioned form, and the spectral
uncertainty-reduction diagnostics.

Design weights and per-observation noise levels are folded into a single
row scaling sqrt(weight)/sigma of the forward map ("whitening"), after
which every formula holds in its unit-noise form.  The inverse of the
prior covariance is never formed; the posterior covariance is kept in the
factored form  C_post = C^{1/2} (I + H)^{-1} C^{1/2}  built from the
spectrum of the preconditioned data misfit Hessian H.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .gaussian import GaussianMeasure, make_rng
from .operators import (
    ComposedOperator,
    DenseOperator,
    LinearOperator,
    LowRankOperator,
    ShiftedInverseOperator,
    Space,
    Spectrum,
    TruncationError,
    _as_vector,
    eig_self_adjoint,
)

# Eigenvalues of the preconditioned Hessian below this (relative) threshold
# are dropped from cached spectra; its rank is at most the observation count
# so nothing real is lost.
PP_SPECTRUM_RTOL = 1e-13

# Relative truncation of the prior spectrum used in the Cameron-Martin
# (prior-weighted) inner product.
CAMERON_MARTIN_RTOL = 1e-12


class InverseProblem:
    """Prior measure, linear forward map into R^q, noise variances, weights.

    Immutable after construction; derived operators are cached lazily under
    a lock so one problem can be shared across threads.
    """

    def __init__(self, prior: GaussianMeasure, forward: LinearOperator, noise_var, design=None):
        if not forward.domain.compatible(prior.space):
            raise ValueError("forward map domain must match the prior's space")
        self.space = prior.space
        self.prior = prior
        self.forward = forward
        self.q = forward.codomain.n
        self.data_space = forward.codomain
        noise_var = np.atleast_1d(np.array(noise_var, dtype=float))
        if noise_var.shape != (self.q,):
            raise ValueError(f"noise_var must have length q={self.q}")
        if np.any(noise_var <= 0):
            raise ValueError("noise variances must be strictly positive")
        if design is None:
            design = np.ones(self.q)
        design = np.atleast_1d(np.array(design, dtype=float))
        if design.shape != (self.q,):
            raise ValueError(f"design weights must have length q={self.q}")
        if np.any((design < 0) | (design > 1)):
            raise ValueError("design weights must lie in [0, 1]")
        self.noise_var = noise_var
        self.noise_var.setflags(write=False)
        self.design = design
        self.design.setflags(write=False)

        self.row_scale = np.sqrt(design / noise_var)
        self.forward_matrix = forward.matrix()
        self.white_matrix = self.row_scale[:, None] * self.forward_matrix
        self.whitened_forward = DenseOperator(self.white_matrix, self.space, self.data_space)

        # reentrant: computing the Hessian spectrum takes this lock and then
        # builds the prior square root, which takes it again
        self._lock = threading.RLock()
        self._pp_spectrum = None
        self._prior_sqrt = None

    def with_design(self, design) -> "InverseProblem":
        return InverseProblem(self.prior, self.forward, self.noise_var, design)

    def with_noise_var(self, noise_var) -> "InverseProblem":
        return InverseProblem(self.prior, self.forward, noise_var, self.design)

    def whiten(self, y) -> np.ndarray:
        """Scale observation rows by sqrt(weight)/sigma."""
        return self.row_scale * _as_vector(y, self.q, "data")

    def prior_sqrt(self) -> LowRankOperator:
        """Square root of the prior covariance, in spectral form."""
        with self._lock:
            if self._prior_sqrt is None:
                spec = self.prior.cov_spectrum
                self._prior_sqrt = LowRankOperator(
                    Spectrum(self.space, np.sqrt(np.clip(spec.values, 0.0, None)), spec.vectors)
                )
        return self._prior_sqrt

    def _pp_spectrum_full(self) -> Spectrum:
        with self._lock:
            if self._pp_spectrum is None:
                self._pp_spectrum = _compute_pp_spectrum(self)
        return self._pp_spectrum


def simulate_data(p: InverseProblem, u, seed: int, stream: int = 0) -> np.ndarray:
    """Draw y = G u + noise in raw data units (all candidate rows present)."""
    u = _as_vector(u, p.space.n)
    rng = make_rng(seed, stream)
    return p.forward_matrix @ u + np.sqrt(p.noise_var) * rng.standard_normal(p.q)


def misfit(p: InverseProblem, u, y, form: str = "direct") -> float:
    """Weighted data misfit 0.5 |G u - y|^2 in whitened coordinates.

    ``form="quadratic"`` evaluates the equivalent expansion
    0.5 <H u, u> - <G* y, u> + 0.5 |y|^2 (whitened); the two must agree to
    floating-point accuracy and tests hold them to 1e-10.
    """
    u = _as_vector(u, p.space.n)
    gy = p.white_matrix @ u
    yt = p.whiten(y)
    if form == "direct":
        return 0.5 * float(np.dot(gy - yt, gy - yt))
    if form == "quadratic":
        return 0.5 * float(np.dot(gy, gy)) - float(np.dot(yt, gy)) + 0.5 * float(np.dot(yt, yt))
    raise ValueError(f"unknown misfit form {form!r}")


def misfit_hessian(p: InverseProblem) -> LinearOperator:
    """The operator G* G of the whitened problem (Fisher information)."""
    g = p.whitened_forward
    return ComposedOperator([g.adjoint(), g], self_adjoint=True)


def preconditioned_hessian(p: InverseProblem) -> LinearOperator:
    """C^{1/2} (G* G) C^{1/2}: the misfit Hessian filtered through the prior."""
    root = p.prior_sqrt()
    return ComposedOperator([root, misfit_hessian(p), root], self_adjoint=True)


def preconditioned_hessian_spectrum(p: InverseProblem, tol: float = PP_SPECTRUM_RTOL) -> Spectrum:
    """Leading eigenpairs of the preconditioned Hessian, truncated at ``tol``.

    The rank never exceeds the number of observations, so at most q + 1
    eigenvalues are examined; truncation keeps the smallest r with
    lam_{r+1} < tol * max(lam_1, 1).
    """
    spec = p._pp_spectrum_full()
    if spec.rank == 0:
        return spec
    cutoff = tol * max(spec.values[0], 1.0)
    r = int(np.sum(spec.values >= cutoff))
    return spec.truncate(r)


def _compute_pp_spectrum(p: InverseProblem) -> Spectrum:
    n = p.space.n
    k_max = min(p.q, n)
    if k_max == 0 or not np.any(p.design > 0):
        return Spectrum.empty(p.space)
    op = preconditioned_hessian(p)
    if k_max >= n:
        spec = eig_self_adjoint(op, rank="full")
    else:
        spec = eig_self_adjoint(op, rank=k_max, tol=1e-8)
    vals = spec.values
    floor = -1e-12 * max(1.0, abs(vals[0])) if vals.size else 0.0
    if np.any(vals < floor):
        raise TruncationError("preconditioned Hessian spectrum is not PSD")
    vals = np.clip(vals, 0.0, None)
    keep = vals >= PP_SPECTRUM_RTOL * max(vals[0], 1.0) if vals.size else vals > 0
    return Spectrum(p.space, vals[keep], spec.vectors[:, keep])


@dataclass(frozen=True)
class PosteriorBundle:
    """Posterior measure together with the spectrum that parameterizes it."""

    posterior: GaussianMeasure
    pp_spectrum: Spectrum
    data: np.ndarray


def posterior_covariance(p: InverseProblem, spec: Spectrum | None = None) -> LinearOperator:
    """C^{1/2} (I + H)^{-1} C^{1/2} assembled from the Hessian spectrum."""
    if spec is None:
        spec = preconditioned_hessian_spectrum(p)
    root = p.prior_sqrt()
    s_op = ShiftedInverseOperator(LowRankOperator(spec), 1.0)
    return ComposedOperator([root, s_op, root], self_adjoint=True)


def posterior(p: InverseProblem, y) -> PosteriorBundle:
    """Condition the prior on data y (raw units)."""
    y = _as_vector(y, p.q, "data")
    spec = preconditioned_hessian_spectrum(p)
    cov = posterior_covariance(p, spec)
    residual = p.whiten(y) - p.white_matrix @ p.prior.mean
    mean = p.prior.mean + cov.apply(p.whitened_forward.adjoint_apply(residual))
    return PosteriorBundle(GaussianMeasure(p.space, mean, cov), spec, np.asarray(y, dtype=float))


def cameron_martin_inner(p: InverseProblem, x, y) -> float:
    """Prior-weighted inner product <C^{-1/2} x, C^{-1/2} y>, spectrally.

    Components outside the retained prior eigenspace raise a
    TruncationError instead of being extrapolated.
    """
    spec = p.prior.cov_spectrum
    x = _as_vector(x, p.space.n)
    y = _as_vector(y, p.space.n)
    if spec.rank == 0:
        raise TruncationError("prior covariance spectrum is empty")
    keep = spec.values >= CAMERON_MARTIN_RTOL * max(spec.values[0], 0.0)
    vals = spec.values[keep]
    vecs = spec.vectors[:, keep]
    cx = vecs.T @ (p.space.mass * x)
    cy = vecs.T @ (p.space.mass * y)
    for label, v, c in (("first", x, cx), ("second", y, cy)):
        resid = v - vecs @ c
        rnorm = p.space.norm(resid)
        if rnorm > 1e-8 * max(1.0, p.space.norm(v)):
            raise TruncationError(
                f"{label} argument has a component of norm {rnorm:.3e} outside "
                "the retained prior spectrum"
            )
    return float(np.sum(cx * cy / vals))


def map_objective(p: InverseProblem, u, y) -> float:
    """Regularized data-fit functional: misfit plus half the squared
    prior-weighted norm of u minus the prior mean; minimized by the
    posterior mean."""
    u = _as_vector(u, p.space.n)
    du = u - p.prior.mean
    return misfit(p, u, y) + 0.5 * cameron_martin_inner(p, du, du)


@dataclass(frozen=True)
class VarianceReduction:
    """Trace gap between prior and posterior covariance with its per-direction
    shares lam_j / (1 + lam_j)."""

    delta: float
    alphas: np.ndarray
    directions: Spectrum


def variance_reduction(p: InverseProblem) -> VarianceReduction:
    spec = preconditioned_hessian_spectrum(p)
    if spec.rank == 0:
        return VarianceReduction(0.0, np.zeros(0), spec)
    alphas = spec.values / (1.0 + spec.values)
    cov = p.prior.cov
    delta = 0.0
    for a, vec in zip(alphas, spec.vectors.T):
        delta += a * p.space.inner(vec, cov.apply(vec))
    return VarianceReduction(float(delta), alphas, spec)
