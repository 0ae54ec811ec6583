"""Gaussian measures on a weighted space: sampling, pushforwards, moment
identities, the Gaussian exponential integral, and a dense reference KL.

All sampling uses a counter-based generator keyed by ``(seed, stream)`` so
parallel Monte Carlo chunks are reproducible regardless of scheduling.
"""

from __future__ import annotations

import threading

import numpy as np

from .operators import (
    ComposedOperator,
    LinearOperator,
    LowRankOperator,
    Space,
    SpectralError,
    Spectrum,
    _as_vector,
    eig_self_adjoint,
    logdet_i_plus,
    trace,
)

# Relative truncation for spectral realizations of Q^{1/2} A Q^{1/2}.
SPECTRAL_RTOL = 1e-12

# Covariance eigenvalues may dip this far (relative) below zero before the
# measure is rejected as non-PSD; anything above is clamped to zero.
PSD_SLACK = 1e-12


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; distinct streams are independent and stable."""
    key = np.array([seed % (1 << 64), stream % (1 << 64)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class GaussianMeasure:
    """Mean vector plus a self-adjoint PSD covariance operator.

    The covariance spectrum is computed once on demand (or supplied at
    construction) and cached; it drives sampling and square roots.
    """

    def __init__(self, space: Space, mean, cov: LinearOperator, spectrum: Spectrum | None = None):
        if not cov.domain.compatible(space) or not cov.codomain.compatible(space):
            raise ValueError("covariance operator must act on the measure's space")
        if not cov.self_adjoint:
            raise ValueError("covariance operator must be flagged self-adjoint")
        self.space = space
        self.mean = _as_vector(mean, space.n, "mean").copy()
        self.mean.setflags(write=False)
        self.cov = cov
        self._spectrum = spectrum
        self._lock = threading.Lock()
        if spectrum is not None:
            self._spectrum = _clamp_psd(spectrum)

    @property
    def cov_spectrum(self) -> Spectrum:
        with self._lock:
            if self._spectrum is None:
                if isinstance(self.cov, LowRankOperator):
                    spec = self.cov.spectrum
                else:
                    spec = eig_self_adjoint(self.cov, rank="full")
                self._spectrum = _clamp_psd(spec)
        return self._spectrum

    def sample(self, count: int, seed: int, stream: int = 0) -> np.ndarray:
        """Draw ``count`` vectors, one per row; bit-reproducible for fixed keys."""
        spec = self.cov_spectrum
        rng = make_rng(seed, stream)
        z = rng.standard_normal((spec.rank, count))
        draws = np.tile(self.mean, (count, 1))
        if spec.rank:
            draws += (spec.vectors @ (np.sqrt(spec.values)[:, None] * z)).T
        return draws


def _clamp_psd(spec: Spectrum) -> Spectrum:
    vals = spec.values
    if vals.size == 0:
        return spec
    floor = -PSD_SLACK * max(1.0, abs(vals[0]))
    if np.any(vals < floor):
        raise SpectralError(f"covariance spectrum has eigenvalue {vals.min():.3e} < {floor:.1e}")
    return Spectrum(spec.space, np.clip(vals, 0.0, None), spec.vectors)


def pushforward_affine(mu: GaussianMeasure, a: LinearOperator, b) -> GaussianMeasure:
    """Law of ``x -> A x + b``: a Gaussian with mean Am+b and covariance AQA*."""
    if not a.domain.compatible(mu.space):
        raise ValueError("operator domain does not match the measure's space")
    b = _as_vector(b, a.codomain.n, "offset")
    mean = a.apply(mu.mean) + b
    cov = ComposedOperator([a, mu.cov, a.adjoint()], self_adjoint=True)
    return GaussianMeasure(a.codomain, mean, cov)


def expect_quad_form(a: LinearOperator, mu: GaussianMeasure) -> float:
    """Mean of the quadratic form <Ax, x>: tr(AQ) + <Am, m>."""
    a._check_square()
    if not a.domain.compatible(mu.space):
        raise ValueError("operator does not act on the measure's space")
    try:
        t = trace(ComposedOperator([a, mu.cov]))
    except SpectralError:
        # fall back to the cached spectral form of the covariance
        t = trace(ComposedOperator([a, LowRankOperator(mu.cov_spectrum)]))
    return t + mu.space.inner(a.apply(mu.mean), mu.mean)


def _tilde_matrix(a: LinearOperator, mu: GaussianMeasure):
    """Restriction of Q^{1/2} A Q^{1/2} to the retained covariance eigenspace.

    Returns the symmetric matrix T with T_ij = sqrt(q_i q_j) <v_i, A v_j>
    together with the retained eigenvectors; the nonzero spectrum of the
    full operator equals the spectrum of T.
    """
    spec = mu.cov_spectrum
    if spec.rank == 0:
        return np.zeros((0, 0)), spec.vectors
    keep = spec.values >= SPECTRAL_RTOL * max(spec.values[0], 0.0)
    vals = spec.values[keep]
    vecs = spec.vectors[:, keep]
    av = np.column_stack([a.apply(v) for v in vecs.T]) if vals.size else vecs
    core = vecs.T @ (mu.space.mass[:, None] * av)
    root = np.sqrt(vals)
    t_mat = root[:, None] * core * root[None, :]
    return 0.5 * (t_mat + t_mat.T), vecs


def gaussian_exp_integral(a: LinearOperator, b, mu: GaussianMeasure) -> float:
    """log of the integral of exp(-<Ax,x>/2 + <b,x>) against a centered Gaussian.

    Evaluates -log det(I + T)/2 + |(I + T)^{-1/2} Q^{1/2} b|^2 / 2 with
    T = Q^{1/2} A Q^{1/2}, entirely in the log domain.
    """
    if mu.space.norm(mu.mean) > 0.0:
        raise ValueError("the exponential integral requires a centered measure")
    b = _as_vector(b, mu.space.n, "linear term")
    t_mat, vecs = _tilde_matrix(a, mu)
    if t_mat.shape[0] == 0:
        return 0.0
    gam, u = np.linalg.eigh(t_mat)
    if np.any(gam < -1e-10 * max(1.0, gam.max(initial=0.0))):
        raise ValueError("quadratic-form operator is indefinite on the covariance range")
    gam = np.clip(gam, 0.0, None)
    spec = mu.cov_spectrum
    keep_vals = spec.values[spec.values >= SPECTRAL_RTOL * max(spec.values[0], 0.0)]
    w = np.sqrt(keep_vals) * (vecs.T @ (mu.space.mass * b))  # coords of Q^{1/2} b
    c = u.T @ w
    return -0.5 * logdet_i_plus(gam) + 0.5 * float(np.sum(c * c / (1.0 + gam)))


def kl_gaussian_ref(post: GaussianMeasure, prior: GaussianMeasure) -> float:
    """Finite-dimensional Gaussian KL divergence via dense factorizations.

    Deliberately uses the textbook form with the inverted prior covariance;
    it exists as a fixed-dimension reference oracle for the well-conditioned
    criterion formulas, not for production use.
    """
    if not post.space.compatible(prior.space):
        raise ValueError("measures live on different spaces")
    n = post.space.n
    k_post = post.cov.matrix()
    k_pr = prior.cov.matrix()
    sign_post, logdet_post = np.linalg.slogdet(k_post)
    sign_pr, logdet_pr = np.linalg.slogdet(k_pr)
    if sign_pr <= 0:
        raise SpectralError("prior covariance is singular or indefinite")
    if sign_post <= 0:
        raise SpectralError("posterior covariance is singular or indefinite")
    try:
        solved = np.linalg.solve(k_pr, k_post)
        dm = post.mean - prior.mean
        z = np.linalg.solve(k_pr, dm)
    except np.linalg.LinAlgError as exc:
        raise SpectralError("singular prior covariance") from exc
    quad = float(np.dot(prior.space.mass * z, dm))
    return 0.5 * (-(logdet_post - logdet_pr) - n + float(np.trace(solved)) + quad)
