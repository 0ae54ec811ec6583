"""Design criteria for the linear Gaussian inverse problem and their
Monte Carlo cross-checks.

Closed forms (all driven by the spectrum {lam_i, e_i} of the
preconditioned misfit Hessian):

* expected information gain (D-criterion):  sum log(1 + lam_i) / 2
* Bayes risk (A-criterion):                 tr(C_post)
* KL divergence from posterior to prior, in two algebraically equal forms
* log of the prior-averaged likelihood normalizer
* mean squared error of the posterior-mean estimator at a fixed truth

Every closed form has a single-loop Monte Carlo estimator over joint
(parameter, data) draws; the per-sample quantity is itself closed form, so
no nested sampling is needed.  Greedy sensor selection scans candidates
with rank-one determinant/trace updates.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .gaussian import make_rng
from .inverse import (
    InverseProblem,
    cameron_martin_inner,
    misfit_hessian,
    posterior,
    posterior_covariance,
    preconditioned_hessian,
    preconditioned_hessian_spectrum,
    variance_reduction,
)
from .operators import Spectrum, _as_vector, eig_self_adjoint, logdet_i_plus

DEFAULT_MC_CHUNKS = 16

MC_TARGETS = ("eig", "bayes_risk", "z0", "dblexp_data", "dblexp_hessian", "mse_map")


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_samples: int
    seed: int


@dataclass(frozen=True)
class CriterionReport:
    """A criterion value, the spectrum it was computed from, and (optionally)
    the Monte Carlo estimate it is validated against."""

    criterion: str
    value: float
    spectrum: Spectrum | None = None
    mc: McEstimate | None = None

    def mc_gap(self) -> tuple[float, float]:
        """(|value - mc mean|, 3 * standard error) for downstream assertion."""
        if self.mc is None:
            raise ValueError("report carries no Monte Carlo estimate")
        return abs(self.value - self.mc.mean), 3.0 * self.mc.std_error

    def with_mc(self, est: McEstimate) -> "CriterionReport":
        return replace(self, mc=est)


@dataclass(frozen=True)
class DesignWeights:
    """Candidate observation rows (with noise variances) and their activation
    weights in [0, 1]."""

    rows: np.ndarray
    noise_var: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any((w < 0) | (w > 1)):
            raise ValueError("design weights must lie in [0, 1]")

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)


# ---------------------------------------------------------------------------
# Closed-form criteria
# ---------------------------------------------------------------------------


def expected_info_gain(p: InverseProblem, tol: float | None = None, method: str = "lowrank") -> CriterionReport:
    """Half the log determinant of I plus the preconditioned Hessian.

    ``method="dense"`` recomputes the full dense spectrum instead of the
    truncated one; it exists as the independent route for truncation checks.
    """
    if method == "dense":
        spec = eig_self_adjoint(preconditioned_hessian(p), rank="full")
        vals = np.clip(spec.values, 0.0, None)
        return CriterionReport("D", 0.5 * logdet_i_plus(vals), spec)
    if method != "lowrank":
        raise ValueError(f"unknown method {method!r}")
    spec = preconditioned_hessian_spectrum(p) if tol is None else preconditioned_hessian_spectrum(p, tol)
    return CriterionReport("D", 0.5 * logdet_i_plus(spec.values), spec)


def prior_trace(p: InverseProblem) -> float:
    return float(np.sum(p.prior.cov_spectrum.values))


def bayes_risk(p: InverseProblem) -> CriterionReport:
    """Trace of the posterior covariance: prior trace minus the per-direction
    reductions alpha_i <e_i, C e_i>; exact when the spectrum holds every
    nonzero eigenvalue (its rank is at most q, so it does)."""
    vr = variance_reduction(p)
    return CriterionReport("A", prior_trace(p) - vr.delta, vr.directions)


def kl_divergence(p: InverseProblem, y, form: str = "cameron_martin") -> float:
    """KL divergence from the posterior at data y to the prior.

    Both forms share  [log det(I+H) - tr(H_m C_post)] / 2  and differ in the
    mean term: the misfit form pairs the mean shift with the whitened data
    residual, the Cameron-Martin form uses the prior-weighted squared norm.
    """
    bundle = posterior(p, y)
    spec = bundle.pp_spectrum
    alphas = spec.values / (1.0 + spec.values) if spec.rank else np.zeros(0)
    base = logdet_i_plus(spec.values) - float(np.sum(alphas))
    mdiff = bundle.posterior.mean - p.prior.mean
    if form == "misfit":
        g_mean = p.white_matrix @ bundle.posterior.mean
        g_diff = p.white_matrix @ mdiff
        term = -float(np.dot(g_diff, g_mean - p.whiten(y)))
    elif form == "cameron_martin":
        term = cameron_martin_inner(p, mdiff, mdiff)
    else:
        raise ValueError(f"unknown form {form!r}")
    return 0.5 * (base + term)


def log_evidence(p: InverseProblem, y) -> float:
    """log of the prior average of exp(-misfit) at data y.

    Evaluated as -|r|^2/2 - log det(I+H)/2 + <C_post b, b>/2 with r the
    whitened data residual against the prior mean and b = G* r; a non-zero
    prior mean is absorbed by shifting the data.
    """
    spec = preconditioned_hessian_spectrum(p)
    residual = p.whiten(y) - p.white_matrix @ p.prior.mean
    b = p.whitened_forward.adjoint_apply(residual)
    cov = posterior_covariance(p, spec)
    quad = p.space.inner(cov.apply(b), b)
    return -0.5 * float(np.dot(residual, residual)) - 0.5 * logdet_i_plus(spec.values) + 0.5 * quad


@dataclass(frozen=True)
class MseReport:
    """Bias/variance split of the posterior-mean estimator's MSE at a fixed
    true parameter."""

    bias_sq: float
    variance: float

    @property
    def total(self) -> float:
        return self.bias_sq + self.variance


def map_mse(p: InverseProblem, u_true) -> MseReport:
    """MSE of the posterior mean at ``u_true``: squared bias
    |(C_post H_m - I) u|^2 plus estimator variance tr(C_post^2 H_m).

    A non-zero prior mean is handled by shifting coordinates.
    """
    u_c = _as_vector(u_true, p.space.n) - p.prior.mean
    spec = preconditioned_hessian_spectrum(p)
    cov = posterior_covariance(p, spec)
    v = cov.apply(misfit_hessian(p).apply(u_c)) - u_c
    bias_sq = p.space.inner(v, v)
    variance = 0.0
    for lam, vec in zip(spec.values, spec.vectors.T):
        variance += lam / (1.0 + lam) ** 2 * p.space.inner(vec, p.prior.cov.apply(vec))
    return MseReport(float(bias_sq), float(variance))


# ---------------------------------------------------------------------------
# Monte Carlo estimators
# ---------------------------------------------------------------------------


def monte_carlo_estimate(
    p: InverseProblem,
    target: str,
    n_samples: int,
    seed: int,
    y=None,
    u_true=None,
    n_chunks: int = DEFAULT_MC_CHUNKS,
    threads: int = 1,
) -> McEstimate:
    """Single-loop Monte Carlo estimate of a criterion's defining expectation.

    Joint draws u ~ prior, y|u ~ N(Gu, noise) feed the per-sample closed
    form of the target.  Work is split into a fixed number of chunks, each
    on its own counter-based stream, so results are identical for any thread
    count.  ``z0`` requires a fixed data vector ``y``; ``mse_map`` requires
    ``u_true`` and draws data only.
    """
    if target not in MC_TARGETS:
        raise ValueError(f"unknown Monte Carlo target {target!r}")
    if n_samples < 2:
        raise ValueError("need at least two samples for a standard error")
    evaluate = _mc_evaluator(p, target, y, u_true)
    n_chunks = max(1, min(int(n_chunks), n_samples))
    counts = [n_samples // n_chunks + (1 if c < n_samples % n_chunks else 0) for c in range(n_chunks)]

    def run(c: int) -> np.ndarray:
        return evaluate(counts[c], make_rng(seed, 2 * c), make_rng(seed, 2 * c + 1))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(run, range(n_chunks)))
    else:
        chunks = [run(c) for c in range(n_chunks)]
    values = np.concatenate(chunks)
    mean = float(np.mean(values))
    std_error = float(np.std(values, ddof=1) / np.sqrt(values.size))
    return McEstimate(mean, std_error, n_samples, seed)


def _mc_evaluator(p: InverseProblem, target: str, y, u_true):
    prior_spec = p.prior.cov_spectrum
    root_vals = np.sqrt(prior_spec.values)
    v_pr = prior_spec.vectors
    m_pr = p.prior.mean
    k_raw = p.forward_matrix
    k_white = p.white_matrix
    noise_sd = np.sqrt(p.noise_var)
    mass = p.space.mass

    spec = preconditioned_hessian_spectrum(p)
    cov = posterior_covariance(p, spec)
    # mean response: m_post - m_pr = R (whitened residual)
    g_adj = p.whitened_forward.adjoint()
    r_cols = [cov.apply(g_adj.apply(e)) for e in np.eye(p.q)]
    r_mat = np.array(r_cols).T if p.q else np.zeros((p.space.n, 0))
    res_shift = k_white @ m_pr

    def draw_params(count, rng):
        z = rng.standard_normal((prior_spec.rank, count))
        return m_pr[None, :] + (v_pr @ (root_vals[:, None] * z)).T

    def draw_noise(count, rng):
        return noise_sd[None, :] * rng.standard_normal((count, p.q))

    if target == "eig":
        alphas = spec.values / (1.0 + spec.values) if spec.rank else np.zeros(0)
        const = 0.5 * (logdet_i_plus(spec.values) - float(np.sum(alphas)))
        keep = prior_spec.values >= 1e-12 * max(prior_spec.values[0], 0.0)
        proj = (v_pr[:, keep].T * mass[None, :]) / np.sqrt(prior_spec.values[keep])[:, None]
        p_eff = proj @ r_mat

        def evaluate(count, rng_u, rng_e):
            u = draw_params(count, rng_u)
            y_res = (u @ k_white.T + p.row_scale[None, :] * draw_noise(count, rng_e)) - res_shift
            return const + 0.5 * kernels.rowwise_transform_sqnorm(y_res, p_eff)

        return evaluate

    if target == "bayes_risk":

        def evaluate(count, rng_u, rng_e):
            u = draw_params(count, rng_u)
            y_res = (u @ k_white.T + p.row_scale[None, :] * draw_noise(count, rng_e)) - res_shift
            diff = (u - m_pr[None, :]) - y_res @ r_mat.T
            return kernels.rowwise_weighted_sqnorm(diff, mass)

        return evaluate

    if target in ("dblexp_data", "dblexp_hessian"):

        def evaluate(count, rng_u, rng_e):
            u = draw_params(count, rng_u)
            y_til = u @ k_white.T + p.row_scale[None, :] * draw_noise(count, rng_e)
            m_post = (y_til - res_shift) @ r_mat.T + m_pr[None, :]
            g_post = m_post @ k_white.T
            if target == "dblexp_data":
                return np.einsum("ij,ij->i", g_post, y_til)
            return np.einsum("ij,ij->i", g_post, g_post)

        return evaluate

    if target == "z0":
        if y is None:
            raise ValueError("target 'z0' needs the data vector y")
        y_til = p.whiten(y)

        def evaluate(count, rng_u, rng_e):
            u = draw_params(count, rng_u)
            phi = 0.5 * kernels.rowwise_residual_sqnorm(u, k_white, y_til)
            return np.exp(-phi)

        return evaluate

    if target == "mse_map":
        if u_true is None:
            raise ValueError("target 'mse_map' needs the true parameter u_true")
        u_true = _as_vector(u_true, p.space.n)
        g_u = k_raw @ u_true

        def evaluate(count, rng_u, rng_e):
            data = g_u[None, :] + draw_noise(count, rng_e)
            y_res = p.row_scale[None, :] * data - res_shift
            m_post = y_res @ r_mat.T + m_pr[None, :]
            return kernels.rowwise_weighted_sqnorm(u_true[None, :] - m_post, mass)

        return evaluate

    raise AssertionError(f"unhandled target {target}")


# ---------------------------------------------------------------------------
# Greedy and exhaustive design optimization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GreedyStep:
    chosen: int
    gain: float
    report: CriterionReport
    monotone: bool


@dataclass(frozen=True)
class GreedyResult:
    design: DesignWeights
    steps: tuple

    @property
    def values(self) -> np.ndarray:
        return np.array([s.report.value for s in self.steps])


def _s_apply(spec: Spectrum, x: np.ndarray) -> np.ndarray:
    """(I + H)^{-1} x from the spectrum of H (exact: the complement is 1)."""
    if spec.rank == 0:
        return x
    alphas = spec.values / (1.0 + spec.values)
    return x - spec.vectors @ (alphas * spec.coefficients(x))


def _rankone_update(spec: Spectrum, w: np.ndarray, space) -> Spectrum:
    """Spectrum of H + w <w, .> from the spectrum of H (exact)."""
    c = spec.coefficients(w) if spec.rank else np.zeros(0)
    resid = w - (spec.vectors @ c if spec.rank else 0.0)
    r_norm = space.norm(resid)
    basis = spec.vectors
    coord = c
    if r_norm > 1e-13 * max(1.0, space.norm(w)):
        basis = np.hstack([basis, (resid / r_norm)[:, None]])
        coord = np.concatenate([c, [r_norm]])
    core = np.diag(np.concatenate([spec.values, np.zeros(basis.shape[1] - spec.rank)]))
    core += np.outer(coord, coord)
    vals, z = np.linalg.eigh(core)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = basis @ z[:, order]
    keep = vals >= 1e-13 * max(vals[0], 1.0) if vals.size else vals > 0
    return Spectrum(space, vals[keep], vecs[:, keep])


def greedy_design(p: InverseProblem, k: int, criterion: str = "D", method: str = "auto") -> GreedyResult:
    """Select ``k`` observations one at a time, maximizing the information
    gain increase (D) or the posterior-trace decrease (A) at each step.

    Candidate scans use rank-one determinant/trace updates against the
    current Hessian spectrum.  ``method`` controls how the spectrum itself
    advances after a pick: "auto" refactorizes the selected design exactly,
    "rankone" carries the spectral rank-one update forward, and "exact"
    additionally scores every candidate by full refactorization.  All paths
    agree to tight tolerance and the trajectory is tie-broken toward the
    lowest candidate index.
    """
    if criterion not in ("D", "A"):
        raise ValueError("criterion must be 'D' or 'A'")
    if method not in ("auto", "rankone", "exact"):
        raise ValueError(f"unknown method {method!r}")
    q_c = p.q
    if k > q_c:
        raise ValueError(f"k={k} exceeds the candidate count {q_c}")

    # candidate directions w_j = C^{1/2} g_j* at unit activation
    root = p.prior_sqrt()
    w_cols = []
    for j in range(q_c):
        row = p.forward_matrix[j] / np.sqrt(p.noise_var[j])
        w_cols.append(root.apply(row / p.space.mass))
    prior_tr = prior_trace(p)

    weights = np.zeros(q_c)
    spec = Spectrum.empty(p.space)
    value = 0.0 if criterion == "D" else prior_tr
    steps = []
    for _ in range(k):
        best_j, best_value, best_gain = -1, None, None
        for j in range(q_c):
            if weights[j] > 0:
                continue
            if method == "exact":
                trial = np.array(weights)
                trial[j] = 1.0
                cand_value = _criterion_value(p.with_design(trial), criterion)
            else:
                w = w_cols[j]
                sw = _s_apply(spec, w)
                t = p.space.inner(w, sw)
                if criterion == "D":
                    cand_value = value + 0.5 * np.log1p(t)
                else:
                    half_sw = root.apply(sw)
                    cand_value = value - p.space.inner(half_sw, half_sw) / (1.0 + t)
            if criterion == "D":
                better = best_value is None or cand_value > best_value
            else:
                better = best_value is None or cand_value < best_value
            if better:
                best_j, best_value = j, float(cand_value)
        gain = best_value - value if criterion == "D" else value - best_value
        weights[best_j] = 1.0
        if method == "rankone":
            spec = _rankone_update(spec, w_cols[best_j], p.space)
            new_value = float(best_value)
        else:
            active = p.with_design(weights)
            spec = preconditioned_hessian_spectrum(active)
            new_value = _criterion_value(active, criterion, spec)
        monotone = new_value >= value - 1e-10 if criterion == "D" else new_value <= value + 1e-10
        steps.append(GreedyStep(best_j, float(gain), CriterionReport(criterion, new_value, spec), monotone))
        value = new_value

    design = DesignWeights(p.forward_matrix.copy(), p.noise_var.copy(), weights)
    return GreedyResult(design, tuple(steps))


def _criterion_value(p: InverseProblem, criterion: str, spec: Spectrum | None = None) -> float:
    if spec is None:
        spec = preconditioned_hessian_spectrum(p)
    if criterion == "D":
        return 0.5 * logdet_i_plus(spec.values)
    alphas = spec.values / (1.0 + spec.values) if spec.rank else np.zeros(0)
    reduction = 0.0
    for a, vec in zip(alphas, spec.vectors.T):
        reduction += a * p.space.inner(vec, p.prior.cov.apply(vec))
    return float(prior_trace(p) - reduction)


def exhaustive_design(p: InverseProblem, k: int, criterion: str = "D") -> tuple[DesignWeights, float]:
    """Best k-subset by enumeration; the oracle for greedy, limited to small
    candidate counts."""
    q_c = p.q
    if q_c > 15:
        raise ValueError("exhaustive enumeration is limited to 15 candidates")
    if k > q_c:
        raise ValueError(f"k={k} exceeds the candidate count {q_c}")
    best_subset, best_value = None, None
    for subset in itertools.combinations(range(q_c), k):
        weights = np.zeros(q_c)
        weights[list(subset)] = 1.0
        value = _criterion_value(p.with_design(weights), criterion)
        better = best_value is None or (value > best_value if criterion == "D" else value < best_value)
        if better:
            best_subset, best_value = subset, value
    weights = np.zeros(q_c)
    weights[list(best_subset)] = 1.0
    return DesignWeights(p.forward_matrix.copy(), p.noise_var.copy(), weights), float(best_value)
