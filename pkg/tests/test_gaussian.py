"""Gaussian measure calculus: sampling moments, affine pushforwards,
quadratic-form expectations, the exponential integral, and the dense
reference KL divergence."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from boed.gaussian import (
    GaussianMeasure,
    expect_quad_form,
    gaussian_exp_integral,
    kl_gaussian_ref,
    make_rng,
    pushforward_affine,
)
from boed.operators import (
    ComposedOperator,
    DenseOperator,
    DiagonalOperator,
    LowRankOperator,
    Space,
    eig_self_adjoint,
    identity,
    logdet_i_plus,
    trace,
)

from test_operators import dense_self_adjoint, random_space


def random_measure(rng, space, centered=False):
    cov_op = dense_self_adjoint(space, rng, spd=True)
    mean = np.zeros(space.n) if centered else rng.standard_normal(space.n)
    return GaussianMeasure(space, mean, cov_op)


class TestSampling:
    def test_zero_covariance_returns_mean(self):
        sp = Space.euclidean(3)
        mu = GaussianMeasure(sp, [1.0, -2.0, 0.5], DiagonalOperator(np.zeros(3), sp))
        draws = mu.sample(50, seed=1)
        assert_allclose(draws, np.tile(mu.mean, (50, 1)))

    def test_fixed_seed_reproducible_bitwise(self):
        rng = np.random.default_rng(20)
        sp = random_space(rng, 5)
        mu = random_measure(rng, sp)
        a = mu.sample(100, seed=42, stream=3)
        b = mu.sample(100, seed=42, stream=3)
        assert np.array_equal(a, b)
        c = mu.sample(100, seed=42, stream=4)
        assert not np.array_equal(a, c)

    def test_sample_mean_clt_bound(self):
        sp = Space.euclidean(1)
        mu = GaussianMeasure(sp, [0.0], DiagonalOperator([1.0], sp))
        draws = mu.sample(10**5, seed=7)
        assert abs(draws.mean()) <= 4.0 / np.sqrt(10**5)

    def test_second_moment_identity(self):
        """Empirical E|x|^2 matches tr(Q) + |m|^2 within 5 standard errors."""
        rng = np.random.default_rng(21)
        sp = random_space(rng, 4)
        mu = random_measure(rng, sp)
        expected = float(np.sum(mu.cov_spectrum.values)) + sp.inner(mu.mean, mu.mean) ** 1
        draws = mu.sample(10**5, seed=8)
        norms = (draws**2 * sp.mass[None, :]).sum(axis=1)
        se = norms.std(ddof=1) / np.sqrt(norms.size)
        assert abs(norms.mean() - expected) <= 5 * se


class TestPushforward:
    def test_identity_map_preserves_measure(self):
        rng = np.random.default_rng(22)
        sp = random_space(rng, 4)
        mu = random_measure(rng, sp)
        nu = pushforward_affine(mu, identity(sp), np.zeros(4))
        assert_allclose(nu.mean, mu.mean)
        assert_allclose(nu.cov.matrix(), mu.cov.matrix(), atol=1e-12)

    def test_zero_map_gives_point_mass(self):
        rng = np.random.default_rng(23)
        sp = random_space(rng, 3)
        mu = random_measure(rng, sp)
        b = np.array([1.0, 2.0, 3.0])
        nu = pushforward_affine(mu, DenseOperator(np.zeros((3, 3)), sp, sp), b)
        assert_allclose(nu.mean, b)
        assert_allclose(nu.sample(10, seed=1), np.tile(b, (10, 1)), atol=1e-12)

    def test_scalar_affine_law(self):
        # N(1, 2) under x -> 3x + 1 becomes N(4, 18)
        sp = Space.euclidean(1)
        mu = GaussianMeasure(sp, [1.0], DiagonalOperator([2.0], sp))
        nu = pushforward_affine(mu, DenseOperator([[3.0]], sp, sp), [1.0])
        assert nu.mean[0] == pytest.approx(4.0)
        assert nu.cov.matrix()[0, 0] == pytest.approx(18.0)

    def test_pushforward_second_moment_mc(self):
        """E|Ax+b|^2 = tr(AQA*) + |Am+b|^2 within 5 standard errors."""
        rng = np.random.default_rng(24)
        dom = random_space(rng, 4)
        cod = random_space(rng, 3)
        mu = random_measure(rng, dom)
        a = DenseOperator(rng.standard_normal((3, 4)), dom, cod)
        b = rng.standard_normal(3)
        nu = pushforward_affine(mu, a, b)
        expected = trace(ComposedOperator([a, mu.cov, a.adjoint()])) + cod.inner(nu.mean, nu.mean)
        draws = mu.sample(10**5, seed=9)
        images = draws @ a.matrix().T + b[None, :]
        norms = (images**2 * cod.mass[None, :]).sum(axis=1)
        se = norms.std(ddof=1) / np.sqrt(norms.size)
        assert abs(norms.mean() - expected) <= 5 * se


class TestExpectQuadForm:
    def test_identity_centered_gives_trace(self):
        rng = np.random.default_rng(25)
        sp = random_space(rng, 5)
        mu = random_measure(rng, sp, centered=True)
        assert expect_quad_form(identity(sp), mu) == pytest.approx(
            float(np.sum(mu.cov_spectrum.values)), rel=1e-10
        )

    def test_scalar_example(self):
        # A = 2, N(3, 4): 2*4 + 2*9 = 26
        sp = Space.euclidean(1)
        mu = GaussianMeasure(sp, [3.0], DiagonalOperator([4.0], sp))
        assert expect_quad_form(DiagonalOperator([2.0], sp), mu) == pytest.approx(26.0)

    def test_linear_in_operator(self):
        rng = np.random.default_rng(26)
        sp = random_space(rng, 5)
        mu = random_measure(rng, sp)
        a1 = dense_self_adjoint(sp, rng)
        a2 = dense_self_adjoint(sp, rng)
        sum_op = DenseOperator(a1.matrix() + a2.matrix(), sp, sp, self_adjoint=True)
        lhs = expect_quad_form(sum_op, mu)
        rhs = expect_quad_form(a1, mu) + expect_quad_form(a2, mu)
        assert lhs == pytest.approx(rhs, abs=1e-10 * max(1.0, abs(rhs)))

    def test_against_monte_carlo(self):
        rng = np.random.default_rng(27)
        sp = random_space(rng, 6)
        mu = random_measure(rng, sp)
        a = dense_self_adjoint(sp, rng, spd=True)
        draws = mu.sample(10**5, seed=10)
        images = draws @ a.matrix().T
        quads = (images * draws * sp.mass[None, :]).sum(axis=1)
        se = quads.std(ddof=1) / np.sqrt(quads.size)
        assert abs(quads.mean() - expect_quad_form(a, mu)) <= 5 * se


class TestGaussianExpIntegral:
    def test_zero_a_zero_b_is_probability(self):
        rng = np.random.default_rng(28)
        sp = random_space(rng, 4)
        mu = random_measure(rng, sp, centered=True)
        value = gaussian_exp_integral(DenseOperator(np.zeros((4, 4)), sp, sp, self_adjoint=True), np.zeros(4), mu)
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_scalar_half_log_two(self):
        sp = Space.euclidean(1)
        mu = GaussianMeasure(sp, [0.0], DiagonalOperator([1.0], sp))
        value = gaussian_exp_integral(DiagonalOperator([1.0], sp), [0.0], mu)
        assert value == pytest.approx(-0.5 * np.log(2.0))

    def test_requires_centered_measure(self):
        sp = Space.euclidean(1)
        mu = GaussianMeasure(sp, [1.0], DiagonalOperator([1.0], sp))
        with pytest.raises(ValueError):
            gaussian_exp_integral(DiagonalOperator([1.0], sp), [0.0], mu)

    def test_b_zero_matches_logdet(self):
        """With no linear term the integral is -logdet(I + Q^{1/2}AQ^{1/2})/2."""
        rng = np.random.default_rng(29)
        sp = random_space(rng, 5)
        mu = random_measure(rng, sp, centered=True)
        a = dense_self_adjoint(sp, rng, spd=True)
        q_half = eig_self_adjoint(mu.cov, rank="full")
        root = LowRankOperator(
            type(q_half)(sp, np.sqrt(np.clip(q_half.values, 0, None)), q_half.vectors)
        )
        tilde = ComposedOperator([root, a, root], self_adjoint=True)
        spec = eig_self_adjoint(tilde, rank="full")
        expected = -0.5 * logdet_i_plus(np.clip(spec.values, 0.0, None))
        value = gaussian_exp_integral(a, np.zeros(5), mu)
        assert value == pytest.approx(expected, abs=1e-10)

    def test_against_monte_carlo(self):
        """Linear-domain MC of exp(-<Ax,x>/2 + <b,x>) within 5 standard errors."""
        rng = np.random.default_rng(30)
        sp = random_space(rng, 4)
        mu = random_measure(rng, sp, centered=True)
        a = dense_self_adjoint(sp, rng, spd=True)
        b = 0.5 * rng.standard_normal(4)
        draws = mu.sample(10**6, seed=11)
        images = draws @ a.matrix().T
        quad = (images * draws * sp.mass[None, :]).sum(axis=1)
        lin = draws @ (sp.mass * b)
        vals = np.exp(-0.5 * quad + lin)
        se = vals.std(ddof=1) / np.sqrt(vals.size)
        assert abs(vals.mean() - np.exp(gaussian_exp_integral(a, b, mu))) <= 5 * se


class TestKlGaussianRef:
    def test_identical_measures_zero(self):
        rng = np.random.default_rng(31)
        sp = random_space(rng, 5)
        mu = random_measure(rng, sp)
        assert kl_gaussian_ref(mu, mu) == pytest.approx(0.0, abs=1e-10)

    def test_scalar_mean_shift(self):
        sp = Space.euclidean(1)
        prior = GaussianMeasure(sp, [0.0], DiagonalOperator([1.0], sp))
        post = GaussianMeasure(sp, [1.0], DiagonalOperator([1.0], sp))
        assert kl_gaussian_ref(post, prior) == pytest.approx(0.5)

    def test_scalar_variance_contraction(self):
        # post N(0, 1/2) against prior N(0, 1): (log 2 - 1 + 1/2) / 2
        sp = Space.euclidean(1)
        prior = GaussianMeasure(sp, [0.0], DiagonalOperator([1.0], sp))
        post = GaussianMeasure(sp, [0.0], DiagonalOperator([0.5], sp))
        assert kl_gaussian_ref(post, prior) == pytest.approx(0.5 * (np.log(2.0) - 0.5), abs=1e-12)
        assert kl_gaussian_ref(post, prior) == pytest.approx(0.096574, abs=5e-7)

    def test_nonnegative_and_zero_iff_equal(self):
        rng = np.random.default_rng(32)
        for trial in range(100):
            sp = random_space(rng, 3)
            post = random_measure(rng, sp)
            prior = random_measure(rng, sp)
            value = kl_gaussian_ref(post, prior)
            assert value >= -1e-10
            if value <= 1e-10:
                assert_allclose(post.mean, prior.mean, atol=1e-6)
                assert_allclose(post.cov.matrix(), prior.cov.matrix(), atol=1e-6)


class TestMakeRng:
    def test_streams_are_independent_and_stable(self):
        a = make_rng(5, 0).standard_normal(4)
        b = make_rng(5, 0).standard_normal(4)
        c = make_rng(5, 1).standard_normal(4)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
