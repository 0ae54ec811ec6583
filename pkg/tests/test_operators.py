"""Weighted-inner-product linear algebra: adjoints, eigendecompositions,
traces, determinants, and operator square roots."""

import numpy as np
import pytest
import scipy.linalg
from numpy.testing import assert_allclose

from boed.operators import (
    ComposedOperator,
    DenseOperator,
    DiagonalOperator,
    LowRankOperator,
    ShiftedInverseOperator,
    Space,
    SpectralError,
    Spectrum,
    adjoint_defect,
    eig_self_adjoint,
    identity,
    logdet_i_plus,
    orthonormality_defect,
    sqrt_apply,
    trace,
)


def random_space(rng, n):
    return Space(rng.uniform(0.3, 2.5, size=n))


def dense_self_adjoint(space, rng, spd=False):
    """Random operator self-adjoint in the weighted inner product.

    Self-adjointness is equivalent to M K being symmetric, so draw a
    symmetric S (or SPD) and set K = M^{-1} S.
    """
    n = space.n
    a = rng.standard_normal((n, n))
    s = a + a.T
    if spd:
        s = a @ a.T + n * np.eye(n)
    k = s / space.mass[:, None]
    return DenseOperator(k, space, space, self_adjoint=True)


def generalized_eig_oracle(op):
    """Independent eigensolver: eigh(M K, M) gives the weighted eigenpairs."""
    m = np.diag(op.domain.mass)
    k = op.matrix()
    vals, vecs = scipy.linalg.eigh(m @ k, m)
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]


class TestSpace:
    def test_rejects_nonpositive_mass(self):
        with pytest.raises(ValueError):
            Space([1.0, 0.0])
        with pytest.raises(ValueError):
            Space([1.0, -2.0])

    def test_inner_product_symmetric_positive(self):
        rng = np.random.default_rng(0)
        sp = random_space(rng, 7)
        for _ in range(20):
            x = rng.standard_normal(7)
            y = rng.standard_normal(7)
            assert sp.inner(x, y) == pytest.approx(sp.inner(y, x), abs=1e-14)
            assert sp.inner(x, x) > 0

    def test_inner_matches_weighted_sum(self):
        sp = Space([2.0, 3.0])
        assert sp.inner([1.0, 1.0], [1.0, 2.0]) == pytest.approx(2.0 + 6.0)


class TestApply:
    def test_diagonal_action(self):
        sp = Space.euclidean(2)
        op = DiagonalOperator([2.0, 3.0], sp)
        assert_allclose(op.apply([1.0, 1.0]), [2.0, 3.0])

    def test_single_factor_composition_is_identity_wrapper(self):
        rng = np.random.default_rng(1)
        sp = random_space(rng, 4)
        op = dense_self_adjoint(sp, rng)
        x = rng.standard_normal(4)
        assert_allclose(ComposedOperator([op]).apply(x), op.apply(x))

    def test_composition_applies_right_to_left(self):
        sp = Space.euclidean(2)
        a = DenseOperator([[0.0, 1.0], [1.0, 0.0]], sp, sp)
        b = DiagonalOperator([2.0, 5.0], sp)
        # A(B(x)) with x = e1: scale then swap
        assert_allclose(ComposedOperator([a, b]).apply([1.0, 0.0]), [0.0, 2.0])

    def test_shifted_inverse_closed_form(self):
        sp = Space.euclidean(2)
        op = ShiftedInverseOperator(DiagonalOperator([1.0, 3.0], sp), shift=1.0)
        assert_allclose(op.apply([2.0, 4.0]), [1.0, 1.0], atol=1e-14)

    def test_shifted_inverse_spectral_fast_path_matches_dense(self):
        rng = np.random.default_rng(2)
        sp = random_space(rng, 6)
        spd = dense_self_adjoint(sp, rng, spd=True)
        spec = eig_self_adjoint(spd, rank="full")
        via_lowrank = ShiftedInverseOperator(LowRankOperator(spec), shift=0.7)
        via_dense = ShiftedInverseOperator(spd, shift=0.7)
        x = rng.standard_normal(6)
        assert_allclose(via_lowrank.apply(x), via_dense.apply(x), rtol=1e-10, atol=1e-12)

    @pytest.mark.filterwarnings("ignore:Diagonal number")
    def test_shifted_inverse_singular_raises(self):
        sp = Space.euclidean(2)
        op = ShiftedInverseOperator(DiagonalOperator([-1.0, 3.0], sp), shift=1.0)
        with pytest.raises(SpectralError):
            op.apply([1.0, 1.0])

    def test_dimension_mismatch_raises(self):
        sp = Space.euclidean(3)
        op = DiagonalOperator([1.0, 2.0, 3.0], sp)
        with pytest.raises(ValueError):
            op.apply([1.0, 2.0])


class TestAdjoint:
    def test_diagonal_adjoint_is_apply(self):
        rng = np.random.default_rng(3)
        sp = random_space(rng, 5)
        op = DiagonalOperator(rng.uniform(0.5, 2.0, 5), sp)
        x = rng.standard_normal(5)
        assert_allclose(op.adjoint_apply(x), op.apply(x))

    def test_dense_adjoint_hand_example(self):
        # K = [[1, 0]] from mass-[2,2] space into R^1: adjoint is M^{-1} K^T y
        dom = Space([2.0, 2.0])
        op = DenseOperator([[1.0, 0.0]], dom, Space.euclidean(1))
        assert_allclose(op.adjoint_apply([4.0]), [2.0, 0.0])

    def test_dense_adjoint_defect_small(self):
        rng = np.random.default_rng(4)
        dom = random_space(rng, 5)
        cod = random_space(rng, 5)
        op = DenseOperator(rng.standard_normal((5, 5)), dom, cod)
        for _ in range(20):
            x = rng.standard_normal(5)
            y = rng.standard_normal(5)
            assert adjoint_defect(op, x, y) <= 1e-12

    def test_adjoint_consistency_all_variants(self):
        """<Ax, y> = <x, A*y> to 1e-12 relative on 100 random pairs."""
        rng = np.random.default_rng(5)
        dom = random_space(rng, 6)
        cod = random_space(rng, 4)
        spd = dense_self_adjoint(dom, rng, spd=True)
        spec = eig_self_adjoint(spd, rank="full").truncate(3)
        ops = [
            DenseOperator(rng.standard_normal((4, 6)), dom, cod),
            DiagonalOperator(rng.uniform(0.5, 2.0, 6), dom),
            LowRankOperator(spec),
            ShiftedInverseOperator(spd, shift=0.3),
            ComposedOperator(
                [DiagonalOperator(rng.uniform(0.5, 2.0, 6), dom), spd, LowRankOperator(spec)]
            ),
        ]
        for op in ops:
            for _ in range(100):
                x = rng.standard_normal(op.domain.n)
                y = rng.standard_normal(op.codomain.n)
                assert adjoint_defect(op, x, y) <= 1e-12


class TestEig:
    def test_diagonal_with_identity_mass(self):
        sp = Space.euclidean(2)
        spec = eig_self_adjoint(DiagonalOperator([3.0, 1.0], sp), rank="full")
        assert_allclose(spec.values, [3.0, 1.0], atol=1e-12)
        assert_allclose(np.abs(spec.vectors), np.eye(2), atol=1e-12)

    def test_degenerate_eigenvalues_values_only(self):
        sp = Space.euclidean(3)
        spec = eig_self_adjoint(DiagonalOperator([2.5, 2.5, 2.5], sp), rank="full")
        assert_allclose(spec.values, [2.5, 2.5, 2.5], atol=1e-12)
        assert orthonormality_defect(spec) <= 1e-10

    def test_dense_spd_matches_generalized_oracle(self):
        rng = np.random.default_rng(6)
        sp = random_space(rng, 6)
        op = dense_self_adjoint(sp, rng, spd=True)
        spec = eig_self_adjoint(op, rank="full")
        oracle_vals, _ = generalized_eig_oracle(op)
        assert_allclose(spec.values, oracle_vals, rtol=1e-9)
        assert orthonormality_defect(spec) <= 1e-10

    def test_lanczos_partial_matches_dense(self):
        rng = np.random.default_rng(7)
        sp = random_space(rng, 40)
        op = dense_self_adjoint(sp, rng, spd=True)
        full = eig_self_adjoint(op, rank="full")
        part = eig_self_adjoint(op, rank=6, tol=1e-9)
        assert_allclose(part.values, full.values[:6], rtol=1e-9)
        assert orthonormality_defect(part) <= 1e-10

    def test_lanczos_rank_deficient_operator(self):
        # rank-3 PSD operator on a 30-dim space: breakdown must be handled
        rng = np.random.default_rng(8)
        sp = random_space(rng, 30)
        b = rng.standard_normal((30, 3))
        k = (b @ b.T) / sp.mass[:, None]
        op = DenseOperator(k, sp, sp, self_adjoint=True)
        spec = eig_self_adjoint(op, rank=5, tol=1e-8)
        oracle_vals, _ = generalized_eig_oracle(op)
        assert_allclose(spec.values, oracle_vals[:5], atol=1e-8 * oracle_vals[0])
        assert orthonormality_defect(spec) <= 1e-10

    def test_non_self_adjoint_rejected(self):
        rng = np.random.default_rng(9)
        sp = random_space(rng, 5)
        op = DenseOperator(rng.standard_normal((5, 5)), sp, sp, self_adjoint=True)
        with pytest.raises(ValueError):
            eig_self_adjoint(op, rank="full")


class TestTrace:
    def test_diagonal(self):
        sp = Space.euclidean(3)
        assert trace(DiagonalOperator([1.0, 2.0, 3.0], sp)) == pytest.approx(6.0)

    def test_low_rank_sum(self):
        sp = Space.euclidean(4)
        spec = Spectrum(sp, [5.0, 2.0], np.eye(4)[:, :2])
        assert trace(LowRankOperator(spec)) == pytest.approx(7.0)

    def test_cyclic_commutation(self):
        """tr(AB) = tr(BA) for SPD A and a rank-2 B, against dense products."""
        rng = np.random.default_rng(10)
        sp = random_space(rng, 5)
        a = dense_self_adjoint(sp, rng, spd=True)
        spd2 = dense_self_adjoint(sp, rng, spd=True)
        b = LowRankOperator(eig_self_adjoint(spd2, rank="full").truncate(2))
        t_ab = trace(ComposedOperator([a, b]))
        t_ba = trace(ComposedOperator([b, a]))
        dense = float(np.trace(a.matrix() @ b.matrix()))
        assert t_ab == pytest.approx(t_ba, abs=1e-10)
        assert t_ab == pytest.approx(dense, abs=1e-10)

    def test_basis_independence(self):
        """Sum of <A f_j, f_j> agrees between the canonical M-orthonormal basis
        and a randomly rotated one."""
        rng = np.random.default_rng(11)
        sp = random_space(rng, 6)
        op = dense_self_adjoint(sp, rng, spd=True)
        canonical = np.diag(1.0 / np.sqrt(sp.mass))  # canonical M-orthonormal basis
        rotation, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        rotated = canonical @ rotation

        def basis_trace(basis):
            return sum(sp.inner(op.apply(basis[:, j]), basis[:, j]) for j in range(6))

        t1 = basis_trace(canonical)
        t2 = basis_trace(rotated)
        assert t1 == pytest.approx(t2, abs=1e-10)
        assert trace(op) == pytest.approx(t1, abs=1e-10)


class TestLogDet:
    def test_empty_spectrum(self):
        assert logdet_i_plus([]) == 0.0

    def test_scalar(self):
        assert logdet_i_plus([1.0]) == pytest.approx(np.log(2.0))

    def test_matches_dense_determinant(self):
        rng = np.random.default_rng(12)
        sp = random_space(rng, 8)
        spd = dense_self_adjoint(sp, rng, spd=True)
        spec = eig_self_adjoint(spd, rank="full").truncate(4)
        a = LowRankOperator(spec)
        dense = np.eye(8) + a.matrix()
        sign, logdet = np.linalg.slogdet(dense)
        assert sign > 0
        assert logdet_i_plus(spec) == pytest.approx(logdet, abs=1e-10)

    def test_eigenvalue_at_minus_one_rejected(self):
        with pytest.raises(SpectralError):
            logdet_i_plus([0.5, -1.0])


class TestSqrtApply:
    def test_single_direction(self):
        sp = Space.euclidean(3)
        spec = Spectrum(sp, [4.0], np.eye(3)[:, :1])
        assert_allclose(sqrt_apply(spec, [1.0, 0.0, 0.0]), [2.0, 0.0, 0.0])

    def test_orthogonal_complement_maps_to_zero(self):
        sp = Space.euclidean(3)
        spec = Spectrum(sp, [4.0], np.eye(3)[:, :1])
        assert_allclose(sqrt_apply(spec, [0.0, 1.0, 2.0]), 0.0, atol=1e-15)

    def test_sqrt_twice_equals_apply(self):
        rng = np.random.default_rng(13)
        sp = random_space(rng, 6)
        op = dense_self_adjoint(sp, rng, spd=True)
        spec = eig_self_adjoint(op, rank="full")
        x = rng.standard_normal(6)
        assert_allclose(sqrt_apply(spec, sqrt_apply(spec, x)), op.apply(x), rtol=1e-9, atol=1e-9)

    def test_negative_eigenvalue_rejected(self):
        sp = Space.euclidean(2)
        spec = Spectrum(sp, [1.0, -0.5], np.eye(2))
        with pytest.raises(SpectralError):
            sqrt_apply(spec, [1.0, 1.0])


class TestSpectrumInvariants:
    def test_orthonormal_after_every_eig(self):
        rng = np.random.default_rng(14)
        for n in (4, 9, 17):
            sp = random_space(rng, n)
            op = dense_self_adjoint(sp, rng, spd=True)
            assert orthonormality_defect(eig_self_adjoint(op, rank="full")) <= 1e-10

    def test_values_sorted(self):
        sp = Space.euclidean(3)
        with pytest.raises(ValueError):
            Spectrum(sp, [1.0, 2.0], np.eye(3)[:, :2])
