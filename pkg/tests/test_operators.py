import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import brute_tv, dense_H_hs, dense_H_ms, dense_wavelet

from csfusion.aperture import design_dual_apertures
from csfusion.datamodel import (
    ConfigurationError,
    DimensionError,
    PatternCube,
    SpectralCube,
    ValidationError,
    cube_as_vector,
)
from csfusion.operators import (
    DifferenceOperator,
    SparseProjection,
    WaveletOperator,
    apply,
    apply_adjoint,
    build_H_hs,
    build_H_ms,
    build_projection,
    haar_step,
    haar_step_inverse,
    stack_projections,
    tv_adjoint,
    tv_forward,
    tv_norm,
    wavelet_forward,
    wavelet_inverse,
)
from csfusion.sensing import acquire_chsi, acquire_cmsi, fused_features_reference


def _design(M=16, N=16, L=8, q=2, p=2, seed=0):
    d = design_dual_apertures(M, N, L, q, p, seed)
    return d, build_projection(d)


def _rel_adjoint_gap(op_apply, op_adjoint, n_in, n_out, rng):
    x = rng.standard_normal(n_in)
    v = rng.standard_normal(n_out)
    lhs = float(op_apply(x) @ v)
    rhs = float(x @ op_adjoint(v))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


class TestSparseProjection:
    def test_rejects_duplicate_columns(self):
        # messages use 1-based rows
        m = sp.csr_matrix((np.ones(2), np.array([1, 1]), np.array([0, 2])), shape=(1, 3))
        with pytest.raises(ValidationError, match="row 1 "):
            SparseProjection(m)
        m = sp.csr_matrix((np.ones(3), np.array([0, 2, 2]), np.array([0, 1, 3])), shape=(2, 3))
        with pytest.raises(ValidationError, match="row 2 "):
            SparseProjection(m)

    def test_sorted_columns_after_construction(self):
        m = sp.csr_matrix((np.ones(3), np.array([2, 0, 1]), np.array([0, 3])), shape=(1, 3))
        P = SparseProjection(m)
        assert list(P.matrix.indices) == [0, 1, 2]

    def test_apply_shape_checks(self):
        P = SparseProjection(sp.eye(3))
        with pytest.raises(DimensionError):
            P.apply(np.ones(4))
        with pytest.raises(DimensionError):
            P.adjoint(np.ones(2))

    def test_triplets(self, tmp_path):
        P = SparseProjection(sp.csr_matrix(np.array([[0.0, 0.5], [1.0, 0.0]])))
        path = tmp_path / "h.tsv"
        P.to_triplets(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "# 2\t2\t2"
        assert lines[1:] == ["1\t2\t0.5", "2\t1\t1.0"]


class TestHms:
    def test_single_pixel_example(self):
        S = PatternCube(np.array([[[2, 1]]]), 2)
        H = build_H_ms(S, 1, 1, 2, 4, 2)
        assert list(H.matrix[0].indices + 1) == [3, 4]
        assert list(H.matrix[1].indices + 1) == [1, 2]

    @pytest.mark.parametrize("q,p,L", [(1, 1, 4), (2, 2, 8), (4, 2, 16), (2, 4, 8)])
    def test_matches_dense_oracle(self, q, p, L):
        d, (H_ms, H_hs, _) = _design(8, 8, L, q, p, seed=q + p)
        K = d.hs_bank.count
        np.testing.assert_array_equal(H_ms.matrix.toarray(), dense_H_ms(d.ms_patterns.indices, 8, 8, d.W, K, q))
        np.testing.assert_array_equal(H_hs.matrix.toarray(), dense_H_hs(d.hs_patterns.indices, 8, 8, K, p))

    @pytest.mark.parametrize("q", [1, 2, 4])
    def test_structure(self, q):
        d, (H_ms, _, _) = _design(8, 8, 16, q, 2)
        K = d.hs_bank.count
        assert np.all(H_ms.row_counts() == q)
        assert np.all(H_ms.matrix.data == 1.0)
        assert H_ms.nnz == 8 * 8 * d.W * q
        assert H_ms.measurement_rate() == 1 / q
        assert H_ms.shape == (64 * d.W, 64 * K)

    def test_index_overflow_rejected(self):
        S = PatternCube(np.array([[[3]]]), 3)
        with pytest.raises(ValidationError):
            build_H_ms(S, 1, 1, 1, 4, 2)


class TestHhs:
    def test_p1_selection(self):
        d, (_, H_hs, _) = _design(4, 4, 8, 2, 1)
        assert np.all(H_hs.row_counts() == 1)
        assert np.all(H_hs.matrix.data == 1.0)

    @pytest.mark.parametrize("p", [1, 2, 4])
    def test_structure(self, p):
        d, (_, H_hs, _) = _design(8, 8, 8, 2, p)
        K = d.hs_bank.count
        assert np.all(H_hs.row_counts() == p * p)
        assert np.all(H_hs.matrix.data == 1.0 / p**2)
        np.testing.assert_array_equal(np.asarray(H_hs.matrix.sum(axis=1)).ravel(), 1.0)
        assert H_hs.nnz == (8 // p) * (8 // p) * K * p * p
        assert H_hs.measurement_rate() == 1 / p**2

    def test_ones_vector(self):
        _, (_, H_hs, _) = _design(8, 8, 8, 2, 2)
        np.testing.assert_array_equal(H_hs.apply(np.ones(H_hs.cols)), np.ones(H_hs.rows))

    def test_remainder_grid_matches_forward_model(self, rng):
        d = design_dual_apertures(6, 5, 4, 2, 2, seed=2)
        _, H_hs, _ = build_projection(d)
        F = SpectralCube(rng.random((6, 5, 4)))
        x = cube_as_vector(fused_features_reference(F, d.hs_bank))
        np.testing.assert_allclose(H_hs.apply(x), cube_as_vector(acquire_chsi(F, d.hs_bank, d.hs_patterns, 2)))

    def test_wrong_grid(self):
        S = PatternCube(np.ones((3, 3, 1), dtype=int), 2)
        with pytest.raises(DimensionError):
            build_H_hs(S, 8, 8, 2, 2)


class TestStack:
    def test_desk_scale_dims(self):
        _, (H_ms, H_hs, H) = _design(16, 16, 8, 2, 2)
        assert H.shape == (768, 1024)
        assert H.measurement_rate() == 0.75

    def test_empty_hs(self):
        _, (H_ms, _, _) = _design(8, 8, 8, 2, 2)
        empty = SparseProjection(sp.csr_matrix((0, H_ms.cols)))
        S = stack_projections(H_ms, empty)
        assert (S.matrix != H_ms.matrix).nnz == 0 and S.shape == H_ms.shape

    def test_apply_concatenates(self, rng):
        _, (H_ms, H_hs, H) = _design(8, 8, 8, 2, 2)
        x = rng.standard_normal(H.cols)
        np.testing.assert_array_equal(H.apply(x), np.concatenate([H_ms.apply(x), H_hs.apply(x)]))

    def test_column_mismatch(self):
        with pytest.raises(DimensionError):
            stack_projections(SparseProjection(sp.eye(3)), SparseProjection(sp.eye(4)))

    def test_zero_maps_to_zero(self):
        _, (_, _, H) = _design(8, 8, 8, 2, 2)
        assert not apply(H, np.zeros(H.cols)).any()


class TestForwardEquivalence:
    @given(st.integers(0, 10**6), st.sampled_from([(1, 1), (2, 2), (2, 4), (4, 2)]))
    def test_matrix_equals_direct_summation(self, seed, qp):
        q, p = qp
        rng = np.random.default_rng(seed)
        d, (H_ms, H_hs, _) = _design(8, 8, 16, q, p, seed)
        F = SpectralCube(rng.random((8, 8, 16)))
        x = cube_as_vector(fused_features_reference(F, d.hs_bank))
        ms = cube_as_vector(acquire_cmsi(F, d.ms_bank, d.ms_patterns))
        hs = cube_as_vector(acquire_chsi(F, d.hs_bank, d.hs_patterns, p))
        assert np.max(np.abs(H_ms.apply(x) - ms)) <= 1e-10 * np.max(np.abs(ms))
        assert np.max(np.abs(H_hs.apply(x) - hs)) <= 1e-10 * np.max(np.abs(hs))


class TestAdjoints:
    def test_projections(self, rng):
        _, ops = _design(16, 16, 8, 2, 2)
        for H in ops:
            for _ in range(20):
                assert _rel_adjoint_gap(H.apply, H.adjoint, H.cols, H.rows, rng) <= 1e-10

    def test_generic_helpers(self, rng):
        _, (_, _, H) = _design(8, 8, 8, 2, 2)
        x = rng.standard_normal(H.cols)
        v = rng.standard_normal(H.rows)
        assert apply(H, x) @ v == pytest.approx(x @ apply_adjoint(H, v), rel=1e-12)

    @pytest.mark.parametrize("shape", [(4, 4, 2), (5, 3, 4), (1, 6, 1)])
    def test_difference(self, shape, rng):
        Phi = DifferenceOperator(*shape)
        for _ in range(20):
            assert _rel_adjoint_gap(Phi.apply, Phi.adjoint, *Phi.shape[::-1], rng) <= 1e-10

    @pytest.mark.parametrize("levels", [0, 1, 2, 3])
    def test_wavelet(self, levels, rng):
        Psi = WaveletOperator(8, 16, 3, levels)
        for _ in range(20):
            assert _rel_adjoint_gap(Psi.apply, Psi.adjoint, Psi.shape[1], Psi.shape[0], rng) <= 1e-10


class TestDifference:
    def test_constant_cube(self):
        x = np.full(3 * 4 * 2, 2.5)
        assert not tv_forward(x, 3, 4, 2).any()
        assert tv_norm(x, 3, 4, 2) == 0

    def test_two_horizontal_steps(self):
        x = cube_as_vector(SpectralCube(np.array([[0.0, 1.0], [0.0, 1.0]])))
        assert tv_norm(x, 2, 2, 1) == 2

    def test_output_layout(self):
        # rows block, then cols block, then bands block, each of length MNK
        cube = np.zeros((2, 2, 2))
        cube[0, 0, 0] = 1.0
        d = tv_forward(cube_as_vector(SpectralCube(cube)), 2, 2, 2)
        n = 8
        assert d.size == 3 * n
        assert d[0] == 1 and d[n] == 1 and d[2 * n] == 1
        assert np.count_nonzero(d) == 3

    @given(arrays(np.float64, (3, 3, 2), elements=st.floats(-10, 10, allow_nan=False)))
    def test_brute_force_enumeration(self, cube):
        x = cube_as_vector(SpectralCube(cube))
        assert tv_norm(x, 3, 3, 2) == pytest.approx(brute_tv(cube), rel=1e-12, abs=1e-12)

    def test_adjoint_wrapper(self, rng):
        d = rng.standard_normal(3 * 2 * 2 * 2)
        x = rng.standard_normal(2 * 2 * 2)
        assert tv_forward(x, 2, 2, 2) @ d == pytest.approx(x @ tv_adjoint(d, 2, 2, 2), rel=1e-12)

    def test_length_check(self):
        with pytest.raises(DimensionError):
            DifferenceOperator(2, 2, 2).apply(np.ones(7))


class TestWavelet:
    def test_haar_pair(self):
        out = haar_step(np.array([1.0, 1.0]), 0)
        np.testing.assert_allclose(out, [math.sqrt(2), 0.0], atol=1e-15)
        np.testing.assert_allclose(haar_step_inverse(out, 0), [1.0, 1.0], atol=1e-15)

    @pytest.mark.parametrize("levels", [1, 2, 3])
    def test_matches_dense_oracle(self, levels, rng):
        cube = rng.standard_normal((8, 16, 2))
        c = wavelet_forward(cube_as_vector(SpectralCube(cube)), 8, 16, 2, levels)
        np.testing.assert_allclose(c, dense_wavelet(cube, levels).ravel(order="F"), atol=1e-12)

    def test_round_trip_and_parseval(self, rng):
        for _ in range(100):
            x = rng.standard_normal(8 * 8 * 4)
            c = wavelet_forward(x, 8, 8, 4, 2)
            assert np.max(np.abs(wavelet_inverse(c, 8, 8, 4, 2) - x)) <= 1e-12
            assert abs(np.linalg.norm(c) - np.linalg.norm(x)) <= 1e-12 * np.linalg.norm(x)

    def test_constant_band_compacts(self):
        c = wavelet_forward(np.ones(4 * 4), 4, 4, 1, 2)
        assert c[0] == pytest.approx(4.0)
        assert np.allclose(c[1:], 0)

    def test_indivisible_grid(self):
        with pytest.raises(ConfigurationError):
            WaveletOperator(6, 8, 1, 2)
