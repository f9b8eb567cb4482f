import warnings

import numpy as np
import pytest

from dynpact.geometry import VoxelGrid
from dynpact.lowrank import (
    DENSE_ELEMENT_LIMIT,
    FactoredImage,
    LowRankUpdate,
    add_scaled,
    column_difference_energy,
    frame_column,
    prox_nuclear,
    soft_threshold,
    truncated_svd,
)


def random_factored(rng, n=30, k=12, r=5, grid=None):
    u, _ = np.linalg.qr(rng.normal(size=(n, r)))
    v, _ = np.linalg.qr(rng.normal(size=(k, r)))
    s = np.sort(rng.uniform(0.5, 3.0, size=r))[::-1]
    return FactoredImage(u, s, v, grid)


def dense_prox_oracle(x, t, r_max):
    """Dense SVD, truncate to r_max, shrink by t, drop zeros."""
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    s = np.maximum(s[:r_max] - t, 0.0)
    keep = s > 0
    return (u[:, :r_max][:, keep] * s[keep]) @ vt[:r_max][keep]


class TestFactoredImage:
    def test_validation_orthonormality(self):
        rng = np.random.default_rng(0)
        u = rng.normal(size=(10, 3))  # not orthonormal
        v, _ = np.linalg.qr(rng.normal(size=(6, 3)))
        with pytest.raises(ValueError):
            FactoredImage(u, np.array([3.0, 2.0, 1.0]), v)

    def test_validation_spectrum_ordering(self):
        rng = np.random.default_rng(1)
        u, _ = np.linalg.qr(rng.normal(size=(10, 3)))
        v, _ = np.linalg.qr(rng.normal(size=(6, 3)))
        with pytest.raises(ValueError):
            FactoredImage(u, np.array([1.0, 2.0, 3.0]), v)
        with pytest.raises(ValueError):
            FactoredImage(u, np.array([3.0, 2.0, -1.0]), v)

    def test_sign_convention_applied(self):
        rng = np.random.default_rng(2)
        f = random_factored(rng)
        peaks = f.u[np.abs(f.u).argmax(axis=0), np.arange(f.rank)]
        assert np.all(peaks > 0)

    def test_sign_convention_preserves_product(self):
        rng = np.random.default_rng(3)
        u, _ = np.linalg.qr(rng.normal(size=(12, 4)))
        v, _ = np.linalg.qr(rng.normal(size=(7, 4)))
        s = np.array([4.0, 3.0, 2.0, 1.0])
        dense = (u * s) @ v.T
        f = FactoredImage(u, s, v)
        assert np.allclose(f.to_dense(), dense, atol=1e-14)

    def test_zeros_and_rank(self):
        f = FactoredImage.zeros(20, 8)
        assert f.rank == 0
        assert f.shape == (20, 8)
        assert not f.to_dense().any()
        assert f.nuclear_norm() == 0.0
        assert f.frobenius_norm() == 0.0

    def test_from_dense_round_trip(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(15, 9))
        f = FactoredImage.from_dense(x, rank=9)
        assert np.allclose(f.to_dense(), x, atol=1e-12)

    def test_norms_match_dense(self):
        rng = np.random.default_rng(5)
        f = random_factored(rng)
        dense = f.to_dense()
        sigma = np.linalg.svd(dense, compute_uv=False)
        assert f.nuclear_norm() == pytest.approx(sigma.sum(), rel=1e-12)
        assert f.frobenius_norm() == pytest.approx(
            np.linalg.norm(dense), rel=1e-12
        )

    def test_inner_matches_dense(self):
        rng = np.random.default_rng(6)
        f1 = random_factored(rng)
        f2 = random_factored(rng)
        want = float(np.sum(f1.to_dense() * f2.to_dense()))
        assert f1.inner(f2) == pytest.approx(want, rel=1e-12)

    def test_column_values(self):
        rng = np.random.default_rng(7)
        f = random_factored(rng)
        dense = f.to_dense()
        for k in (0, 5, 11):
            assert np.allclose(f.column_values(k), dense[:, k], atol=1e-13)

    def test_matmat_rmatmat(self):
        rng = np.random.default_rng(8)
        f = random_factored(rng)
        dense = f.to_dense()
        w = rng.normal(size=(12, 4))
        assert np.allclose(f.matmat(w), dense @ w, atol=1e-12)
        z = rng.normal(size=(30, 4))
        assert np.allclose(f.rmatmat(z), dense.T @ z, atol=1e-12)

    def test_to_dense_guard(self):
        big = FactoredImage.zeros(DENSE_ELEMENT_LIMIT, 2)
        with pytest.raises(ValueError):
            big.to_dense()

    def test_grid_row_count_must_match(self):
        rng = np.random.default_rng(9)
        grid = VoxelGrid.centered((3, 3, 2), 1e-3)  # 18 voxels
        with pytest.raises(ValueError):
            random_factored(rng, n=30, grid=grid)


class TestFrameColumn:
    def test_rank0_gives_zero_frame(self):
        grid = VoxelGrid.centered((3, 3, 2), 1e-3)
        f = FactoredImage.zeros(18, 5, grid)
        assert not frame_column(f, 2).values.any()

    def test_rank1_column(self):
        grid = VoxelGrid.centered((4, 2, 2), 1e-3)
        rng = np.random.default_rng(10)
        u, _ = np.linalg.qr(rng.normal(size=(16, 1)))
        v, _ = np.linalg.qr(rng.normal(size=(6, 1)))
        f = FactoredImage(u, np.array([3.0]), v, grid)
        for k in range(6):
            want = 3.0 * f.v[k, 0] * f.u[:, 0]
            assert np.allclose(frame_column(f, k).values, want, atol=1e-14)

    def test_matches_dense_expansion(self):
        grid = VoxelGrid.centered((5, 3, 2), 1e-3)
        rng = np.random.default_rng(11)
        f = random_factored(rng, n=30, k=9, r=5, grid=grid)
        dense = f.to_dense()
        for k in range(9):
            got = frame_column(f, k).values
            assert np.abs(got - dense[:, k]).max() <= 1e-12

    def test_out_of_range(self):
        grid = VoxelGrid.centered((2, 2, 2), 1e-3)
        f = FactoredImage.zeros(8, 4, grid)
        with pytest.raises(ValueError):
            frame_column(f, 4)


class TestTruncatedSvd:
    def test_exact_recovery_of_low_rank_input(self):
        rng = np.random.default_rng(12)
        f = random_factored(rng, n=40, k=20, r=2)
        out = truncated_svd(f, 4, seed=1)
        assert out.rank <= 4
        s = np.zeros(4)
        s[: out.rank] = out.s
        assert np.all(s[2:] <= 1e-10)
        assert np.linalg.norm(out.to_dense() - f.to_dense()) <= (
            1e-10 * f.frobenius_norm()
        )

    def test_leading_values_of_random_dense(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(50, 30))
        ref = np.linalg.svd(x, compute_uv=False)
        out = truncated_svd(x, 10, oversample=10, power_iters=2, seed=2)
        assert np.allclose(out.s, ref[:10], rtol=1e-6)

    def test_flat_spectrum_projection_error(self):
        x = np.eye(12)
        out = truncated_svd(x, 5, seed=3)
        assert np.allclose(out.s, 1.0, rtol=1e-10)
        err = np.linalg.norm(x - out.to_dense()) ** 2
        assert err == pytest.approx(12 - 5, rel=1e-9)

    def test_r_max_clamped_with_warning(self):
        rng = np.random.default_rng(14)
        x = rng.normal(size=(10, 6))
        with pytest.warns(UserWarning):
            out = truncated_svd(x, 50, seed=4)
        assert out.rank <= 6

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(15)
        x = rng.normal(size=(25, 15))
        a = truncated_svd(x, 6, seed=77)
        b = truncated_svd(x, 6, seed=77)
        assert np.array_equal(a.u, b.u)
        assert np.array_equal(a.s, b.s)
        assert np.array_equal(a.v, b.v)


class TestSoftThreshold:
    def test_worked_example(self):
        out = soft_threshold(np.array([5.0, 2.0, 1.0]), 2.0)
        assert np.array_equal(out, [3.0, 0.0, 0.0])

    def test_zero_threshold_is_identity(self):
        s = np.array([4.0, 2.5, 0.1])
        assert np.array_equal(soft_threshold(s, 0.0), s)

    def test_full_attenuation(self):
        s = np.array([4.0, 2.5, 0.1])
        assert not soft_threshold(s, 4.0).any()

    def test_additivity(self):
        rng = np.random.default_rng(16)
        for _ in range(20):
            s = np.sort(rng.uniform(0, 5, size=8))[::-1]
            a, b = rng.uniform(0, 2, size=2)
            two_step = soft_threshold(soft_threshold(s, a), b)
            one_step = soft_threshold(s, a + b)
            assert np.allclose(two_step, one_step, atol=1e-15)

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            soft_threshold(np.array([1.0]), -0.5)


class TestProxNuclear:
    def test_zero_threshold_equals_truncated_svd(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(20, 10))
        a = prox_nuclear(x, 0.0, 5, seed=5)
        b = truncated_svd(x, 5, seed=5)
        assert np.allclose(a.to_dense(), b.to_dense(), atol=1e-12)

    def test_rank1_scalar_shrinkage(self):
        rng = np.random.default_rng(18)
        u, _ = np.linalg.qr(rng.normal(size=(15, 1)))
        v, _ = np.linalg.qr(rng.normal(size=(8, 1)))
        f = FactoredImage(u, np.array([3.0]), v)
        out = prox_nuclear(f, 1.0, 4, seed=6)
        assert out.rank == 1
        assert out.s[0] == pytest.approx(2.0, rel=1e-10)
        assert np.allclose(out.to_dense(), (2.0 / 3.0) * f.to_dense(),
                           atol=1e-10)

    def test_dense_shrinkage_oracle_200_matrices(self):
        rng = np.random.default_rng(19)
        for trial in range(200):
            n = int(rng.integers(4, 61))
            k = int(rng.integers(4, 41))
            x = rng.normal(size=(n, k))
            t = float(rng.uniform(0, 2.0))
            r_max = int(rng.integers(1, min(n, k) + 1))
            got = prox_nuclear(x, t, r_max, seed=trial)
            want = dense_prox_oracle(x, t, r_max)
            assert np.linalg.norm(got.to_dense() - want) <= 1e-8

    def test_rank_drops_when_threshold_eats_tail(self):
        rng = np.random.default_rng(20)
        u, _ = np.linalg.qr(rng.normal(size=(20, 3)))
        v, _ = np.linalg.qr(rng.normal(size=(10, 3)))
        f = FactoredImage(u, np.array([5.0, 1.0, 0.5]), v)
        out = prox_nuclear(f, 1.2, 3, seed=7)
        assert out.rank == 1
        assert out.s[0] == pytest.approx(3.8, rel=1e-9)

    def test_nonexpansiveness(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            x1 = rng.normal(size=(18, 12))
            x2 = x1 + 0.1 * rng.normal(size=(18, 12))
            t = 0.3
            p1 = prox_nuclear(x1, t, 12, seed=8).to_dense()
            p2 = prox_nuclear(x2, t, 12, seed=8).to_dense()
            lhs = np.linalg.norm(p1 - p2)
            rhs = np.linalg.norm(x1 - x2)
            assert lhs <= rhs + 1e-7


class TestAddScaled:
    def test_exact_linear_combination(self):
        rng = np.random.default_rng(22)
        f1 = random_factored(rng, r=4)
        f2 = random_factored(rng, r=3)
        out = add_scaled(1.7, f1, -0.6, f2)
        want = 1.7 * f1.to_dense() - 0.6 * f2.to_dense()
        assert np.linalg.norm(out.to_dense() - want) <= 1e-12 * max(
            np.linalg.norm(want), 1.0
        )

    def test_rank_bound_is_sum_of_ranks(self):
        rng = np.random.default_rng(23)
        f1 = random_factored(rng, r=4)
        f2 = random_factored(rng, r=4)
        out = add_scaled(1.0, f1, 1.0, f2)
        assert out.rank <= 8

    def test_extrapolation_of_identical_factors_keeps_rank(self):
        rng = np.random.default_rng(24)
        f = random_factored(rng, r=5)
        out = add_scaled(2.0, f, -1.0, f)
        assert out.rank == 5
        assert np.allclose(out.to_dense(), f.to_dense(), atol=1e-12)

    def test_cancellation_to_zero(self):
        rng = np.random.default_rng(25)
        f = random_factored(rng, r=3)
        out = add_scaled(1.0, f, -1.0, f)
        assert out.rank == 0

    def test_preserves_grid(self):
        grid = VoxelGrid.centered((5, 3, 2), 1e-3)
        rng = np.random.default_rng(26)
        f1 = random_factored(rng, n=30, grid=grid)
        f2 = random_factored(rng, n=30, grid=grid)
        assert add_scaled(1.0, f1, 2.0, f2).grid == grid


class TestLowRankUpdate:
    def test_matches_dense_algebra(self):
        rng = np.random.default_rng(27)
        base = random_factored(rng, n=25, k=10, r=4)
        upd = LowRankUpdate(base)
        dense = base.to_dense().copy()
        for _ in range(6):
            x = rng.normal(size=25)
            y = rng.normal(size=10)
            c = float(rng.normal())
            upd.add_term(x, y, c)
            dense += c * np.outer(x, y)
        w = rng.normal(size=(10, 3))
        assert np.allclose(upd.matmat(w), dense @ w, atol=1e-10)
        z = rng.normal(size=(25, 3))
        assert np.allclose(upd.rmatmat(z), dense.T @ z, atol=1e-10)
        assert np.allclose(upd.to_dense(), dense, atol=1e-12)

    def test_rank_bound_counts_terms(self):
        rng = np.random.default_rng(28)
        base = random_factored(rng, n=20, k=8, r=3)
        upd = LowRankUpdate(base)
        assert upd.rank_bound == 3
        for i in range(5):
            upd.add_term(rng.normal(size=20), rng.normal(size=8), 1.0)
        assert upd.rank_bound == 8

    def test_column_values(self):
        rng = np.random.default_rng(29)
        base = random_factored(rng, n=15, k=6, r=2)
        upd = LowRankUpdate(base, base_scale=0.5)
        upd.add_term(rng.normal(size=15), rng.normal(size=6), -2.0)
        dense = upd.to_dense()
        for k in range(6):
            assert np.allclose(upd.column_values(k), dense[:, k], atol=1e-12)

    def test_truncated_svd_of_update(self):
        rng = np.random.default_rng(30)
        base = random_factored(rng, n=30, k=12, r=3)
        upd = LowRankUpdate(base)
        for _ in range(4):
            upd.add_term(rng.normal(size=30), rng.normal(size=12), 0.3)
        dense = upd.to_dense()
        ref = np.linalg.svd(dense, compute_uv=False)
        out = truncated_svd(upd, 7, seed=9)
        assert np.allclose(out.s, ref[:7], rtol=1e-8, atol=1e-10)


class TestColumnDifferenceEnergy:
    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(31)
        f = random_factored(rng, n=20, k=9, r=4)
        dense = f.to_dense()
        want = float(np.sum(np.diff(dense, axis=1) ** 2))
        assert column_difference_energy(f) == pytest.approx(want, rel=1e-12)

    def test_static_image_has_zero_energy(self):
        rng = np.random.default_rng(32)
        u, _ = np.linalg.qr(rng.normal(size=(12, 1)))
        v = np.full((6, 1), 1 / np.sqrt(6))
        f = FactoredImage(u, np.array([2.0]), v)
        assert column_difference_energy(f) == pytest.approx(0.0, abs=1e-15)

    def test_single_frame_is_zero(self):
        rng = np.random.default_rng(33)
        f = random_factored(rng, n=10, k=1, r=1)
        assert column_difference_energy(f) == 0.0
