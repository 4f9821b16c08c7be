import numpy as np
import pytest

import oracles
from gradstyle.graphfilter import (
    ChebFilter,
    SparseLaplacian,
    apply_poly_filter,
    build_pyramid,
    estimate_lambda_max,
    exact_projector,
    export_triplets,
    jackson_cheb_coeffs,
    matting_laplacian,
)


def random_rgb(seed, h=8, w=8):
    return np.random.default_rng(seed).uniform(0.0, 1.0, (3, h, w))


class TestMattingLaplacian:
    def test_rows_sum_to_zero(self, rng):
        lap = matting_laplacian(random_rgb(0))
        assert np.max(np.abs(lap.mat.sum(axis=1))) <= 1e-8

    def test_constant_3x3_closed_form(self):
        lap = matting_laplacian(np.full((3, 3, 3), 0.5))
        expected = np.eye(9) - np.ones((9, 9)) / 9.0
        np.testing.assert_allclose(lap.mat.toarray(), expected, atol=1e-12)

    def test_matches_dense_window_oracle(self):
        img = random_rgb(7, 4, 4)
        lap = matting_laplacian(img, epsilon=1e-5)
        ref = oracles.matting_laplacian_dense(img, 1e-5)
        assert np.max(np.abs(lap.mat.toarray() - ref)) <= 1e-10

    @pytest.mark.parametrize("seed", range(5))
    def test_structural_invariants(self, seed):
        lap = matting_laplacian(random_rgb(seed))
        dense = lap.mat.toarray()
        assert np.max(np.abs(dense - dense.T)) <= 1e-10
        assert np.max(np.abs(dense.sum(axis=1))) <= 1e-8
        rng = np.random.default_rng(seed + 100)
        for _ in range(20):
            v = rng.standard_normal(lap.n)
            assert v @ dense @ v >= -1e-8 * (v @ v)
        nnz_per_row = np.diff(lap.mat.indptr)
        assert nnz_per_row.max() <= 25

    def test_too_small_rejected(self):
        with pytest.raises(ValueError, match="window"):
            matting_laplacian(np.full((3, 2, 5), 0.5))

    def test_out_of_range_pixels_rejected(self):
        with pytest.raises(ValueError, match="0, 1"):
            matting_laplacian(np.full((3, 4, 4), 1.5))


class TestLambdaMax:
    def test_two_node_path(self):
        lap = SparseLaplacian.from_matrix(np.array([[1.0, -1.0], [-1.0, 1.0]]),
                                          1, 2)
        assert lap.lambda_max == pytest.approx(2.0 * 1.01, rel=1e-3)

    def test_diagonal(self):
        lap = SparseLaplacian.from_matrix(np.diag([2.0, 1.0]), 1, 2)
        assert lap.lambda_max == pytest.approx(2.0 * 1.01, rel=1e-3)

    @pytest.mark.parametrize("seed", range(5))
    def test_within_two_percent_of_dense(self, seed):
        lap = matting_laplacian(random_rgb(seed))
        true = np.linalg.eigvalsh(lap.mat.toarray()).max()
        assert abs(lap.lambda_max - true) <= 0.02 * true

    def test_zero_matrix_degenerate(self):
        lap = SparseLaplacian.from_matrix(np.zeros((4, 4)), 2, 2)
        assert lap.lambda_max == 0.0
        assert lap.degenerate


class TestChebCoeffs:
    def test_full_passband_is_identity(self):
        f = jackson_cheb_coeffs(5, 2.0, 2.0)
        np.testing.assert_allclose(f.step_coeffs, [1, 0, 0, 0, 0, 0],
                                   atol=1e-12)
        np.testing.assert_allclose(f.coeffs, [1, 0, 0, 0, 0, 0], atol=1e-12)

    def test_half_band_analytic_values(self):
        f = jackson_cheb_coeffs(3, 1.0, 2.0)  # b = 0
        assert f.step_coeffs[0] == pytest.approx(0.5, abs=1e-14)
        assert f.step_coeffs[1] == pytest.approx(-2.0 / np.pi, abs=1e-14)

    def test_damping_starts_at_one(self):
        f = jackson_cheb_coeffs(5, 0.4, 2.0)
        assert f.damping[0] == pytest.approx(1.0, abs=1e-14)

    def test_order5_response_at_band_edges(self):
        f = jackson_cheb_coeffs(5, 0.2, 1.0)
        assert f.response(0.0) >= 0.8
        assert f.response(1.0) <= 0.2

    def test_jackson_bounds_on_grid(self):
        f = jackson_cheb_coeffs(5, 0.2, 1.0)
        grid = np.linspace(0.0, 1.0, 1000)
        r = f.response(grid)
        assert r.max() <= 1.1
        assert r.min() >= -0.1

    def test_invalid_threshold_rejected(self):
        with pytest.raises(ValueError):
            jackson_cheb_coeffs(5, 0.0, 1.0)
        with pytest.raises(ValueError):
            jackson_cheb_coeffs(5, 2.0, 1.0)
        with pytest.raises(ValueError):
            jackson_cheb_coeffs(0, 0.5, 1.0)


class TestApplyPolyFilter:
    def test_identity_filter_returns_input(self):
        lap = matting_laplacian(random_rgb(3))
        f = jackson_cheb_coeffs(5, lap.lambda_max, lap.lambda_max)
        x = np.random.default_rng(0).standard_normal(lap.n)
        np.testing.assert_array_equal(apply_poly_filter(lap, f, x), x)

    def test_constant_is_zero_eigenvector(self):
        lap = matting_laplacian(random_rgb(4))
        f = jackson_cheb_coeffs(5, 0.2 * lap.lambda_max, lap.lambda_max)
        x = np.full(lap.n, 0.7)
        expected = f.response(0.0) * x
        assert np.max(np.abs(apply_poly_filter(lap, f, x) - expected)) <= 1e-10

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_dense_spectral_oracle(self, seed):
        lap = matting_laplacian(random_rgb(seed))
        f = jackson_cheb_coeffs(5, 0.2 * lap.lambda_max, lap.lambda_max)
        x = np.random.default_rng(seed + 50).standard_normal(lap.n)
        x /= np.linalg.norm(x)
        ref = oracles.spectral_filter_dense(lap.mat.toarray(), f.response, x)
        assert np.max(np.abs(apply_poly_filter(lap, f, x) - ref)) <= 1e-8

    def test_linear_in_signal(self):
        lap = matting_laplacian(random_rgb(9))
        f = jackson_cheb_coeffs(5, 0.2 * lap.lambda_max, lap.lambda_max)
        rng = np.random.default_rng(1)
        x, y = rng.standard_normal((2, lap.n))
        lhs = apply_poly_filter(lap, f, 0.3 * x - 1.7 * y)
        rhs = 0.3 * apply_poly_filter(lap, f, x) - 1.7 * apply_poly_filter(lap, f, y)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12

    def test_exactly_order_matvecs_per_signal(self):
        lap = matting_laplacian(random_rgb(11))
        f = jackson_cheb_coeffs(5, 0.2 * lap.lambda_max, lap.lambda_max)
        before = lap.matvec_count
        apply_poly_filter(lap, f, np.ones(lap.n))
        assert lap.matvec_count - before == 5
        before = lap.matvec_count
        apply_poly_filter(lap, f, np.ones((lap.n, 7)))
        assert lap.matvec_count - before == 5 * 7

    def test_dimension_mismatch_rejected(self):
        lap = matting_laplacian(random_rgb(2))
        f = jackson_cheb_coeffs(5, 0.2 * lap.lambda_max, lap.lambda_max)
        with pytest.raises(ValueError, match="length"):
            apply_poly_filter(lap, f, np.ones(5))

    @pytest.mark.parametrize("seed", range(5))
    def test_order50_beats_order5_against_ideal_step(self, seed):
        lap = matting_laplacian(random_rgb(seed + 20))
        lams = np.linalg.eigvalsh(lap.mat.toarray())
        star = 0.2 * lap.lambda_max
        ideal = (lams <= star).astype(float)
        errs = {}
        for p in (5, 50):
            f = jackson_cheb_coeffs(p, star, lap.lambda_max)
            errs[p] = np.max(np.abs(f.response(lams) - ideal))
        assert errs[50] < errs[5]


class TestExactProjector:
    def test_eigenvector_pass_and_kill(self):
        lap = matting_laplacian(random_rgb(5))
        dense = lap.mat.toarray()
        lams, u = np.linalg.eigh((dense + dense.T) / 2)
        star = 0.2 * lap.lambda_max
        proj = exact_projector(lap, star)
        np.testing.assert_allclose(proj(u[:, 0]), u[:, 0], atol=1e-10)
        assert lams[-1] > star
        np.testing.assert_allclose(proj(u[:, -1]), 0.0, atol=1e-10)

    def test_idempotent(self):
        lap = matting_laplacian(random_rgb(6))
        proj = exact_projector(lap, 0.2 * lap.lambda_max)
        p = proj.matrix
        assert np.max(np.abs(p @ p - p)) <= 1e-10

    def test_full_band_is_identity_map(self):
        lap = matting_laplacian(random_rgb(8))
        proj = exact_projector(lap, lap.lambda_max * 2.0)
        assert proj.is_identity
        x = np.arange(float(lap.n))
        assert proj(x) is x
        np.testing.assert_array_equal(proj.matrix, np.eye(lap.n))

    def test_size_cap(self):
        lap = matting_laplacian(random_rgb(1))
        with pytest.raises(ValueError, match="limited to"):
            exact_projector(lap, 1.0, max_n=10)


class TestPyramid:
    def test_level_dimensions(self):
        pyr = build_pyramid(np.random.default_rng(0).uniform(0, 1, (3, 32, 32)))
        assert [lap.n for lap in pyr.laplacians] == [1024, 256, 64, 16]

    def test_constant_filters_as_zero_eigenvector(self):
        pyr = build_pyramid(np.full((3, 16, 16), 0.25))
        for lvl in range(4):
            side = 16 >> lvl
            sig = np.full((2, side, side), 1.3)
            out = pyr.filter_map(lvl, sig)
            r0 = pyr.filters[lvl].response(0.0) if pyr.filters[lvl] else 1.0
            assert np.max(np.abs(out - r0 * sig)) <= 1e-10

    def test_every_level_matches_dense_oracle(self):
        # the 1/8 level of a 16x16 image is 2x2: no 3x3 window fits, the
        # Laplacian is empty and the exact low-pass there is the identity
        content = np.random.default_rng(2).uniform(0, 1, (3, 16, 16))
        pyr = build_pyramid(content)
        rng = np.random.default_rng(3)
        for lvl in range(4):
            lap, f = pyr.laplacians[lvl], pyr.filters[lvl]
            x = rng.standard_normal(lap.n)
            x /= np.linalg.norm(x)
            ref = x if f is None else oracles.spectral_filter_dense(
                lap.mat.toarray(), f.response, x)
            side = 16 >> lvl
            out = pyr.filter_map(lvl, x.reshape(1, side, side)).reshape(-1)
            assert np.max(np.abs(out - ref)) <= 1e-8
        assert pyr.filters[3] is None and pyr.laplacians[3].degenerate

    def test_resolution_mismatch_rejected(self):
        pyr = build_pyramid(np.full((3, 16, 16), 0.5))
        with pytest.raises(ValueError, match="expects"):
            pyr.filter_map(0, np.zeros((1, 8, 8)))

    def test_non_multiple_of_8_rejected(self):
        with pytest.raises(ValueError, match="multiples of 8"):
            build_pyramid(np.full((3, 12, 12), 0.5))


def test_export_triplets_roundtrip(tmp_path):
    lap = matting_laplacian(random_rgb(0, 4, 4))
    path = tmp_path / "lap.txt"
    export_triplets(lap, path)
    rebuilt = np.zeros((lap.n, lap.n))
    for line in path.read_text().splitlines():
        i, j, v = line.split()
        rebuilt[int(i), int(j)] += float(v)
    np.testing.assert_array_equal(rebuilt, lap.mat.toarray())
