import math
from fractions import Fraction

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse
from hypothesis import given, settings
from hypothesis import strategies as st

from spinmarket.core import ModelParams
from spinmarket.kernel import macro_step_distribution
from spinmarket.spectral import (
    MeasureGrid,
    NumericalError,
    assemble_matrix,
    index_state,
    mixing_half_life,
    n_states,
    point_mass,
    propagate_measure,
    second_eigenvector,
    spectral_gap,
    spectral_summary,
    spectrum,
    state_index,
    stationary_measure,
    variation_distance,
    write_matrix_csv,
    write_measure_csv,
    write_spectrum_csv,
)


class TestIndexing:
    def test_corners(self):
        assert state_index(0, 0, 3) == 0
        assert state_index(3, 3, 3) == 15

    def test_inverse_example(self):
        assert index_state(6, 3) == (2, 1)

    @pytest.mark.parametrize("N", [2, 3, 5, 10])
    def test_round_trip(self, N):
        dim = n_states(N)
        assert dim == (N + 1) * (N * (N - 1) // 2 + 1)
        seen = set()
        for k in range(dim):
            s = index_state(k, N)
            assert state_index(*s, N) == k
            seen.add(s)
        assert len(seen) == dim

    def test_site_count_varies_fastest(self):
        assert state_index(1, 0, 10) == 1
        assert state_index(0, 1, 10) == 11

    @pytest.mark.parametrize("bad", [(4, 0), (0, 4), (-1, 0)])
    def test_out_of_range(self, bad):
        with pytest.raises(ValueError):
            state_index(*bad, 3)

    def test_index_out_of_range(self):
        with pytest.raises(ValueError):
            index_state(16, 3)


class TestAssembly:
    def test_rows_reproduce_kernel(self, params_10_3, matrix_10_3):
        for k in range(n_states(10)):
            i, j = index_state(k, 10)
            row = np.zeros(n_states(10))
            for (u, v), p in macro_step_distribution(i, j, params_10_3).entries:
                row[state_index(u, v, 10)] += p
            np.testing.assert_array_equal(matrix_10_3[k], row)

    @pytest.mark.parametrize("alpha", [0, 3, 18, 50])
    def test_stochastic(self, alpha):
        M = assemble_matrix(ModelParams(7, alpha))
        assert (M >= 0).all()
        assert np.abs(M.sum(axis=1) - 1).max() <= 1e-12

    def test_at_most_five_nonzeros(self, matrix_10_3):
        assert (np.count_nonzero(matrix_10_3, axis=1) <= 5).all()

    def test_trap_row(self, matrix_10_3):
        k = state_index(10, 45, 10)
        expected = np.zeros(n_states(10))
        expected[k] = 1.0
        np.testing.assert_array_equal(matrix_10_3[k], expected)

    def test_exact_path(self):
        M = assemble_matrix(ModelParams(3, 6), exact=True)
        assert all(isinstance(x, Fraction) for row in M for x in row)
        assert all(sum(row) == 1 for row in M)

    def test_sparse_matches_dense(self):
        params = ModelParams(6, 4)
        S = assemble_matrix(params, sparse=True)
        assert scipy.sparse.issparse(S)
        np.testing.assert_array_equal(S.toarray(), assemble_matrix(params))


class TestStationary:
    def test_small_instance_listing(self, matrix_3_6):
        mu = stationary_measure(matrix_3_6)
        assert mu.kind == "probability"
        assert mu.residual <= 1e-10
        assert mu.values.sum() == pytest.approx(1.0, abs=1e-12)
        power = np.linalg.matrix_power(matrix_3_6, 4096)[0]
        np.testing.assert_allclose(mu.values, power, atol=1e-12)

    def test_trap_concentration(self, matrix_10_3):
        mu = stationary_measure(matrix_10_3, N=10)
        assert mu.at(10, 45) >= 1 - 1e-8

    def test_permutation_equivariance(self):
        M = assemble_matrix(ModelParams(4, 20))
        perm = np.random.default_rng(0).permutation(M.shape[0])
        P = M[np.ix_(perm, perm)]
        mu = stationary_measure(M).values
        mu_p = stationary_measure(P).values
        np.testing.assert_allclose(mu_p, mu[perm], atol=1e-12)

    @pytest.mark.parametrize("N", [2, 5, 8, 12, 15])
    @pytest.mark.parametrize("alpha", [0, 3, 20, 50])
    def test_residual(self, N, alpha):
        mu = stationary_measure(assemble_matrix(ModelParams(N, alpha), sparse=True), check_multiplicity=False)
        assert mu.residual <= 1e-10
        assert mu.values.min() >= 0

    @pytest.mark.parametrize("alpha", [1, 3, 10, 17])
    def test_subcritical_trapping(self, alpha):
        mu = stationary_measure(assemble_matrix(ModelParams(10, alpha)), N=10, check_multiplicity=False)
        assert mu.at(10, 45) >= 1 - 1e-6

    def test_supercritical_broad(self):
        mu = stationary_measure(assemble_matrix(ModelParams(10, 18)), N=10, check_multiplicity=False)
        assert mu.values.max() <= 0.2

    def test_two_closed_classes_flagged(self):
        M = np.eye(n_states(2))
        mu = stationary_measure(M)
        assert mu.multiplicity_warning
        assert mu.values.sum() == pytest.approx(1.0)

    def test_non_stochastic_raises(self):
        M = np.full((6, 6), 0.3)
        with pytest.raises(NumericalError) as err:
            stationary_measure(M)
        assert err.value.residual > 1e-10

    def test_stochastic_random_matrix(self):
        # independent check against a dense eigen-decomposition
        rng = np.random.default_rng(1)
        M = rng.random((16, 16))
        M /= M.sum(axis=1, keepdims=True)
        w, v = scipy.linalg.eig(M.T)
        ref = np.real(v[:, np.argmin(np.abs(w - 1))])
        ref /= ref.sum()
        np.testing.assert_allclose(stationary_measure(M).values, ref, atol=1e-12)


class TestSpectrum:
    def test_leading_modulus(self, matrix_3_6):
        m = spectrum(matrix_3_6)
        assert m[0] == pytest.approx(1.0, abs=1e-10)
        assert (m <= 1 + 1e-10).all()
        assert (np.diff(m) <= 1e-15).all()

    def test_lambda2_reference(self, matrix_10_3):
        assert spectrum(matrix_10_3, 2)[1] == pytest.approx(0.9999986235, abs=1e-8)

    def test_linear_decay_of_moduli(self, matrix_10_3):
        m = spectrum(matrix_10_3)
        slope, intercept = np.polyfit(np.arange(1, m.size + 1), m, 1)
        assert slope == pytest.approx(-0.002, rel=0.2)
        assert intercept == pytest.approx(1.0466, rel=0.01)

    def test_gap_reference(self, matrix_10_3):
        assert spectral_gap(matrix_10_3) == pytest.approx(1.3765e-6, abs=1e-8)

    def test_gap_supercritical(self):
        assert spectral_gap(assemble_matrix(ModelParams(10, 18))) == pytest.approx(0.0058, abs=5e-4)

    def test_gap_identity(self):
        assert spectral_gap(np.eye(5)) == 0

    def test_count_bounds(self, matrix_3_6):
        with pytest.raises(ValueError):
            spectrum(matrix_3_6, 17)

    def test_krylov_matches_dense(self):
        M = assemble_matrix(ModelParams(17, 60), sparse=True)
        assert M.shape[0] > 2000
        got = spectrum(M, 3)
        # dense oracle on the leading block only
        ref = np.sort(np.abs(scipy.linalg.eigvals(M.toarray())))[::-1][:3]
        np.testing.assert_allclose(got, ref, rtol=1e-8)


class TestSecondEigenvector:
    def test_residual_and_norm(self, matrix_10_3):
        v = second_eigenvector(matrix_10_3, N=10)
        assert v.kind == "signed"
        assert np.abs(v.values).max() == pytest.approx(1.0)
        assert v.values[np.argmax(np.abs(v.values))] > 0
        assert v.residual <= 1e-8

    def test_peaks_at_trap_and_cycle(self, matrix_10_3):
        v = second_eigenvector(matrix_10_3, N=10)
        g = v.grid
        trap = g[10, 45]
        near_cycle = g[0:2, 21:25]
        cycle_peak = near_cycle.flat[np.argmax(np.abs(near_cycle))]
        assert abs(trap) == 1.0
        assert np.sign(cycle_peak) == -np.sign(trap)
        # the two regions hold the largest magnitudes on the grid
        mask = np.ones_like(g, dtype=bool)
        mask[10, 45] = False
        mask[0:2, 21:25] = False
        assert np.abs(g[mask]).max() < abs(cycle_peak)

    @pytest.mark.xfail(strict=True, reason="largest-|entry|-positive convention puts the trap peak positive")
    def test_cycle_positive_trap_negative(self, matrix_10_3):
        v = second_eigenvector(matrix_10_3, N=10)
        assert v.at(0, 22) > 0 and v.at(10, 45) < 0

    @pytest.mark.xfail(strict=True, reason="magnitudes fall below 1% of peak between (0,22) and (5,8)")
    def test_ridge_to_low_cycle(self, matrix_10_3):
        v = second_eigenvector(matrix_10_3, N=10)
        peak = np.abs(v.values).max()
        path = _staircase((0, 22), (5, 8))
        assert all(abs(v.at(*s)) >= 0.1 * peak for s in path)

    def test_multiplicity_flag(self):
        assert second_eigenvector(np.eye(n_states(2))).multiplicity_warning


def _staircase(a, b):
    """Monotone lattice path from ``a`` to ``b`` hugging the straight segment."""
    (i0, j0), (i1, j1) = a, b
    di, dj = np.sign(i1 - i0), np.sign(j1 - j0)
    path = [a]
    i, j = a
    while (i, j) != b:
        # step along whichever axis lags behind the segment
        if i != i1 and (j == j1 or abs(i - i0) * abs(j1 - j0) <= abs(j - j0) * abs(i1 - i0)):
            i += di
        else:
            j += dj
        path.append((int(i), int(j)))
    return path


class TestHalfLife:
    def test_examples(self):
        assert mixing_half_life(0.9942) == 120
        assert abs(mixing_half_life(0.9999986235) - 503_558) <= 2
        assert mixing_half_life(0.5) == 1

    def test_degenerate(self):
        assert mixing_half_life(1.0) == math.inf
        with pytest.raises(ValueError):
            mixing_half_life(0.0)

    @given(st.floats(1e-6, 1 - 1e-9))
    def test_halves_distance(self, lam):
        n = mixing_half_life(lam)
        assert lam**n <= 0.5 + 1e-12
        assert n == 1 or lam ** (n - 1) > 0.5 - 1e-12


class TestPropagation:
    def test_zero_steps(self, matrix_3_6):
        mu0 = point_mass((1, 2), 3)
        np.testing.assert_array_equal(propagate_measure(matrix_3_6, mu0, 0).values, mu0.values)

    def test_trap_fixed(self, matrix_10_3):
        mu0 = point_mass((10, 45), 10)
        for n in (1, 7, 1000):
            np.testing.assert_array_equal(propagate_measure(matrix_10_3, mu0, n).values, mu0.values)

    def test_converges_to_stationary(self, matrix_3_6):
        mu0 = MeasureGrid(np.full(16, 1 / 16), 3)
        mu = propagate_measure(matrix_3_6, mu0, 10_000)
        assert variation_distance(mu, stationary_measure(matrix_3_6)) <= 1e-6
        assert mu.values.sum() == pytest.approx(1.0, abs=1e-10)

    def test_dense_and_sparse_paths(self):
        params = ModelParams(5, 7)
        mu0 = point_mass((2, 3), 5)
        a = propagate_measure(assemble_matrix(params), mu0, 200)
        b = propagate_measure(assemble_matrix(params, sparse=True), mu0, 200)
        np.testing.assert_allclose(a.values, b.values, atol=1e-13)

    def test_dimension_mismatch(self, matrix_3_6):
        with pytest.raises(ValueError):
            propagate_measure(matrix_3_6, point_mass((1, 1), 2), 1)

    def test_expectation_decay_rate(self):
        M = assemble_matrix(ModelParams(5, 30))
        lam2 = spectrum(M, 2)[1]
        target = stationary_measure(M).values
        rng = np.random.default_rng(3)
        for _ in range(3):
            F = rng.standard_normal(M.shape[0])
            mu = point_mass(tuple(rng.integers(0, 5, size=1)) + (3,), 5).values
            errs = []
            for _n in range(400):
                errs.append(abs(mu @ F - target @ F))
                mu = mu @ M
            errs = np.array(errs)
            steps = np.arange(errs.size)
            keep = (errs > 1e-11) & (steps >= 20)
            slope = np.polyfit(steps[keep], np.log(errs[keep]), 1)[0]
            assert slope <= math.log(lam2) + 0.05


class TestDistance:
    def test_identity(self):
        mu = point_mass((1, 1), 3)
        assert variation_distance(mu, mu) == 0

    def test_distinct_points(self):
        assert variation_distance(point_mass((0, 0), 3), point_mass((1, 0), 3)) == 1

    @given(st.lists(st.floats(-5, 5), min_size=16, max_size=16), st.lists(st.floats(-5, 5), min_size=16, max_size=16))
    @settings(max_examples=30)
    def test_symmetric(self, a, b):
        assert variation_distance(a, b) == variation_distance(b, a)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            variation_distance(np.zeros(3), np.zeros(4))


class TestSummaryAndExport:
    def test_summary(self, matrix_3_6):
        s = spectral_summary(matrix_3_6)
        assert s.eigenvalue_moduli[0] == pytest.approx(1.0, abs=1e-10)
        assert s.gap == pytest.approx(1 - s.lambda2)
        assert s.gap >= 0
        assert s.second_vector is not None
        assert not s.notes

    def test_non_ergodic_note(self):
        s = spectral_summary(np.eye(n_states(2)), with_vector=False)
        assert s.notes

    def test_csv_files(self, tmp_path, matrix_3_6):
        write_matrix_csv(matrix_3_6, tmp_path / "m.csv")
        write_measure_csv(stationary_measure(matrix_3_6), tmp_path / "mu.csv")
        write_spectrum_csv(matrix_3_6, tmp_path / "s.csv")
        m = np.loadtxt(tmp_path / "m.csv", delimiter=",", skiprows=1)
        dense = np.zeros((16, 16))
        dense[m[:, 0].astype(int), m[:, 1].astype(int)] = m[:, 2]
        np.testing.assert_array_equal(dense, matrix_3_6)
        mu = np.loadtxt(tmp_path / "mu.csv", delimiter=",", skiprows=1)
        assert mu.shape == (16, 3)
        np.testing.assert_array_equal(mu[:, 2], stationary_measure(matrix_3_6).values)
        s = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)
        assert list(s[:, 0]) == list(range(1, 17))
        assert (np.diff(s[:, 1]) <= 1e-15).all()
