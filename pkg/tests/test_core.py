import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit
from scipy.stats import chisquare, hypergeom

from spinmarket.core import (
    MacroState,
    MicroConfig,
    ModelParams,
    TiePolicy,
    arc_index,
    arc_pairs,
    arc_potential,
    format_config,
    global_imbalance,
    heat_bath_update,
    macro_counts,
    parse_config,
    random_config,
    run_micro,
    sample_arc_neighborhood,
    sample_site_neighborhood,
    site_potential,
    spin_up_probability,
)
from spinmarket.kernel import is_trapping


def within_3sigma(count, n, p):
    sd = math.sqrt(n * p * (1 - p))
    return abs(count - n * p) <= 3 * sd + 1e-9


def hand_fixture():
    # N=5 hand-built configuration: sites 0, 2, 3 positive; arcs (0,1), (0,2), (2,4), (3,4) positive
    sites = np.array([1, -1, 1, 1, -1])
    arcs = -np.ones(10, dtype=int)
    for pair in [(0, 1), (0, 2), (2, 4), (3, 4)]:
        arcs[arc_index(*pair, 5)] = 1
    return MicroConfig(sites, arcs)


class TestParams:
    def test_counts(self):
        p = ModelParams(10, 3)
        assert p.n_arcs == 45
        assert p.n_elements == 55
        assert p.frozen

    @pytest.mark.parametrize("kw", [dict(N=1, alpha=1), dict(N=3, alpha=-1), dict(N=3, alpha=1, beta=0)])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            ModelParams(**kw)

    def test_tie_policy_values(self):
        assert TiePolicy("paper-kernel") is TiePolicy.PAPER_KERNEL
        assert TiePolicy("heat-bath-half") is TiePolicy.HEAT_BATH_HALF


class TestConfig:
    def test_arc_index_lexicographic(self):
        assert arc_pairs(4) == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
        assert [arc_index(x, y, 4) for x, y in arc_pairs(4)] == list(range(6))

    def test_arc_lookup_symmetric(self):
        cfg = random_config(6, (3, 7), np.random.default_rng(1))
        for x in range(6):
            for y in range(6):
                if x != y:
                    assert cfg.arc_spin(x, y) == cfg.arc_spin(y, x)

    def test_bad_spins(self):
        with pytest.raises(ValueError):
            MicroConfig(np.array([1, 0, 1]), np.array([1, 1, 1]))
        with pytest.raises(ValueError):
            MicroConfig(np.array([1, 1, 1]), np.array([1, 1]))

    def test_round_trip(self):
        cfg = random_config(5, (2, 4), np.random.default_rng(3))
        text = format_config(cfg)
        assert len(text.strip().splitlines()) == 2
        assert parse_config(text) == cfg

    def test_parse_errors(self):
        with pytest.raises(ValueError):
            parse_config("1 1 1\n")
        with pytest.raises(ValueError):
            parse_config("1 1 1\n1 1\n")


class TestMacroCounts:
    def test_all_minus(self):
        assert macro_counts(MicroConfig.uniform(4, -1)) == (0, 0)

    def test_all_plus(self):
        assert macro_counts(MicroConfig.uniform(4, 1)) == (4, 6)

    def test_hand_fixture(self):
        assert macro_counts(hand_fixture()) == MacroState(3, 4)

    @given(st.integers(2, 8), st.data())
    @settings(max_examples=40, deadline=None)
    def test_random_config_hits_state(self, N, data):
        i = data.draw(st.integers(0, N))
        j = data.draw(st.integers(0, N * (N - 1) // 2))
        cfg = random_config(N, (i, j), np.random.default_rng(data.draw(st.integers(0, 2**32 - 1))))
        assert macro_counts(cfg) == (i, j)


class TestImbalance:
    @pytest.mark.parametrize("state,expected", [((0, 0), 0.5), ((3, 3), 0.5), ((1, 2), 0.0)])
    def test_examples(self, state, expected):
        assert global_imbalance(state, 3) == expected

    @given(st.integers(2, 30), st.data())
    def test_range_and_zero_set(self, N, data):
        i = data.draw(st.integers(0, N))
        j = data.draw(st.integers(0, N * (N - 1) // 2))
        G = global_imbalance((i, j), N)
        assert 0 <= G <= 0.5
        assert (G == 0) == (4 * (i + j) == N * (N + 1))


class TestNeighborhoods:
    def test_site_empty_urn(self):
        cfg = random_config(5, (3, 0), np.random.default_rng(0))
        rng = np.random.default_rng(1)
        assert all(sample_site_neighborhood(cfg, 2, rng).size == 0 for _ in range(200))

    def test_site_full_urn(self):
        cfg = random_config(5, (3, 10), np.random.default_rng(0))
        rng = np.random.default_rng(1)
        for _ in range(200):
            assert list(sample_site_neighborhood(cfg, 2, rng)) == [0, 1, 3, 4]

    def test_site_cardinality_hypergeometric(self):
        cfg = random_config(4, (2, 3), np.random.default_rng(0))
        rng = np.random.default_rng(5)
        n = 100_000
        sizes = Counter(sample_site_neighborhood(cfg, 0, rng).size for _ in range(n))
        pmf = hypergeom(6, 3, 3).pmf
        for k in range(4):
            assert within_3sigma(sizes[k], n, pmf(k)), (k, sizes[k])

    def test_site_cardinality_chi_square(self):
        N, j = 6, 7
        cfg = random_config(N, (3, j), np.random.default_rng(0))
        rng = np.random.default_rng(9)
        n = 20_000
        sizes = Counter(sample_site_neighborhood(cfg, 1, rng).size for _ in range(n))
        pmf = hypergeom(15, j, N - 1).pmf(np.arange(N))
        keep = pmf > 0
        obs = np.array([sizes[k] for k in range(N)])[keep]
        assert chisquare(obs, n * pmf[keep] / pmf[keep].sum()).pvalue > 1e-3

    def test_site_members_exchangeable(self):
        N = 6
        cfg = random_config(N, (3, 7), np.random.default_rng(0))
        rng = np.random.default_rng(11)
        hits = Counter()
        by_size = Counter()
        n = 30_000
        for _ in range(n):
            nb = sample_site_neighborhood(cfg, 2, rng)
            by_size[nb.size] += 1
            hits.update((nb.size, int(y)) for y in nb)
        for size, count in by_size.items():
            if size in (0, N - 1) or count < 500:
                continue
            p = size / (N - 1)
            for y in [0, 1, 3, 4, 5]:
                assert within_3sigma(hits[(size, y)], count, p)

    def test_arc_no_positive_sites(self):
        cfg = random_config(5, (0, 4), np.random.default_rng(0))
        rng = np.random.default_rng(1)
        assert all(sample_arc_neighborhood(cfg, (1, 3), rng).size == 0 for _ in range(200))

    def test_arc_all_positive_sites(self):
        cfg = random_config(5, (5, 4), np.random.default_rng(0))
        rng = np.random.default_rng(1)
        for _ in range(100):
            nb = sample_arc_neighborhood(cfg, (1, 3), rng)
            assert nb.size == 2 * 5 - 4
            assert arc_index(1, 3, 5) not in set(nb.tolist())

    def test_arc_case_frequencies(self):
        cfg = random_config(4, (2, 3), np.random.default_rng(0))
        rng = np.random.default_rng(2)
        n = 100_000
        sizes = Counter(sample_arc_neighborhood(cfg, (0, 1), rng).size for _ in range(n))
        assert set(sizes) <= {0, 2, 4}
        for size, p in [(0, 1 / 6), (2, 2 / 3), (4, 1 / 6)]:
            assert within_3sigma(sizes[size], n, p), (size, sizes[size])


class TestPotentials:
    def test_empty_zero_alpha(self):
        cfg = MicroConfig.uniform(3, 1)
        assert site_potential(cfg, 0, [], 0.0) == 0
        assert arc_potential(cfg, (0, 1), [], 0.0) == 0

    def test_all_plus_neighbors(self):
        cfg = MicroConfig.uniform(5, 1)
        assert site_potential(cfg, 0, [1, 2, 3], 0.0) == 3

    def test_site_example(self):
        cfg = MicroConfig.uniform(3, 1)
        assert site_potential(cfg, 0, [1, 2], 6, state=(3, 3)) == pytest.approx(-1.0, abs=1e-15)

    def test_arc_lonely_negative_flips(self):
        cfg = random_config(4, (1, 1), np.random.default_rng(0))
        neg = next(a for a in arc_pairs(4) if cfg.arc_spin(*a) == -1)
        G = global_imbalance((1, 1), 4)
        assert G > 0
        assert arc_potential(cfg, neg, [], 2.5) == pytest.approx(2.5 * G)

    def test_arc_example_balanced(self):
        cfg = random_config(4, (2, 3), np.random.default_rng(0))
        neg = [arc_index(*a, 4) for a in arc_pairs(4) if cfg.arc_spin(*a) == -1]
        pos = [arc_index(*a, 4) for a in arc_pairs(4) if cfg.arc_spin(*a) == 1]
        assert arc_potential(cfg, neg[0], [pos[0], neg[1]], 4) == 0


class TestHeatBath:
    def test_frozen_sign_rule(self):
        p = ModelParams(4, 1)
        assert spin_up_probability(0.3, p) == 1.0
        assert spin_up_probability(-0.3, p) == 0.0

    def test_frozen_ties(self):
        p = ModelParams(4, 1)
        assert spin_up_probability(0, p, spin=1) == 0.0
        assert spin_up_probability(0, p, spin=-1) == 1.0
        half = ModelParams(4, 1, tie_policy=TiePolicy.HEAT_BATH_HALF)
        assert spin_up_probability(0, half, spin=1) == 0.5

    @given(st.floats(-50, 50), st.floats(0.01, 20))
    def test_logistic_formula(self, h, beta):
        p = ModelParams(4, 1, beta=beta)
        assert spin_up_probability(h, p) == pytest.approx(expit(2 * beta * h), rel=1e-12, abs=1e-300)

    @pytest.mark.parametrize("alpha,beta", [(0.0, 1.0), (3.0, 1.0), (6.0, 0.5), (9.0, 2.0)])
    def test_acceptance_matches_logistic(self, alpha, beta):
        # N=2 with one negative arc: site 0 (+1) sees no neighbours, so its
        # potential is -alpha*G with G = 1/6 at state (1, 0)
        params = ModelParams(2, alpha, beta=beta)
        start = MicroConfig(np.array([1, -1]), np.array([-1]))
        h = -alpha / 6
        rng = np.random.default_rng(int(alpha * 10 + beta))
        n = 60_000
        down = sum(heat_bath_update(start, params, rng).site_spins[0] == -1 for _ in range(n))
        assert within_3sigma(down, n, (1 - expit(2 * beta * h)) / 3)

    def test_finite_beta_zero_potential_half(self):
        # the single arc of N=2 never has neighbours; alpha=0 makes its potential 0
        params = ModelParams(2, 0.0, beta=1.0)
        start = MicroConfig(np.array([1, -1]), np.array([-1]))
        rng = np.random.default_rng(4)
        n = 100_000
        up = sum(heat_bath_update(start, params, rng).arc_spins[0] == 1 for _ in range(n))
        assert within_3sigma(up, n, 0.5 / 3)

    def test_update_does_not_mutate(self):
        cfg = random_config(4, (2, 3), np.random.default_rng(0))
        before = cfg.copy()
        heat_bath_update(cfg, ModelParams(4, 3), np.random.default_rng(1))
        assert cfg == before


class TestRunMicro:
    def test_zero_steps(self):
        path = run_micro(MicroConfig.uniform(3), ModelParams(3, 1), 0, np.random.default_rng(0))
        assert path.shape == (0, 2)

    def test_trapping_start(self):
        params = ModelParams(10, 3)
        assert is_trapping(10, 45, params)
        path = run_micro(MicroConfig.uniform(10, 1), params, 2000, np.random.default_rng(0))
        assert (path == [10, 45]).all()

    def test_deterministic(self):
        params = ModelParams(5, 2)
        cfg = random_config(5, (2, 4), np.random.default_rng(0))
        a = run_micro(cfg, params, 500, np.random.default_rng(42))
        b = run_micro(cfg, params, 500, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_nearest_neighbour_moves(self):
        params = ModelParams(5, 2)
        cfg = random_config(5, (2, 4), np.random.default_rng(0))
        path = np.vstack([[2, 4], run_micro(cfg, params, 2000, np.random.default_rng(1))])
        assert (np.abs(np.diff(path, axis=0)).sum(axis=1) <= 1).all()
        assert (path[:, 0] >= 0).all() and (path[:, 0] <= 5).all()
        assert (path[:, 1] >= 0).all() and (path[:, 1] <= 10).all()
