import itertools
import math

import numpy as np
import pytest

from sparsevr.sampling import (GeomParams, RngStream, check_geom_lemma,
                               draw_geometric, draw_geometric_many,
                               sample_batch)


class TestRngStream:
    def test_golden_integer_sequence(self):
        # Frozen draws pin cross-platform reproducibility of the Philox stream.
        s = RngStream(42, 1)
        assert [s.integers(0, 1000) for _ in range(8)] == \
            [870, 443, 171, 816, 568, 509, 94, 387]

    def test_golden_subset_sequence(self):
        s = RngStream(42, 1)
        assert s.subset(10, 4).tolist() == [0, 3, 4, 8]
        assert s.subset(10, 4).tolist() == [0, 1, 2, 5]

    def test_replay_is_bit_identical(self):
        s = RngStream(123, 9)
        first = [s.random() for _ in range(20)]
        r = s.replay()
        second = [r.random() for _ in range(20)]
        assert first == second

    def test_distinct_streams_differ(self):
        a = RngStream(5, 1)
        b = RngStream(5, 2)
        assert [a.integers(0, 10**9) for _ in range(4)] != \
            [b.integers(0, 10**9) for _ in range(4)]

    def test_subset_bounds(self):
        s = RngStream(0, 0)
        with pytest.raises(ValueError):
            s.subset(3, 4)
        assert s.subset(3, 0).size == 0
        assert s.subset(4, 4).tolist() == [0, 1, 2, 3]

    def test_subset_sorted_unique(self):
        s = RngStream(17, 3)
        for _ in range(200):
            sel = s.subset(23, 7)
            assert sel.size == 7
            assert np.all(np.diff(sel) > 0)

    def test_choose_draws_from_pool(self):
        s = RngStream(2, 2)
        pool = np.array([3, 11, 40, 41, 99])
        for _ in range(50):
            sel = s.choose(pool, 2)
            assert set(sel.tolist()) <= set(pool.tolist())
            assert np.all(np.diff(sel) > 0)


class TestSampleBatch:
    def test_full_batch_is_all_indices(self):
        assert sample_batch(5, 5, RngStream(1, 1)).tolist() == [0, 1, 2, 3, 4]

    def test_size_out_of_range(self):
        with pytest.raises(ValueError):
            sample_batch(2, 3, RngStream(1, 1))
        with pytest.raises(ValueError):
            sample_batch(2, 0, RngStream(1, 1))

    def test_two_choose_one_frequencies(self):
        rng = RngStream(101, 1)
        trials = 100_000
        hits = sum(int(sample_batch(2, 1, rng)[0]) for _ in range(trials))
        assert abs(hits / trials - 0.5) < 0.01

    def test_four_choose_two_pair_frequencies(self):
        rng = RngStream(55, 1)
        trials = 100_000
        counts = {}
        for _ in range(trials):
            key = tuple(sample_batch(4, 2, rng).tolist())
            counts[key] = counts.get(key, 0) + 1
        assert len(counts) == 6
        for pair in itertools.combinations(range(4), 2):
            assert abs(counts[pair] / trials - 1 / 6) < 0.01

    def test_five_choose_two_uniform_within_3_sigma(self):
        rng = RngStream(77, 1)
        trials = 1_000_000
        counts = {}
        for _ in range(trials):
            key = tuple(sample_batch(5, 2, rng).tolist())
            counts[key] = counts.get(key, 0) + 1
        p = 1 / 10
        sigma = math.sqrt(p * (1 - p) / trials)
        assert len(counts) == 10
        for pair in itertools.combinations(range(5), 2):
            assert abs(counts[pair] / trials - p) <= 3.5 * sigma


class TestGeometric:
    def test_gamma_from_mean(self):
        assert GeomParams(1.0).gamma == 0.5
        assert GeomParams(10.0).gamma == pytest.approx(10 / 11)

    def test_rejects_nonpositive_mean(self):
        with pytest.raises(ValueError):
            GeomParams(0.0)

    def test_sample_mean_near_m(self):
        draws = draw_geometric_many(GeomParams(10.0), RngStream(3, 2), 1_000_000)
        assert 9.9 <= float(draws.mean()) <= 10.1

    def test_mass_at_zero(self):
        draws = draw_geometric_many(GeomParams(10.0), RngStream(4, 2), 1_000_000)
        p0 = float(np.mean(draws == 0))
        assert abs(p0 - 1 / 11) < 0.003

    def test_scalar_matches_vectorized(self):
        p = GeomParams(7.0)
        scalar = [draw_geometric(p, RngStream(9, 2)) for _ in range(1)][0]
        vector = int(draw_geometric_many(p, RngStream(9, 2), 1)[0])
        assert scalar == vector

    def test_chi_square_goodness_of_fit(self):
        # First 20 support points plus the tail bucket; critical value is
        # the 0.999 quantile of chi-square with 20 degrees of freedom.
        m = 6.0
        p = GeomParams(m)
        n = 1_000_000
        draws = draw_geometric_many(p, RngStream(8, 2), n)
        gamma = p.gamma
        probs = [(gamma ** k) * (1 - gamma) for k in range(20)]
        tail = 1.0 - sum(probs)
        observed = [int(np.sum(draws == k)) for k in range(20)]
        observed.append(n - sum(observed))
        expected = [n * q for q in probs] + [n * tail]
        stat = sum((o - e) ** 2 / e for o, e in zip(observed, expected))
        chi2_20_999 = 45.315
        assert stat < chi2_20_999


class TestGeomLemma:
    def test_linear_sequence(self):
        # D_t = t: E D_N = m forces both sides to -1.
        lhs, rhs = check_geom_lemma(5.0, lambda t: t.astype(float),
                                    1_000_000, RngStream(21, 5))
        assert abs(lhs + 1.0) < 0.02
        assert abs(rhs + 1.0) < 0.02

    def test_constant_sequence_exact(self):
        lhs, rhs = check_geom_lemma(4.0, lambda t: np.full(t.shape, 3.25),
                                    10_000, RngStream(22, 5))
        assert lhs == 0.0
        assert rhs == 0.0

    def test_quadratic_sequence_against_analytic(self):
        # E N^2 = 2m^2 + m makes both sides -(2m+1).
        m = 3.0
        lhs, rhs = check_geom_lemma(m, lambda t: t.astype(float) ** 2,
                                    1_000_000, RngStream(23, 5))
        analytic = -(2 * m + 1)
        assert abs(lhs - analytic) <= 0.05 * abs(analytic)
        assert abs(rhs - analytic) <= 0.05 * abs(analytic)
        assert abs(lhs - rhs) <= 0.05 * abs(analytic)
