"""Scoring-rule and metric tests against brute-force oracles."""

import itertools
import math

import numpy as np
import pytest

from bdbridge.rng import RngState
from bdbridge.samplers import binomial_sample
from bdbridge.scoring import (
    MetricReport,
    ScoreConfig,
    aggregate_energy_score,
    energy_distance,
    energy_score_estimate,
    mmd_rbf,
    wasserstein2,
)


def brute_energy_distance(a, b, beta=1.0):
    """O(n^2) double loops, no vectorization."""
    def mean_rho(x, y):
        tot = 0.0
        for xi in x:
            for yj in y:
                tot += np.linalg.norm(np.asarray(xi, float) - np.asarray(yj, float)) ** beta
        return tot / (len(x) * len(y))

    return 2 * mean_rho(a, b) - mean_rho(a, a) - mean_rho(b, b)


def brute_mmd(a, b, h):
    def mean_k(x, y):
        tot = 0.0
        for xi in x:
            for yj in y:
                tot += math.exp(-np.sum((np.asarray(xi, float) - np.asarray(yj, float)) ** 2) / (2 * h * h))
        return tot / (len(x) * len(y))

    return mean_k(a, a) + mean_k(b, b) - 2 * mean_k(a, b)


def brute_w2(a, b):
    """Exhaustive search over all assignments."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    n = a.shape[0]
    best = np.inf
    for perm in itertools.permutations(range(n)):
        cost = sum(np.sum((a[i] - b[perm[i]]) ** 2) for i in range(n))
        best = min(best, cost)
    return math.sqrt(best / n)


class TestEnergyScore:
    def test_perfect_samples_score_zero(self):
        cfg = ScoreConfig(beta=1.0, m=3)
        target = np.array([2.0, 5.0])
        assert energy_score_estimate(cfg, np.tile(target, (3, 1)), target) == 0.0

    def test_point_mass_penalty(self):
        cfg = ScoreConfig(beta=1.0, m=2)
        assert energy_score_estimate(cfg, np.array([[0.0], [0.0]]), np.array([3.0])) == -3.0

    def test_m_validation(self):
        with pytest.raises(ValueError):
            ScoreConfig(beta=1.0, m=1)
        with pytest.raises(ValueError):
            ScoreConfig(beta=2.5, m=2)

    def test_propriety_binomial_vs_point_mass(self):
        # exact expected scores by enumeration over the Bin(3, 1/2) support
        pmf = np.array([1, 3, 3, 1]) / 8.0
        support = np.arange(4.0)
        e_pair = sum(
            pmf[i] * pmf[j] * abs(support[i] - support[j]) for i in range(4) for j in range(4)
        )
        s_true_exact = -0.5 * e_pair
        s_point_exact = -sum(pmf[i] * abs(1.0 - support[i]) for i in range(4))
        assert s_true_exact > s_point_exact

        cfg = ScoreConfig(beta=1.0, m=2)
        rng = RngState(21)
        n = 100_000
        ys = binomial_sample(rng, 3, 0.5, size=n)
        true_samples = binomial_sample(rng, 3, 0.5, size=2 * n).reshape(n, 2)
        s_true = np.empty(n)
        s_point = np.empty(n)
        for i in range(n):
            y = np.array([float(ys[i])])
            s_true[i] = energy_score_estimate(cfg, true_samples[i, :, None].astype(float), y)
            s_point[i] = energy_score_estimate(cfg, np.ones((2, 1)), y)
        se = math.sqrt(s_true.var() / n + s_point.var() / n)
        assert abs(s_true.mean() - s_true_exact) < 3 * math.sqrt(s_true.var() / n)
        assert s_true.mean() - s_point.mean() > 3 * se

    def test_aggregate_degenerate_match(self):
        cfg = ScoreConfig(beta=1.0, m=2)
        groups = np.array([[[1.0, 1.0], [2.0, 0.0]], [[2.0, 1.0], [1.0, 0.0]]])  # both sum to (3,1)
        assert aggregate_energy_score(cfg, lambda g: g.sum(axis=0), groups, np.array([3.0, 1.0])) == 0.0

    def test_aggregate_identity_reduces_to_units(self):
        cfg = ScoreConfig(beta=1.0, m=2)
        units = np.array([[[1.0, 4.0]], [[3.0, 0.0]]])  # G=1
        target = np.array([2.0, 2.0])
        lifted = aggregate_energy_score(cfg, lambda g: g.sum(axis=0), units, target)
        flat = energy_score_estimate(cfg, units[:, 0, :], target)
        assert lifted == flat

    def test_sum_aggregate_zero_on_match(self):
        cfg = ScoreConfig(beta=1.0, m=2)
        groups = np.array([[[1.0], [1.0]], [[2.0], [0.0]]])  # sums 2 and 2
        assert aggregate_energy_score(cfg, lambda g: g.sum(axis=0), groups, np.array([2.0])) == 0.0


class TestEnergyDistance:
    def test_identical_sets_zero(self):
        a = np.array([[0.0, 1.0], [2.0, 2.0], [5.0, -1.0]])
        assert abs(energy_distance(a, a.copy())) < 1e-12

    def test_point_mass_closed_form(self):
        a = np.zeros((10, 1))
        b = np.full((10, 1), 7.0)
        assert abs(energy_distance(a, b) - 14.0) < 1e-12

    def test_matches_brute_force(self):
        gen = np.random.default_rng(3)
        a = gen.normal(size=(9, 2))
        b = gen.normal(size=(7, 2)) + 1.0
        assert abs(energy_distance(a, b) - brute_energy_distance(a, b)) < 1e-10
        assert abs(energy_distance(a, b, beta=1.5) - brute_energy_distance(a, b, beta=1.5)) < 1e-10

    def test_symmetry_and_nonnegativity(self):
        gen = np.random.default_rng(4)
        a = gen.normal(size=(20, 3))
        b = gen.normal(size=(15, 3))
        assert energy_distance(a, b) == pytest.approx(energy_distance(b, a), abs=1e-12)
        assert energy_distance(a, b) >= -1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            energy_distance(np.zeros((0, 2)), np.zeros((3, 2)))


class TestMmd:
    def test_identical_sets_zero(self):
        a = np.array([[0.0], [1.0], [4.0]])
        assert abs(mmd_rbf(a, a.copy())) < 1e-12

    def test_kernel_saturation(self):
        assert abs(mmd_rbf(np.array([[0.0]]), np.array([[1000.0]]), bandwidth=1.0) - 2.0) < 1e-12

    def test_matches_brute_force(self):
        gen = np.random.default_rng(5)
        a = gen.normal(size=(5, 2))
        b = gen.normal(size=(5, 2)) + 0.5
        assert abs(mmd_rbf(a, b, bandwidth=1.3) - brute_mmd(a, b, 1.3)) < 1e-10

    def test_symmetry(self):
        gen = np.random.default_rng(6)
        a = gen.normal(size=(12, 2))
        b = gen.normal(size=(9, 2))
        assert mmd_rbf(a, b) == pytest.approx(mmd_rbf(b, a), abs=1e-12)

    def test_bad_bandwidth(self):
        with pytest.raises(ValueError):
            mmd_rbf(np.zeros((2, 1)), np.ones((2, 1)), bandwidth=0.0)


class TestW2:
    def test_identity(self):
        a = np.array([[0.0, 0.0], [1.0, 2.0]])
        assert wasserstein2(a, a.copy()) == 0.0

    def test_permutation_invariance_and_translation(self):
        assert wasserstein2(np.array([[0.0], [1.0]]), np.array([[1.0], [0.0]])) == 0.0
        assert wasserstein2(np.array([[0.0], [0.0]]), np.array([[3.0], [3.0]])) == 3.0

    def test_matches_exhaustive_assignment(self):
        gen = np.random.default_rng(7)
        a = gen.normal(size=(16, 2))
        b = gen.normal(size=(16, 2))
        got = wasserstein2(a[:8], b[:8])
        assert abs(got - brute_w2(a[:8], b[:8])) < 1e-9

    def test_symmetry(self):
        gen = np.random.default_rng(8)
        a = gen.normal(size=(30, 2))
        b = gen.normal(size=(30, 2))
        assert wasserstein2(a, b) == pytest.approx(wasserstein2(b, a), abs=1e-12)

    def test_subsampling_cap(self):
        gen = np.random.default_rng(9)
        a = gen.normal(size=(300, 2))
        b = gen.normal(size=(500, 2))
        v = wasserstein2(a, b, max_points=64, rng=RngState(1))
        assert np.isfinite(v) and v >= 0


class TestEstimatorConsistency:
    def test_energy_distance_mc_rate(self):
        # s.d. of the estimate should scale ~n^(-1/2): log-log slope near -0.5
        gen = np.random.default_rng(10)
        sizes = [64, 128, 256, 512]
        sds = []
        for n in sizes:
            vals = [
                energy_distance(gen.normal(size=(n, 1)), gen.normal(size=(n, 1)) + 0.3)
                for _ in range(120)
            ]
            sds.append(np.std(vals))
        slope = np.polyfit(np.log(sizes), np.log(sds), 1)[0]
        assert -0.65 < slope < -0.35


class TestMetricReport:
    def test_flat_dict(self):
        rep = MetricReport(0.1, 0.2, 0.3, 100, 7)
        d = rep.to_dict()
        assert set(d) == {"energy_distance", "mmd_rbf", "w2", "n_eval", "seed"}
