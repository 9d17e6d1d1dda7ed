"""Energy-score objective and evaluation metrics (energy distance, MMD, W2).

The scoring rule is S(p, y) = 1/2 E rho(X, X') - E rho(X, y) with
rho(x, x') = ||x - x'||_2^beta, strictly proper for beta in (0, 2); the
training loss elsewhere in the package is its negation.  The evaluation
metrics are plain (all-pairs) V-statistics so that identical sample sets
score exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .rng import RngState


@dataclass(frozen=True)
class ScoreConfig:
    """Exponent of the distance kernel and sample count of the estimator."""

    beta: float = 1.0
    m: int = 2

    def __post_init__(self):
        if not 0 < self.beta < 2:
            raise ValueError("beta must lie in (0, 2) for strict propriety")
        if self.m < 2:
            raise ValueError("m must be >= 2 (the pairwise term needs two samples)")


@dataclass
class MetricReport:
    """Evaluation summary serialized as a flat JSON object by the CLI."""

    energy_distance: float
    mmd_rbf: float
    w2: float
    n_eval: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "energy_distance": self.energy_distance,
            "mmd_rbf": self.mmd_rbf,
            "w2": self.w2,
            "n_eval": self.n_eval,
            "seed": self.seed,
        }


def _rho(x: np.ndarray, y: np.ndarray, beta: float) -> np.ndarray:
    """||x - y||_2^beta along the last axis."""
    d = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), axis=-1)
    return d**beta


def energy_score_estimate(config: ScoreConfig, samples, target) -> float:
    """Plug-in energy score of m samples against one observed target.

    (1/(m(m-1))) sum_{j != j'} rho(x_j, x_j')/2 - (1/m) sum_j rho(x_j, y).
    Larger is better; perfect point predictions of the target score 0.
    """
    s = np.asarray(samples, dtype=float)
    y = np.asarray(target, dtype=float)
    if s.ndim != 2 or s.shape[0] != config.m:
        raise ValueError(f"expected {config.m} sample rows, got shape {s.shape}")
    if s.shape[1] != y.shape[-1]:
        raise ValueError("sample and target dimensions differ")
    m = config.m
    pair = _rho(s[:, None, :], s[None, :, :], config.beta)
    spread = pair.sum() / (m * (m - 1))  # diagonal is zero
    fit = _rho(s, y[None, :], config.beta).mean()
    return float(0.5 * spread - fit)


def aggregate_energy_score(config: ScoreConfig, aggregate_map: Callable, sample_groups,
                           target_aggregate) -> float:
    """Energy score lifted through a linear aggregate map.

    ``sample_groups`` holds m generated groups of unit vectors (m, G, d);
    each is aggregated by ``aggregate_map`` and scored against the observed
    aggregate with the same plug-in estimator.
    """
    groups = np.asarray(sample_groups, dtype=float)
    if groups.ndim != 3 or groups.shape[0] != config.m:
        raise ValueError(f"expected (m={config.m}, G, d) sample groups, got {groups.shape}")
    agg = np.stack([np.asarray(aggregate_map(g), dtype=float) for g in groups])
    return energy_score_estimate(config, agg, target_aggregate)


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances via the Gram identity, clipped at zero."""
    sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(sq, 0.0)


def _block_mean_rho(a: np.ndarray, b: np.ndarray, beta: float, same_set: bool = False,
                    block: int = 4096) -> float:
    """Mean of rho over the full a x b grid, accumulated in row blocks.

    ``same_set`` zeroes the diagonal exactly: the Gram identity otherwise
    leaves ~1e-16 residues there that a fractional power would inflate.
    """
    total = 0.0
    for i in range(0, a.shape[0], block):
        sq = _sq_dists(a[i:i + block], b)
        if same_set:
            rows = np.arange(sq.shape[0])
            sq[rows, i + rows] = 0.0
        dist = np.sqrt(sq)
        total += (dist if beta == 1.0 else dist**beta).sum()
    return total / (a.shape[0] * b.shape[0])


def energy_distance(a, b, beta: float = 1.0) -> float:
    """Energy distance 2 E rho(X,Y) - E rho(X,X') - E rho(Y,Y').

    All three terms are plain pairwise means over the full grids (diagonal
    included), so identical multisets give exactly zero and the statistic is
    nonnegative.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("sample sets must be nonempty")
    if a.shape[1] != b.shape[1]:
        raise ValueError("sample sets must share a dimension")
    return float(
        2.0 * _block_mean_rho(a, b, beta)
        - _block_mean_rho(a, a, beta, same_set=True)
        - _block_mean_rho(b, b, beta, same_set=True)
    )


def median_pairwise_distance(pooled: np.ndarray, cap: int = 2048) -> float:
    """Median Euclidean distance on the pooled set (strided subsample > cap)."""
    n = pooled.shape[0]
    if n > cap:
        pooled = pooled[:: max(1, n // cap)][:cap]
    d = np.linalg.norm(pooled[:, None, :] - pooled[None, :, :], axis=-1)
    vals = d[np.triu_indices(pooled.shape[0], k=1)]
    med = float(np.median(vals)) if vals.size else 0.0
    return med if med > 0 else 1.0


def _block_mean_gauss(a: np.ndarray, b: np.ndarray, gamma: float, block: int = 4096) -> float:
    total = 0.0
    for i in range(0, a.shape[0], block):
        total += np.exp(-gamma * _sq_dists(a[i:i + block], b)).sum()
    return total / (a.shape[0] * b.shape[0])


def mmd_rbf(a, b, bandwidth: Optional[float] = None) -> float:
    """Squared MMD with a Gaussian kernel, biased V-statistic.

    k(x, y) = exp(-||x-y||^2 / (2 h^2)); ``bandwidth=None`` selects h by the
    median pairwise distance of the pooled set.  Identical sets give exactly
    zero.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("sample sets must be nonempty")
    if a.shape[1] != b.shape[1]:
        raise ValueError("sample sets must share a dimension")
    h = median_pairwise_distance(np.concatenate([a, b], axis=0)) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise ValueError("bandwidth must be > 0")
    gamma = 1.0 / (2.0 * h * h)
    return float(
        _block_mean_gauss(a, a, gamma)
        + _block_mean_gauss(b, b, gamma)
        - 2.0 * _block_mean_gauss(a, b, gamma)
    )


def wasserstein2(a, b, max_points: int = 1024, rng: Optional[RngState] = None) -> float:
    """Exact W2 between equal-size empirical measures by optimal assignment.

    Both sets are subsampled (without replacement) to at most ``max_points``
    and to a common size; returns the square root of the mean squared
    Euclidean cost under the optimal pairing.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("sample sets must be nonempty")
    if a.shape[1] != b.shape[1]:
        raise ValueError("sample sets must share a dimension")
    n = min(a.shape[0], b.shape[0], max_points)
    gen = (rng or RngState(0)).generator
    if a.shape[0] > n:
        a = a[gen.choice(a.shape[0], size=n, replace=False)]
    if b.shape[0] > n:
        b = b[gen.choice(b.shape[0], size=n, replace=False)]
    cost = _sq_dists(a, b)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))
