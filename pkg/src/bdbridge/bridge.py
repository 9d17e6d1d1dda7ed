"""The count bridge: schedule, forward corruption, and the exact reverse step.

A pair of independent Poisson birth/death processes with cumulative
intensities ``lambda_plus * w(t)`` and ``lambda_minus * w(t)`` drives the
state ``X_t = X_0 + B_t - D_t``.  Conditioned on both endpoints, the state at
an earlier time is reachable exactly: draw the slack (cancelling birth/death
pairs) from its Bessel-form posterior, recover total jumps and births, thin
the jump count binomially by the intensity ratio, and split the survivors
hypergeometrically into births.  Coordinates evolve independently, so every
operation here is elementwise over arbitrary array shapes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .rng import RngState
from .samplers import _bessel_sample_arrays, binomial_sample, hypergeometric_sample

_SHAPES = ("linear", "power", "cosine")


@dataclass(frozen=True)
class BridgeSchedule:
    """Birth/death rates plus the jump-intensity shape w(t).

    ``w`` satisfies w(0)=0, w(1)=1 and is non-decreasing; cumulative
    intensities are ``lambda_plus * w(t)`` and ``lambda_minus * w(t)``.
    """

    lambda_plus: float
    lambda_minus: float
    shape: str = "linear"
    power: float = 1.0

    def __post_init__(self):
        if self.lambda_plus < 0 or self.lambda_minus < 0:
            raise ValueError("rates must be >= 0")
        if self.shape not in _SHAPES:
            raise ValueError(f"shape must be one of {_SHAPES}, got {self.shape!r}")
        if self.shape == "power" and self.power <= 0:
            raise ValueError("power shape needs a positive exponent")

    @property
    def kappa(self) -> float:
        """Jump intensity sqrt(lambda_plus * lambda_minus)."""
        return float(np.sqrt(self.lambda_plus * self.lambda_minus))

    def weight(self, t):
        return schedule_weight(self, t)

    def lambda_prod_at(self, t):
        """Product of cumulative intensities at time t."""
        w = schedule_weight(self, t)
        return self.lambda_plus * self.lambda_minus * w * w


def schedule_weight(schedule: BridgeSchedule, t):
    """Evaluate w(t) for t in [0, 1]; scalar or array."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t_arr)) or np.any((t_arr < 0) | (t_arr > 1)):
        raise ValueError("t must lie in [0, 1]")
    if schedule.shape == "linear":
        w = t_arr
    elif schedule.shape == "power":
        w = t_arr**schedule.power
    else:
        w = 0.5 * (1.0 - np.cos(np.pi * t_arr))
    return float(w) if np.ndim(t) == 0 else w


@dataclass(frozen=True)
class JumpDecomposition:
    """The (d, M, N, B, D) change of variables for one coordinate.

    Invariants: N = |d| + 2M, B = (N + d)/2, D = N - B, all counts >= 0.
    """

    d: int
    M: int
    N: int
    B: int
    D: int

    def __post_init__(self):
        if self.N != abs(self.d) + 2 * self.M or self.B != (self.N + self.d) // 2 \
                or self.D != self.N - self.B or self.B < 0 or self.D < 0 or (self.N + self.d) % 2:
            raise ValueError("inconsistent jump decomposition")


@dataclass(frozen=True)
class NoisyPoint:
    """State of the corrupted process at a single time."""

    x_t: np.ndarray
    t: float | np.ndarray


def _slack(rng: RngState, schedule: BridgeSchedule, d: np.ndarray, t) -> np.ndarray:
    """Draw slack M ~ Bes(|d|; Lambda+(t) Lambda-(t)) elementwise."""
    lam = np.broadcast_to(np.asarray(schedule.lambda_prod_at(t)), d.shape)
    return _bessel_sample_arrays(rng.generator, np.abs(d).reshape(-1), lam.reshape(-1).astype(float)).reshape(d.shape)


def decompose_endpoints(rng: RngState, schedule: BridgeSchedule, d: int, t: float) -> JumpDecomposition:
    """Sample the jump decomposition of displacement d at time t."""
    if not 0 < t <= 1:
        raise ValueError("t must lie in (0, 1]")
    d_arr = np.asarray([int(d)], dtype=np.int64)
    m = int(_slack(rng, schedule, d_arr, t)[0])
    n = abs(int(d)) + 2 * m
    b = (n + int(d)) // 2
    return JumpDecomposition(d=int(d), M=m, N=n, B=b, D=n - b)


def corrupt(rng: RngState, schedule: BridgeSchedule, x0, x1, t) -> NoisyPoint:
    """Sample X_t from the endpoint-conditioned kernel, elementwise.

    Decomposes the full displacement at time 1, thins the jump count to time
    t binomially by w(t), splits births hypergeometrically, and reassembles
    x_t = x1 - 2(B1 - Bt) + (N1 - Nt).  ``t`` may be a scalar or broadcast
    against the state shape (e.g. one time per batch row).
    """
    x0_a = np.asarray(x0, dtype=np.int64)
    x1_a = np.asarray(x1, dtype=np.int64)
    if x0_a.shape != x1_a.shape:
        raise ValueError("x0 and x1 must have equal shapes")
    w_t = np.broadcast_to(np.asarray(schedule.weight(t), dtype=float), x0_a.shape)

    d1 = x1_a - x0_a
    m1 = _slack(rng, schedule, d1, 1.0)
    n1 = np.abs(d1) + 2 * m1
    b1 = (n1 + d1) // 2
    n_t = binomial_sample(rng, n1, w_t)
    b_t = hypergeometric_sample(rng, n1, b1, n_t)
    x_t = x1_a - 2 * (b1 - b_t) + (n1 - n_t)
    return NoisyPoint(x_t=np.asarray(x_t, dtype=np.int64), t=t)


def bridge_step(rng: RngState, schedule: BridgeSchedule, x_t, x0_hat, t: float, s: float) -> np.ndarray:
    """One exact reverse step from time t to s < t given a predicted endpoint.

    Per coordinate: d = x_t - x0_hat, slack M ~ Bes(|d|; Lambda+(t) Lambda-(t)),
    N_t = |d| + 2M, B_t = (N_t + d)/2, then N_s ~ Bin(N_t, w(s)/w(t)) and
    B_s ~ Hyp(N_t, B_t, N_s); returns x_t - 2(B_t - B_s) + (N_t - N_s).
    """
    if not 0 <= s < t <= 1:
        raise ValueError("need 0 <= s < t <= 1")
    x_t_a = np.asarray(x_t, dtype=np.int64)
    x0_a = np.asarray(x0_hat, dtype=np.int64)
    if x_t_a.shape != x0_a.shape:
        raise ValueError("x_t and x0_hat must have equal shapes")

    d = x_t_a - x0_a
    m = _slack(rng, schedule, d, t)
    n_t = np.abs(d) + 2 * m
    b_t = (n_t + d) // 2
    r = schedule.weight(s) / schedule.weight(t)
    n_s = binomial_sample(rng, n_t, np.full(n_t.shape, r))
    b_s = hypergeometric_sample(rng, n_t, b_t, n_s)
    return np.asarray(x_t_a - 2 * (b_t - b_s) + (n_t - n_s), dtype=np.int64)


def ancestral_sample(
    rng: RngState,
    schedule: BridgeSchedule,
    denoiser: Callable,
    x1,
    grid,
    side_info: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Reverse-sample from t=1 to t=0 along a decreasing grid.

    ``denoiser(rng, x_t, t, side_info)`` must return an integer endpoint
    prediction of the same shape as ``x_t``.  Each step draws a fresh
    prediction and applies the exact bridge step; the s=0 step lands on the
    final prediction exactly.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.shape[0] < 2:
        raise ValueError("grid must contain at least [1, 0]")
    if grid[0] != 1.0 or grid[-1] != 0.0 or np.any(np.diff(grid) >= 0):
        raise ValueError("grid must start at 1, end at 0, and strictly decrease")

    x = np.asarray(x1, dtype=np.int64)
    for k in range(grid.shape[0] - 1):
        t, s = float(grid[k]), float(grid[k + 1])
        x0_hat = np.asarray(denoiser(rng, x, t, side_info), dtype=np.int64)
        x = bridge_step(rng, schedule, x, x0_hat, t, s)
    return x


def uniform_grid(nfe: int) -> np.ndarray:
    """Uniform reverse grid with ``nfe`` steps: 1, (nfe-1)/nfe, ..., 0."""
    if nfe < 1:
        raise ValueError("nfe must be >= 1")
    return np.linspace(1.0, 0.0, nfe + 1)
