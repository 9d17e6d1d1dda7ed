"""Aggregate-constrained generation: projection, rounding, guidance, training.

Only the unit-level endpoints at time 1 and a per-group aggregate of the
time-0 units are observed.  Generation proceeds by projecting every predicted
endpoint onto the aggregate constraint set (proportional rescaling per
column, the generalized-KL projection for sums) and rounding to integers so
that column sums match the aggregate exactly.  Training alternates guided
sampling of latent units (E-step) with gradient steps on the energy score
lifted through the aggregate map (M-step).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bridge import BridgeSchedule, bridge_step, corrupt
from .rng import RngState
from .scoring import ScoreConfig

_ROUNDINGS = ("exact", "randomized", "round")


@dataclass(frozen=True)
class AggregateSpec:
    """Linear aggregate map across units; only elementwise sums for now."""

    kind: str = "sum"

    def __post_init__(self):
        if self.kind != "sum":
            raise ValueError(f"unsupported aggregate kind {self.kind!r}")

    def apply(self, units) -> np.ndarray:
        return np.asarray(units).sum(axis=-2)


@dataclass
class GroupBatch:
    """One group: G unit vectors, their aggregate, and unit side information."""

    units: np.ndarray
    aggregate: np.ndarray
    side_info: Optional[np.ndarray] = None

    @property
    def group_size(self) -> int:
        return self.units.shape[0]

    def __post_init__(self):
        if np.any(np.asarray(self.aggregate) < 0):
            raise ValueError("aggregate entries must be >= 0")


def rescale_to_aggregate(units, targets) -> np.ndarray:
    """Scale each column so it sums to its target; empty columns split evenly.

    ``units`` is (..., G, d) nonnegative; ``targets`` is (..., d).  Columns
    with positive sum are scaled proportionally (the generalized-KL
    projection onto the sum constraint); all-zero columns receive the uniform
    split target/G.
    """
    x = np.asarray(units, dtype=float)
    a = np.asarray(targets, dtype=float)
    if np.any(x < 0):
        raise ValueError("units must be nonnegative")
    if np.any(a < 0):
        raise ValueError("targets must be nonnegative")
    g = x.shape[-2]
    sums = x.sum(axis=-2, keepdims=True)
    a_col = a[..., None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        scaled = np.where(sums > 0, x * (a_col / np.where(sums > 0, sums, 1.0)), a_col / g)
    return scaled


def randomized_round(rng: RngState, x) -> np.ndarray:
    """Round each entry to floor or floor+1 with P(up) = frac(x); unbiased."""
    x_a = np.asarray(x, dtype=float)
    if np.any(x_a < 0):
        raise ValueError("randomized rounding expects nonnegative input")
    base = np.floor(x_a)
    frac = x_a - base
    up = rng.generator.random(x_a.shape) < frac
    return (base + up).astype(np.int64)


def groupwise_exact_round(rng: RngState, units, snap_tol: float = 1e-6) -> np.ndarray:
    """Round a (..., G, d) array whose column sums are integral, exactly.

    Takes floors, then raises a weight-proportional without-replacement
    subset (weights = fractional parts, exponential-keys selection) by one
    per column until the column sum matches.  Zero-weight entries are only
    promoted when the shortfall exceeds the number of positive weights, in
    which case the remainder is assigned uniformly among them.
    """
    x = np.asarray(units, dtype=float)
    if np.any(x < 0):
        raise ValueError("units must be nonnegative")
    g = x.shape[-2]
    sums = x.sum(axis=-2)
    targets = np.rint(sums)
    if np.any(np.abs(sums - targets) > snap_tol * np.maximum(1.0, np.abs(targets))):
        raise ValueError("column sums must be integral (within snap tolerance)")

    base = np.floor(x)
    frac = x - base
    shortfall = np.rint(targets - base.sum(axis=-2)).astype(np.int64)
    if np.any((shortfall < 0) | (shortfall > g)):
        raise RuntimeError("rounding shortfall escaped [0, G]; inconsistent inputs")

    gen = rng.generator
    gumbel = gen.gumbel(size=x.shape)
    tie = gen.random(x.shape)
    with np.errstate(divide="ignore"):
        keys = np.where(frac > 0, np.log(np.where(frac > 0, frac, 1.0)) + gumbel, -1e12 + tie)
    # rank within each column, highest key first; promote the top `shortfall`
    order = np.argsort(-keys, axis=-2)
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.broadcast_to(np.arange(g)[:, None], order.shape).copy(), axis=-2)
    promote = ranks < shortfall[..., None, :]
    return (base + promote).astype(np.int64)


def project(rng: RngState, predicted_units, targets, rounding: str = "exact") -> np.ndarray:
    """Rescale predictions onto the aggregate, then round to integers.

    With the default exact rounding the output column sums equal ``targets``
    with integer equality and every entry moves by at most one from its
    scaled value.  ``randomized`` and ``round`` are ablation modes that keep
    the rescaling but round entrywise (unbiased / nearest), allowing column
    sums to drift by rounding.
    """
    if rounding not in _ROUNDINGS:
        raise ValueError(f"rounding must be one of {_ROUNDINGS}")
    scaled = rescale_to_aggregate(np.maximum(np.asarray(predicted_units, dtype=float), 0.0), targets)
    if rounding == "exact":
        return groupwise_exact_round(rng, scaled)
    if rounding == "randomized":
        return randomized_round(rng, scaled)
    return np.rint(scaled).astype(np.int64)


def _continuous_prediction(denoiser, rng, x_flat, t, side_flat):
    if hasattr(denoiser, "continuous"):
        return denoiser.continuous(rng, x_flat, t, side_flat, m=1)[0]
    return np.asarray(denoiser(rng, x_flat, t, side_flat), dtype=float)


def guided_sample(rng: RngState, schedule: BridgeSchedule, denoiser, x1_units, aggregate,
                  side_info=None, grid=None, rounding: str = "exact") -> np.ndarray:
    """Ancestral sampling with every predicted endpoint projected to the aggregate.

    ``x1_units`` is (G, d) or (batch, G, d); ``aggregate`` matches with the
    unit axis summed out.  The final output is a projected prediction, so its
    column sums equal the aggregate exactly (under exact rounding).
    """
    x1_a = np.asarray(x1_units, dtype=np.int64)
    single = x1_a.ndim == 2
    if single:
        x1_a = x1_a[None]
    n, g, d = x1_a.shape
    a0 = np.asarray(aggregate, dtype=np.int64).reshape(n, d)
    z = None
    if side_info is not None:
        z = np.asarray(side_info, dtype=float).reshape(n, g, -1)
    grid = np.asarray(grid if grid is not None else np.linspace(1.0, 0.0, 9), dtype=float)
    if grid.ndim != 1 or grid.shape[0] < 2 or grid[0] != 1.0 or grid[-1] != 0.0 or np.any(np.diff(grid) >= 0):
        raise ValueError("grid must start at 1, end at 0, and strictly decrease")

    x = x1_a.reshape(n * g, d)
    z_flat = z.reshape(n * g, -1) if z is not None else None
    for k in range(grid.shape[0] - 2):
        t, s = float(grid[k]), float(grid[k + 1])
        pred = _continuous_prediction(denoiser, rng, x, t, z_flat)
        tilde = project(rng, pred.reshape(n, g, d), a0, rounding).reshape(n * g, d)
        x = bridge_step(rng, schedule, x, tilde, t, s)
    t_last = float(grid[-2])
    pred = _continuous_prediction(denoiser, rng, x, t_last, z_flat)
    out = project(rng, pred.reshape(n, g, d), a0, rounding)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Aggregate-supervised training (EM style)
# ---------------------------------------------------------------------------

def aggregate_loss_and_grads(model, x_t_units, t_groups, side_flat, aggregates,
                             score_config: ScoreConfig, noise):
    """Negated aggregate energy score over a batch of groups, with gradients.

    ``x_t_units`` is (n, G, d); predictions are made per unit, summed across
    the unit axis, and scored against each group's aggregate.  Gradients
    broadcast from the aggregate back to every unit's continuous output.
    """
    from .denoiser import TrainingError, _rho_and_grad

    n, g, d = x_t_units.shape
    m = score_config.m
    beta = score_config.beta
    a0 = np.asarray(aggregates, dtype=float)

    t_flat = np.repeat(np.asarray(t_groups, dtype=float).reshape(n, 1), g, axis=0)
    x_flat = x_t_units.reshape(n * g, d)
    feats = np.concatenate(
        [model._features(x_flat, t_flat, noise[j], side_flat) for j in range(m)], axis=0
    )
    out, cache = model.forward(feats, keep_cache=True)
    y = out.reshape(m, n, g, d)
    agg = y.sum(axis=2)  # (m, n, d)

    fit_rho, fit_grad = _rho_and_grad(agg - a0[None, :, :], beta)
    d_agg = np.zeros_like(agg)
    spread = np.zeros(n)
    for j in range(m):
        for jp in range(m):
            if j == jp:
                continue
            r, grad = _rho_and_grad(agg[j] - agg[jp], beta)
            spread += 0.5 * r
            d_agg[j] += grad
    spread /= m * (m - 1)
    d_agg /= m * (m - 1)
    score = spread - fit_rho.mean(axis=0)
    loss = float(-score.mean())
    if not np.isfinite(loss):
        raise TrainingError("non-finite aggregate loss")

    d_agg -= fit_grad / m
    d_agg *= -1.0 / n
    d_y = np.repeat(d_agg[:, :, None, :], g, axis=2)  # aggregate is a sum over units
    grads = model.backward(d_y.reshape(m * n * g, d), cache)
    return loss, grads


def aggregate_train(rng: RngState, x1_units, aggregates, schedule: BridgeSchedule,
                    denoiser_config, train_config, side_info=None, nfe: int = 8,
                    rounding: str = "exact", log_every: int = 20):
    """EM-style training from aggregates only (units at time 0 are latent).

    E-step: guided sampling with the current model produces latent units
    consistent with each group's aggregate.  M-step: corrupt (latent, x1)
    through the forward bridge at a uniform time per group and take an Adam
    step on the negated aggregate energy score.
    """
    from .denoiser import (AdamState, Denoiser, EmaState, TrainingError, TrainResult,
                           clip_by_global_norm, lr_at_step)

    x1_a = np.asarray(x1_units, dtype=np.int64)
    if x1_a.ndim != 3 or x1_a.shape[0] == 0:
        raise ValueError("x1_units must be a nonempty (groups, G, d) array")
    n_groups, g, d = x1_a.shape
    a0 = np.asarray(aggregates, dtype=np.int64).reshape(n_groups, d)
    z = np.asarray(side_info, dtype=float).reshape(n_groups, g, -1) if side_info is not None else None

    model = Denoiser(denoiser_config)
    model.init_params(rng)
    ema = EmaState.init(model.params, train_config.ema_decay)
    adam = AdamState.init(model.params)
    score_cfg = ScoreConfig(beta=train_config.beta, m=train_config.m_samples)
    grid = np.linspace(1.0, 0.0, nfe + 1)

    bs = min(train_config.batch_size, n_groups)
    steps_per_epoch = (n_groups + bs - 1) // bs
    total_steps = steps_per_epoch * train_config.epochs
    gen = rng.generator
    log = []
    step = 0
    for _ in range(train_config.epochs):
        order = gen.permutation(n_groups)
        for start in range(0, n_groups, bs):
            idx = order[start:start + bs]
            nb = idx.shape[0]
            x1_b = x1_a[idx]
            a_b = a0[idx]
            z_b = z[idx] if z is not None else None
            x0_latent = guided_sample(rng, schedule, model, x1_b, a_b, z_b, grid, rounding)

            t_b = gen.random(nb)
            x_t = corrupt(rng, schedule, x0_latent.reshape(nb * g, d), x1_b.reshape(nb * g, d),
                          np.repeat(t_b, g)[:, None]).x_t.reshape(nb, g, d)
            z_flat = z_b.reshape(nb * g, -1) if z_b is not None else None
            noise = gen.normal(size=(score_cfg.m, nb * g, denoiser_config.noise_dim))
            try:
                loss, grads = aggregate_loss_and_grads(model, x_t, t_b, z_flat, a_b, score_cfg, noise)
            except TrainingError as err:
                raise TrainingError(f"diverged at step {step}: {err}") from err
            grads, raw_norm = clip_by_global_norm(grads, train_config.grad_clip_norm)
            lr = lr_at_step(train_config, step, total_steps)
            adam.update(model.params, grads, lr)
            ema.update(model.params)
            if step % log_every == 0 or step == total_steps - 1:
                log.append({"step": step, "loss": loss, "lr": lr, "grad_norm": raw_norm})
            step += 1
    return TrainResult(model=model, ema=ema, log=log, steps=step)
