"""Synthetic benchmark generators and dataset file I/O.

Three families: a discretized two-moons / eight-Gaussians transport pair on
{0..195}^2, a low-rank Gaussian mixture lifted to d ambient dimensions on
[0, 255], and grouped variants of the low-rank mixture for deconvolution with
Dirichlet-distributed per-group component weights.  Datasets serialize as an
integer CSV plus a JSON sidecar; loads are all-or-nothing and verify the
declared shape.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .rng import RngState

SCHEMA_VERSION = 1


@dataclass
class PairedDataset:
    x0: np.ndarray
    x1: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.x0.shape != self.x1.shape:
            raise ValueError("x0 and x1 must have equal shapes")

    @property
    def n(self) -> int:
        return self.x0.shape[0]

    @property
    def dim(self) -> int:
        return self.x0.shape[1]


@dataclass
class GroupDataset:
    aggregates: np.ndarray          # (n_groups, d)
    side_info: np.ndarray           # (n_groups, G, k) one-hot component labels
    x1_units: np.ndarray            # (n_groups, G, d)
    units: Optional[np.ndarray] = None  # (n_groups, G, d), evaluation only
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.units is not None and not np.array_equal(self.units.sum(axis=1), self.aggregates):
            raise ValueError("aggregates must equal the column sums of units")

    @property
    def n_groups(self) -> int:
        return self.aggregates.shape[0]

    @property
    def group_size(self) -> int:
        return self.x1_units.shape[1]

    @property
    def dim(self) -> int:
        return self.aggregates.shape[1]


def _reflect(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Fold values into [lo, hi] by repeated reflection at the bounds."""
    width = hi - lo
    m = np.mod(x - lo, 2.0 * width)
    return lo + np.where(m <= width, m, 2.0 * width - m)


def _quantize_clip(x: np.ndarray, scale: float, offset: float, lo: int, hi: int) -> np.ndarray:
    return np.round(np.clip(x * scale + offset, lo, hi)).astype(np.int64)


def gen_discrete_moons(rng: RngState, n: int) -> PairedDataset:
    """Two moons (data side) paired with an eight-Gaussian ring (source side).

    Both clouds map to {0..195}^2 through round(clip(x * 30 + 80, 0, 195)).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = rng.generator

    n_out = n // 2
    theta = gen.random(n) * np.pi
    moons = np.empty((n, 2))
    moons[:n_out, 0] = np.cos(theta[:n_out])
    moons[:n_out, 1] = np.sin(theta[:n_out])
    moons[n_out:, 0] = 1.0 - np.cos(theta[n_out:])
    moons[n_out:, 1] = 1.0 - np.sin(theta[n_out:]) - 0.5
    moons += gen.normal(0.0, 0.1, size=(n, 2))
    moons -= np.array([0.5, 0.25])
    moons = moons[gen.permutation(n)]

    angles = 2.0 * np.pi * gen.integers(0, 8, size=n) / 8.0
    ring = 2.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    ring += gen.normal(0.0, 0.1, size=(n, 2))

    x0 = _quantize_clip(moons, 30.0, 80.0, 0, 195)
    x1 = _quantize_clip(ring, 30.0, 80.0, 0, 195)
    meta = {"generator": "moons", "params": {"n": n}, "seed": rng.seed, "stream": rng.stream,
            "value_range": 196}
    return PairedDataset(x0=x0, x1=x1, metadata=meta)


def _haar_orthogonal(gen: np.random.Generator, r: int) -> np.ndarray:
    q, rr = np.linalg.qr(gen.normal(size=(r, r)))
    return q * np.sign(np.diag(rr))


def _lowrank_mixture(gen: np.random.Generator, rank: int = 3, components: int = 5,
                     mean_scale: float = 20.0, cov_scale: float = 10.0, min_eig: float = 0.1):
    """Latent mixture parameters: means, covariance factors, weights."""
    means = gen.normal(0.0, mean_scale / np.sqrt(rank), size=(components, rank))
    chols = []
    for _ in range(components):
        eigs = np.maximum(gen.exponential(cov_scale, size=rank), min_eig)
        q = _haar_orthogonal(gen, rank)
        cov = q @ np.diag(eigs) @ q.T
        chols.append(np.linalg.cholesky(cov))
    weights = gen.dirichlet(np.ones(components))
    return means, np.stack(chols), weights


def _sample_latent(gen, means, chols, labels):
    eps = gen.normal(size=(labels.shape[0], means.shape[1]))
    return means[labels] + np.einsum("nij,nj->ni", chols[labels], eps)


def _project_integerize(gen, z, projection, noise_scale=1.0, center=128.0, lo=0, hi=255):
    y = z @ projection.T + center + gen.normal(0.0, noise_scale, size=(z.shape[0], projection.shape[0]))
    return _reflect(np.round(y), lo, hi).astype(np.int64)


def gen_lowrank_gmm(rng: RngState, n: int, d: int) -> PairedDataset:
    """Rank-3, 5-component mixtures projected to d dimensions on [0, 255].

    The data and source sides use independently drawn mixture parameters and
    independent random projections; ambient Gaussian noise is added before
    rounding and reflecting into the bounded range.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    gen = rng.generator
    sides = []
    for _ in range(2):
        means, chols, weights = _lowrank_mixture(gen)
        projection = gen.normal(size=(d, 3)) / np.sqrt(3.0)
        labels = gen.choice(weights.shape[0], size=n, p=weights)
        z = _sample_latent(gen, means, chols, labels)
        sides.append(_project_integerize(gen, z, projection))
    meta = {"generator": "lowrank", "params": {"n": n, "d": d}, "seed": rng.seed,
            "stream": rng.stream, "value_range": 256}
    return PairedDataset(x0=sides[0], x1=sides[1], metadata=meta)


def gen_deconv_groups(rng: RngState, n_groups: int, group_size: int, alpha: float,
                      d: int = 4, pool_size: int = 50_000) -> GroupDataset:
    """Grouped low-rank mixture data for deconvolution.

    Per group, component weights follow Dirichlet(alpha, ..., alpha); units
    are drawn from a pre-sampled pool stratified by component label, so every
    group shares one underlying mixture.  Aggregates are column sums of the
    units; side information is the one-hot component label per unit.
    """
    if n_groups < 1 or group_size < 1 or alpha <= 0:
        raise ValueError("need n_groups >= 1, group_size >= 1, alpha > 0")
    gen = rng.generator
    k = 5

    means, chols, weights = _lowrank_mixture(gen)
    projection = gen.normal(size=(d, 3)) / np.sqrt(3.0)
    pool_labels = gen.choice(k, size=pool_size, p=weights)
    pool = _project_integerize(gen, _sample_latent(gen, means, chols, pool_labels), projection)
    by_label = [np.flatnonzero(pool_labels == c) for c in range(k)]
    for c, idx in enumerate(by_label):
        if idx.size == 0:  # pragma: no cover - vanishing mixture weight
            by_label[c] = np.arange(pool_size)

    group_weights = gen.dirichlet(np.full(k, float(alpha)), size=n_groups)
    labels = np.empty((n_groups, group_size), dtype=np.int64)
    for i in range(n_groups):
        labels[i] = gen.choice(k, size=group_size, p=group_weights[i])
    picks = np.empty((n_groups, group_size), dtype=np.int64)
    for c in range(k):
        mask = labels == c
        cnt = int(mask.sum())
        if cnt:
            picks[mask] = by_label[c][gen.integers(0, by_label[c].size, size=cnt)]
    units = pool[picks]

    src_means, src_chols, src_weights = _lowrank_mixture(gen)
    src_projection = gen.normal(size=(d, 3)) / np.sqrt(3.0)
    src_labels = gen.choice(k, size=n_groups * group_size, p=src_weights)
    x1_units = _project_integerize(
        gen, _sample_latent(gen, src_means, src_chols, src_labels), src_projection
    ).reshape(n_groups, group_size, d)

    side_info = np.zeros((n_groups, group_size, k), dtype=np.int64)
    np.put_along_axis(side_info, labels[..., None], 1, axis=2)
    meta = {"generator": "deconv", "params": {"n_groups": n_groups, "G": group_size,
                                              "alpha": float(alpha), "d": d, "k": k,
                                              "pool_size": pool_size},
            "seed": rng.seed, "stream": rng.stream, "value_range": 256}
    return GroupDataset(aggregates=units.sum(axis=1), side_info=side_info,
                        x1_units=x1_units, units=units, metadata=meta)


# ---------------------------------------------------------------------------
# File format: integer CSV plus JSON sidecar
# ---------------------------------------------------------------------------

class DatasetIOError(ValueError):
    """Malformed, truncated, or mismatched dataset files."""


def _write_rows(path: str, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_int_rows(path: str, expected_cols: int):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetIOError(f"{path}: empty file")
        if len(header) != expected_cols:
            raise DatasetIOError(f"{path}: expected {expected_cols} columns, found {len(header)}")
        for r, row in enumerate(reader, start=2):
            if len(row) != expected_cols:
                raise DatasetIOError(f"{path}: row {r} has {len(row)} cells, expected {expected_cols}")
            try:
                rows.append([int(c) for c in row])
            except ValueError:
                bad = next(c for c in row if not c.lstrip("-").isdigit())
                col = header[row.index(bad)]
                raise DatasetIOError(f"{path}: non-integer cell {bad!r} at row {r}, column {col}") from None
    return np.asarray(rows, dtype=np.int64).reshape(len(rows), expected_cols)


def write_dataset(dataset, prefix: str) -> list:
    """Write a dataset under ``prefix``; returns the file paths created."""
    os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
    sidecar = {"schema_version": SCHEMA_VERSION, **dataset.metadata}
    paths = [prefix + ".csv", prefix + ".json"]
    if isinstance(dataset, PairedDataset):
        d = dataset.dim
        header = [f"x0_{j}" for j in range(d)] + [f"x1_{j}" for j in range(d)]
        _write_rows(prefix + ".csv", header, np.concatenate([dataset.x0, dataset.x1], axis=1))
        sidecar.update({"kind": "paired", "n": dataset.n, "d": d})
    elif isinstance(dataset, GroupDataset):
        n, g, d = dataset.x1_units.shape
        k = dataset.side_info.shape[2]
        has_units = dataset.units is not None
        header = (["group", "unit"] + [f"x1_{j}" for j in range(d)] + [f"z_{j}" for j in range(k)]
                  + ([f"x0_{j}" for j in range(d)] if has_units else []))
        rows = []
        for i in range(n):
            for u in range(g):
                row = [i, u] + list(dataset.x1_units[i, u]) + list(dataset.side_info[i, u])
                if has_units:
                    row += list(dataset.units[i, u])
                rows.append(row)
        _write_rows(prefix + ".csv", header, rows)
        _write_rows(prefix + ".aggregates.csv", ["group"] + [f"a_{j}" for j in range(d)],
                    np.concatenate([np.arange(n)[:, None], dataset.aggregates], axis=1))
        sidecar.update({"kind": "group", "n_groups": n, "G": g, "d": d, "k": k,
                        "has_units": has_units})
        paths.append(prefix + ".aggregates.csv")
    else:
        raise TypeError(f"unsupported dataset type {type(dataset)!r}")
    with open(prefix + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    return paths


def read_dataset(prefix: str):
    """Load a dataset written by :func:`write_dataset`; all-or-nothing."""
    sidecar_path = prefix + ".json"
    if not os.path.exists(sidecar_path):
        raise DatasetIOError(
            f"{sidecar_path}: sidecar not found; datasets are a CSV plus JSON sidecar "
            f"pair -- regenerate with the `gen` command or point at the common prefix"
        )
    with open(sidecar_path) as fh:
        meta = json.load(fh)
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise DatasetIOError(f"{sidecar_path}: schema version {meta.get('schema_version')} "
                             f"!= supported {SCHEMA_VERSION}")
    kind = meta.get("kind")
    if kind == "paired":
        n, d = meta["n"], meta["d"]
        table = _read_int_rows(prefix + ".csv", 2 * d)
        if table.shape[0] != n:
            raise DatasetIOError(f"{prefix}.csv: {table.shape[0]} rows, sidecar declares {n}")
        payload = {k: v for k, v in meta.items() if k not in ("schema_version", "kind", "n", "d")}
        return PairedDataset(x0=table[:, :d], x1=table[:, d:], metadata=payload)
    if kind == "group":
        n, g, d, k = meta["n_groups"], meta["G"], meta["d"], meta["k"]
        has_units = meta["has_units"]
        cols = 2 + d + k + (d if has_units else 0)
        table = _read_int_rows(prefix + ".csv", cols)
        if table.shape[0] != n * g:
            raise DatasetIOError(f"{prefix}.csv: {table.shape[0]} rows, sidecar declares {n * g}")
        agg = _read_int_rows(prefix + ".aggregates.csv", 1 + d)
        if agg.shape[0] != n:
            raise DatasetIOError(f"{prefix}.aggregates.csv: {agg.shape[0]} rows, sidecar declares {n}")
        x1 = table[:, 2:2 + d].reshape(n, g, d)
        z = table[:, 2 + d:2 + d + k].reshape(n, g, k)
        units = table[:, 2 + d + k:].reshape(n, g, d) if has_units else None
        payload = {kk: v for kk, v in meta.items()
                   if kk not in ("schema_version", "kind", "n_groups", "G", "d", "k", "has_units")}
        return GroupDataset(aggregates=agg[:, 1:], side_info=z, x1_units=x1, units=units,
                            metadata=payload)
    raise DatasetIOError(f"{sidecar_path}: unknown dataset kind {kind!r}")
