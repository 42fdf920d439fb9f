"""Synthetic low-rank series with spatial coupling that switches regime mid-series."""

from __future__ import annotations

from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .config import SynthConfig
from .data import SpatioTemporalDataset, euclidean_distances, write_coords_csv, write_values_csv


def factor_series(t: np.ndarray, rank: int, periods) -> np.ndarray:
    """Shared temporal factors (T, rank): a daily sine, a weekly sawtooth, then more sines."""
    if len(periods) < rank:
        raise ValueError(f"need {rank} periods, got {len(periods)}")
    cols = []
    for r in range(rank):
        p = periods[r]
        if r == 1:
            cols.append(2.0 * ((t % p) / p) - 1.0)
        else:
            cols.append(np.sin(2 * np.pi * t / p))
    return np.stack(cols, axis=1)


def _coupling(rng: np.random.Generator, candidates: list[np.ndarray], k: int) -> np.ndarray:
    n = len(candidates)
    C = np.zeros((n, n))
    for i, cand in enumerate(candidates):
        w = rng.dirichlet(np.ones(k))
        C[i, cand[:k]] = w
    return C


def coupling_matrices(rng: np.random.Generator, coords: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-stochastic couplings before and after the drift point.

    Before: each node listens to its k geographically nearest nodes.
    After: an independent draw of k random other nodes per node.
    """
    n = len(coords)
    if n == 1:
        return np.zeros((1, 1)), np.zeros((1, 1))
    d = euclidean_distances(coords)
    near = []
    for i in range(n):
        order = np.argsort(d[i], kind="stable")
        near.append(order[order != i])
    before = _coupling(rng, near, k)
    rand = [rng.permutation(np.delete(np.arange(n), i)) for i in range(n)]
    after = _coupling(rng, rand, k)
    return before, after


def generate(cfg: SynthConfig) -> SpatioTemporalDataset:
    """X[t] = U s(t) + rho C(t) X[t-1] + noise, with C switching at ``drift_at``."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    N, T = cfg.N, cfg.T
    coords = rng.uniform(0.0, 10.0, size=(N, 2))
    U = rng.uniform(0.5, 2.0, size=(N, cfg.rank)) * rng.choice([-1.0, 1.0], size=(N, cfg.rank))
    C_before, C_after = coupling_matrices(rng, coords, min(cfg.neighbors, max(N - 1, 1)))
    noise = rng.standard_normal((T, N)) * cfg.noise_std
    t = np.arange(T, dtype=np.float64)
    signal = factor_series(t, cfg.rank, cfg.periods) @ U.T
    X = np.empty((T, N))
    X[0] = signal[0] + noise[0]
    for step in range(1, T):
        C = C_before if step < cfg.drift_at else C_after
        X[step] = signal[step] + cfg.rho * (C @ X[step - 1]) + noise[step]
    start = datetime.fromisoformat(cfg.start)
    stamps = [(start + timedelta(hours=i)).isoformat() for i in range(T)]
    node_ids = [f"n{i}" for i in range(N)]
    return SpatioTemporalDataset(X, stamps, node_ids, coords, euclidean_distances(coords))


def write_dataset(ds: SpatioTemporalDataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_values_csv(out / "values.csv", ds)
    if ds.coords is not None:
        write_coords_csv(out / "coords.csv", ds.node_ids, ds.coords)
    return out


def synth(cfg: SynthConfig, out_dir) -> Path:
    """Generate and write ``values.csv`` and ``coords.csv`` into ``out_dir``."""
    return write_dataset(generate(cfg), out_dir)
