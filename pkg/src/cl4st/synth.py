"""Synthetic sensor-graph data: graph-diffused sinusoids plus noise."""
from __future__ import annotations

import numpy as np

from .core import build_sensor_graph
from .data import write_dataset


def synth_signals(nodes: int, steps: int, seed: int = 0, *, period: int = 24,
                  noise: float = 0.05, diffusion: float = 0.5, hops: int = 2):
    """Return (signals (T, N, 1), distances (N, N)).

    Each node carries a daily and a half-daily harmonic with its own phase and
    amplitude. The per-node signals are smoothed over a kNN-style Gaussian graph
    built from random planar positions, then offset to stay positive.
    """
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0.0, 10.0, size=(nodes, 2))
    dist = np.sqrt(np.square(pos[:, None, :] - pos[None, :, :]).sum(-1))
    graph = build_sensor_graph(dist)
    adj = graph.adjacency
    deg = adj.sum(1, keepdims=True)
    walk = np.divide(adj, deg, out=np.zeros_like(adj), where=deg > 0)

    t = np.arange(steps)[:, None]
    phase = rng.uniform(0, 2 * np.pi, size=nodes)
    amp1 = rng.uniform(0.6, 1.4, size=nodes)
    amp2 = rng.uniform(0.1, 0.5, size=nodes)
    base = (amp1 * np.sin(2 * np.pi * t / period + phase)
            + amp2 * np.sin(4 * np.pi * t / period + 2 * phase))
    week = 1.0 + 0.15 * np.sin(2 * np.pi * t / (7 * period))
    signal = base * week
    for _ in range(hops):
        signal = (1 - diffusion) * signal + diffusion * signal @ walk.T
    signal = signal + noise * rng.standard_normal(signal.shape)
    signal = 3.0 + signal
    return signal[:, :, None], dist


def write_synthetic(out, nodes: int = 64, steps: int = 2000, seed: int = 0, *,
                    interval_minutes: int = 60, binary: bool = True, **kwargs):
    period = kwargs.pop("period", 24 * 60 // interval_minutes)
    signals, dist = synth_signals(nodes, steps, seed, period=period, **kwargs)
    return write_dataset(out, signals, kind="traffic_graph", interval_minutes=interval_minutes,
                         start_timestamp="2018-01-01T00:00:00", distances=dist, binary=binary)


def write_synthetic_grid(out, rows: int = 4, cols: int = 4, steps: int = 400, seed: int = 0,
                         features: int = 2, rate: float = 0.3):
    """Crime-style daily counts on a grid with a spread of per-cell densities."""
    rng = np.random.default_rng(seed)
    n = rows * cols
    base = np.linspace(0.05, 1.0, n)
    rng.shuffle(base)
    t = np.arange(steps)[:, None, None]
    lam = rate * base[None, :, None] * (1.2 + np.sin(2 * np.pi * t / 7.0)) * np.ones((1, 1, features))
    counts = rng.poisson(lam).astype(np.float64)
    return write_dataset(out, counts, kind="crime_grid", interval_minutes=1440,
                         start_timestamp="2014-01-01T00:00:00", grid_shape=(rows, cols))
