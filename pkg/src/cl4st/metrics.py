"""Forecast error metrics in original (denormalized) units."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAPE_FLOOR = 1e-4


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    mape_percent: float | None
    per_horizon: dict = field(default_factory=dict)
    per_density_class: dict | None = None

    def to_dict(self) -> dict:
        out = {"mae": self.mae, "rmse": self.rmse, "mape_percent": self.mape_percent,
               "per_horizon": self.per_horizon}
        if self.per_density_class is not None:
            out["per_density_class"] = self.per_density_class
        return out


def _scores(r, y, valid):
    if not valid.any():
        return float("nan"), float("nan"), None
    rv = r[valid]
    mae = float(np.abs(rv).mean())
    rmse = float(np.sqrt(np.square(rv).mean()))
    m = valid & (np.abs(y) > MAPE_FLOOR)
    mape = float(np.abs(r[m] / y[m]).mean() * 100.0) if m.any() else None
    return mae, rmse, mape


def compute_metrics(y, y_hat, mask=None, horizon_axis: int | None = None) -> MetricsReport:
    """MAE, RMSE and MAPE (percent). ``mask`` marks missing ground truth to exclude.

    MAPE skips entries with |y| <= MAPE_FLOOR and is ``None`` if none remain.
    With ``horizon_axis`` set, per-step scores along that axis are included.
    """
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    valid = np.ones(y.shape, dtype=bool) if mask is None else ~np.broadcast_to(mask, y.shape)
    r = y_hat - y
    mae, rmse, mape = _scores(r, y, valid)
    per_h = {}
    if horizon_axis is not None:
        cols = [_scores(np.take(r, k, horizon_axis), np.take(y, k, horizon_axis),
                        np.take(valid, k, horizon_axis)) for k in range(y.shape[horizon_axis])]
        per_h = {"mae": [c[0] for c in cols], "rmse": [c[1] for c in cols],
                 "mape_percent": [c[2] for c in cols]}
    return MetricsReport(mae, rmse, mape, per_h)


def metrics_by_class(y, y_hat, node_classes, labels, node_axis: int = -2) -> dict:
    out = {}
    for c, label in enumerate(labels):
        nodes = np.flatnonzero(node_classes == c)
        if nodes.size == 0:
            out[label] = {"mae": None, "rmse": None, "mape_percent": None, "n_nodes": 0}
            continue
        rep = compute_metrics(np.take(y, nodes, node_axis), np.take(y_hat, nodes, node_axis))
        out[label] = {"mae": rep.mae, "rmse": rep.rmse, "mape_percent": rep.mape_percent,
                      "n_nodes": int(nodes.size)}
    return out


def historical_average(x: np.ndarray, t_out: int) -> np.ndarray:
    """Mean of the input window per node/feature, repeated over the horizon.

    x: (S, T, N, F) -> (S, t_out, N, F).
    """
    mean = x.mean(axis=1, keepdims=True)
    return np.repeat(mean, t_out, axis=1)
