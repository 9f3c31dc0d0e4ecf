import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cl4st.metrics import compute_metrics, historical_average, metrics_by_class


def loop_metrics(y, y_hat, mask=None):
    """Plain-Python reference."""
    ys, ps = y.ravel().tolist(), y_hat.ravel().tolist()
    ms = [False] * len(ys) if mask is None else mask.ravel().tolist()
    res = [(a, b) for a, b, m in zip(ys, ps, ms) if not m]
    mae = sum(abs(b - a) for a, b in res) / len(res)
    rmse = math.sqrt(sum((b - a) ** 2 for a, b in res) / len(res))
    pct = [abs((b - a) / a) for a, b in res if abs(a) > 1e-4]
    return mae, rmse, (100 * sum(pct) / len(pct) if pct else None)


def test_worked_example():
    # |1-2|/1 = 1 and |2-4|/2 = 1, so MAPE is 100%
    rep = compute_metrics(np.array([1.0, 2.0]), np.array([2.0, 4.0]))
    assert rep.mae == pytest.approx(1.5)
    assert rep.rmse == pytest.approx(math.sqrt(2.5))
    assert rep.mape_percent == pytest.approx(100.0)


def test_perfect_prediction():
    y = np.arange(1.0, 7.0).reshape(2, 3)
    rep = compute_metrics(y, y)
    assert (rep.mae, rep.rmse, rep.mape_percent) == (0.0, 0.0, 0.0)


finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=finite),
       arrays(np.bool_, (3, 4)))
@settings(max_examples=60)
def test_matches_loop_oracle(y, y_hat, mask):
    mask[0, 0] = False
    rep = compute_metrics(y, y_hat, mask)
    mae, rmse, mape = loop_metrics(y, y_hat, mask)
    assert rep.mae == pytest.approx(mae, abs=1e-10)
    assert rep.rmse == pytest.approx(rmse, abs=1e-10)
    assert rep.rmse >= rep.mae - 1e-12
    if mape is None:
        assert rep.mape_percent is None
    else:
        assert rep.mape_percent == pytest.approx(mape, rel=1e-10)


def test_mape_undefined_on_zero_targets():
    rep = compute_metrics(np.zeros(5), np.ones(5))
    assert rep.mape_percent is None
    assert rep.mae == 1.0
    d = rep.to_dict()
    assert d["mape_percent"] is None


def test_mask_excludes_entries():
    y = np.array([1.0, 1.0, 100.0])
    rep = compute_metrics(y, np.array([1.0, 2.0, 0.0]), mask=np.array([False, False, True]))
    assert rep.mae == pytest.approx(0.5)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        compute_metrics(np.zeros(3), np.zeros(4))


def test_per_horizon(rng):
    y, p = rng.normal(size=(5, 3, 2)), rng.normal(size=(5, 3, 2))
    rep = compute_metrics(y, p, horizon_axis=1)
    for k in range(3):
        assert rep.per_horizon["mae"][k] == pytest.approx(np.abs(p[:, k] - y[:, k]).mean())
    assert np.mean(rep.per_horizon["mae"]) == pytest.approx(rep.mae)


def test_metrics_by_class(rng):
    y, p = rng.normal(size=(4, 1, 3, 1)), rng.normal(size=(4, 1, 3, 1))
    out = metrics_by_class(y, p, np.array([0, 0, 2]), ["a", "b", "c"])
    assert out["b"]["n_nodes"] == 0 and out["b"]["mae"] is None
    assert out["c"]["mae"] == pytest.approx(np.abs(p[:, :, 2] - y[:, :, 2]).mean())


def test_historical_average():
    x = np.arange(8.0).reshape(1, 4, 2, 1)
    ha = historical_average(x, 3)
    assert ha.shape == (1, 3, 2, 1)
    assert np.allclose(ha[0, :, 0, 0], 3.0) and np.allclose(ha[0, :, 1, 0], 4.0)
