import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cl4st.core import (
    FeatureTensor,
    ModelConfig,
    SpatialGraph,
    STGSample,
    ValidationError,
    build_grid_graph,
    build_sensor_graph,
    build_temporal_graph,
)


def test_sensor_graph_zero_distance_weight_one():
    dist = np.array([[0.0, 0.0], [0.0, 0.0]])
    # zero off-diagonal distance -> weight exp(0) = 1
    g = build_sensor_graph(dist, sigma=3.0, kappa=0.5)
    assert g.adjacency[0, 1] == 1.0


def test_sensor_graph_kappa_one_keeps_only_zero_distance():
    dist = np.array([[0, 1.0, 2.0], [1.0, 0, 0.5], [2.0, 0.5, 0]])
    g = build_sensor_graph(dist, sigma=1.0, kappa=1.0)
    assert g.edge_list.shape == (0, 2)


def test_sensor_graph_three_nodes_hand_values():
    dist = np.array([[0, 1.0, 2.0], [1.0, 0, 3.0], [2.0, 3.0, 0]])
    g = build_sensor_graph(dist, sigma=1.0, kappa=0.1)
    assert g.adjacency[0, 1] == pytest.approx(math.exp(-1.0))
    assert g.adjacency[0, 1] == pytest.approx(0.3679, abs=1e-4)
    assert g.adjacency[0, 2] == 0.0 and g.adjacency[1, 2] == 0.0
    assert g.edge_list.tolist() == [[0, 1], [1, 0]]


def test_sensor_graph_default_sigma_is_offdiag_std():
    dist = np.array([[0, 1.0, 2.0], [1.0, 0, 3.0], [2.0, 3.0, 0]])
    sigma = np.std([1.0, 2.0, 1.0, 3.0, 2.0, 3.0])
    g = build_sensor_graph(dist)
    assert g.adjacency[0, 1] == pytest.approx(math.exp(-1.0 / sigma**2))


def test_sensor_graph_infinite_distance_is_no_edge():
    dist = np.array([[0, np.inf], [np.inf, 0]])
    assert build_sensor_graph(dist, sigma=1.0).edge_list.shape == (0, 2)


@pytest.mark.parametrize("dist", [
    np.array([[0, 1.0], [2.0, 0]]),
    np.array([[0, -1.0], [-1.0, 0]]),
    np.array([[1.0, 1.0], [1.0, 0]]),
])
def test_sensor_graph_rejects_bad_distances(dist):
    with pytest.raises(ValidationError):
        build_sensor_graph(dist, sigma=1.0)


@st.composite
def distance_matrices(draw):
    n = draw(st.integers(2, 7))
    upper = draw(arrays(np.float64, (n, n), elements=st.floats(0.01, 10.0)))
    d = np.triu(upper, 1)
    return d + d.T


@given(distance_matrices(), st.floats(0.1, 5.0), st.floats(0.0, 0.9))
@settings(max_examples=50, deadline=None)
def test_sensor_graph_symmetric_and_idempotent(dist, sigma, kappa):
    g = build_sensor_graph(dist, sigma=sigma, kappa=kappa)
    assert np.array_equal(g.adjacency, g.adjacency.T)
    rethresholded = np.where(g.adjacency >= kappa, g.adjacency, 0.0)
    assert np.array_equal(rethresholded, g.adjacency)
    assert len(g.edge_list) == np.count_nonzero(g.adjacency)


def test_grid_graph_examples():
    assert build_grid_graph(1, 1).edge_list.shape == (0, 2)
    g = build_grid_graph(2, 2, "four")
    assert g.adjacency.sum(1).tolist() == [2, 2, 2, 2]
    assert len(g.edge_list) // 2 == 4
    center = 1 * 3 + 1
    assert build_grid_graph(3, 3, "eight").adjacency[center].sum() == 8


@given(st.integers(2, 8), st.integers(2, 8))
def test_grid_degree_bounds(rows, cols):
    four = build_grid_graph(rows, cols, "four").adjacency.sum(1)
    eight = build_grid_graph(rows, cols, "eight").adjacency.sum(1)
    assert four.min() >= 2 and four.max() <= 4
    assert eight.min() >= 3 and eight.max() <= 8


def test_grid_rejects_unknown_neighborhood():
    with pytest.raises(ValidationError):
        build_grid_graph(2, 2, "hex")


@pytest.mark.parametrize("T", [1, 3, 12])
def test_temporal_graph_all_ones(T):
    g = build_temporal_graph(T)
    assert np.array_equal(g.adjacency, np.ones((T, T)))
    assert np.all(g.adjacency.sum(1) == T)
    assert len(g.edge_list) == T * (T - 1)


def test_spatial_graph_rejects_self_loops():
    with pytest.raises(ValidationError):
        SpatialGraph(np.eye(2))


def test_feature_tensor_rejects_nan():
    data = np.zeros((2, 2, 1))
    data[1, 0, 0] = np.nan
    with pytest.raises(ValidationError, match=r"\[1, 0, 0\]"):
        FeatureTensor(data)


@given(arrays(np.float64, (4, 3, 2), elements=st.floats(-1e6, 1e6)),
       st.integers(0, 287), st.integers(0, 6))
def test_sample_roundtrip_bit_exact(y, tod, dow):
    x = y[::-1].copy()
    s = STGSample(x=x, y=y, tod_index=np.full(4, tod), dow_index=np.full(4, dow), start=5)
    back = STGSample.from_bytes(s.to_bytes())
    assert back.x.tobytes() == x.tobytes() and back.y.tobytes() == y.tobytes()
    assert np.array_equal(back.tod_index, s.tod_index) and back.start == 5


def test_sample_rejects_bad_tod():
    with pytest.raises(ValidationError):
        STGSample(x=np.zeros((2, 1, 1)), y=np.zeros((1, 1, 1)),
                  tod_index=np.array([0, 288]), dow_index=np.zeros(2))


def test_model_config_head_divisibility():
    with pytest.raises(ValidationError):
        ModelConfig(d_s=10, K_spatial=4)
    with pytest.raises(ValidationError):
        ModelConfig(d=0)
