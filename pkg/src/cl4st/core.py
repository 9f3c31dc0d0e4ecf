"""Domain types and graph construction shared across the package."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

TOD_SLOTS = 288
DOW_SLOTS = 7


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureTensor:
    """Dense STG signal of shape (T, N, F)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValidationError(f"expected a (T, N, F) array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            bad = np.argwhere(~np.isfinite(data))[:5]
            raise ValidationError(f"non-finite entries at (t, n, f) = {bad.tolist()}")
        object.__setattr__(self, "data", data)

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def N(self) -> int:
        return self.data.shape[1]

    @property
    def F(self) -> int:
        return self.data.shape[2]


def _offdiag_structure(adjacency: np.ndarray) -> np.ndarray:
    s = (adjacency > 0).astype(np.float64)
    np.fill_diagonal(s, 0.0)
    return s


@dataclass(frozen=True)
class SpatialGraph:
    """Weighted N x N graph. Self-loops are never stored."""

    adjacency: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=np.float64)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValidationError(f"adjacency must be square, got {adj.shape}")
        if np.any(adj < 0) or not np.all(np.isfinite(adj)):
            raise ValidationError("adjacency entries must be finite and non-negative")
        if np.any(np.diag(adj) != 0):
            raise ValidationError("self-loops must not be stored in the adjacency")
        object.__setattr__(self, "adjacency", adj)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @cached_property
    def edge_list(self) -> np.ndarray:
        """(E, 2) array of (i, j) with adjacency[i, j] > 0, in row-major order."""
        return np.argwhere(self.adjacency > 0).astype(np.int64).reshape(-1, 2)

    def structure(self) -> np.ndarray:
        return _offdiag_structure(self.adjacency)


@dataclass(frozen=True)
class TemporalGraph:
    """T x T graph between time steps; all-ones by default."""

    adjacency: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=np.float64)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValidationError(f"adjacency must be square, got {adj.shape}")
        if not np.all((adj == 0) | (adj == 1)):
            raise ValidationError("temporal adjacency must be binary")
        object.__setattr__(self, "adjacency", adj)

    @property
    def n_steps(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.n_steps

    @cached_property
    def edge_list(self) -> np.ndarray:
        # the diagonal is implied by attention over N(i) + {i}, so it is not an edge
        return np.argwhere(_offdiag_structure(self.adjacency) > 0).astype(np.int64).reshape(-1, 2)

    def structure(self) -> np.ndarray:
        return _offdiag_structure(self.adjacency)


@dataclass(frozen=True)
class STGSample:
    """One forecasting window: x precedes y in source time order."""

    x: np.ndarray
    y: np.ndarray
    tod_index: np.ndarray
    dow_index: np.ndarray
    start: int = 0

    def __post_init__(self):
        tod = np.asarray(self.tod_index, dtype=np.int64)
        dow = np.asarray(self.dow_index, dtype=np.int64)
        if self.x.ndim != 3 or self.y.ndim != 3:
            raise ValidationError("x and y must be (T, N, F) arrays")
        if tod.shape != (self.x.shape[0],) or dow.shape != (self.x.shape[0],):
            raise ValidationError("tod/dow indices need one entry per input step")
        if np.any((tod < 0) | (tod >= TOD_SLOTS)) or np.any((dow < 0) | (dow >= DOW_SLOTS)):
            raise ValidationError("tod/dow index out of range")
        object.__setattr__(self, "tod_index", tod)
        object.__setattr__(self, "dow_index", dow)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        np.savez(buf, x=self.x, y=self.y, tod=self.tod_index, dow=self.dow_index,
                 start=np.int64(self.start))
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, payload: bytes) -> "STGSample":
        with np.load(io.BytesIO(payload)) as z:
            return cls(x=z["x"], y=z["y"], tod_index=z["tod"], dow_index=z["dow"],
                       start=int(z["start"]))


@dataclass
class ModelConfig:
    d: int = 64
    d_s: int = 64
    d_t: int = 128
    d_z: int = 16
    D: int = 16
    K_spatial: int = 4
    K_temporal: int = 1
    n_gat_layers: int = 2
    gin_eps1: float = 0.0
    gin_eps2: float = 0.0
    gin_d1: int = 8
    gin_hidden: int = 16
    phi_hidden: int = 64
    psi_hidden: int = 32
    decoder_hidden: int = 64
    proj_dim: int = 64
    gumbel_tau: float = 1.0
    gumbel_anneal: float = 1.0
    gumbel_tau_min: float = 0.1
    hard_views: bool = True
    share_edge_latent: bool = True
    meta_node: bool = True
    meta_edge: bool = True
    use_gcl: bool = True
    final_merge: str = "concat"
    tod_position: str = "last"
    dropout: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("d", "d_s", "d_t", "d_z", "D", "K_spatial", "K_temporal",
                     "n_gat_layers", "gin_d1", "gin_hidden", "phi_hidden", "psi_hidden",
                     "decoder_hidden", "proj_dim"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.d_s % self.K_spatial:
            raise ValidationError("d_s must be divisible by K_spatial")
        if self.d_t % self.K_temporal:
            raise ValidationError("d_t must be divisible by K_temporal")
        if self.gumbel_tau <= 0:
            raise ValidationError("gumbel_tau must be positive")
        if self.final_merge not in ("concat", "mean"):
            raise ValidationError("final_merge must be 'concat' or 'mean'")
        if self.tod_position not in ("first", "last"):
            raise ValidationError("tod_position must be 'first' or 'last'")


def build_sensor_graph(pairwise_distances, sigma: float | None = None,
                       kappa: float = 0.1) -> SpatialGraph:
    """Thresholded Gaussian kernel over road-network distances.

    Infinite distances (unreachable pairs) map to weight 0. When ``sigma`` is
    omitted it is the standard deviation of the finite off-diagonal distances.
    """
    dist = np.asarray(pairwise_distances, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ValidationError("distance matrix must be square")
    if np.any(np.isnan(dist)) or np.any(dist < 0):
        raise ValidationError("distances must be non-negative")
    if not np.array_equal(dist, dist.T):
        raise ValidationError("distance matrix must be symmetric")
    if np.any(np.diag(dist) != 0):
        raise ValidationError("distance matrix must have a zero diagonal")
    if kappa < 0:
        raise ValidationError("kappa must be >= 0")
    n = dist.shape[0]
    if sigma is None:
        off = dist[~np.eye(n, dtype=bool)]
        off = off[np.isfinite(off)]
        sigma = float(off.std()) if off.size else 1.0
        if sigma == 0:
            sigma = 1.0
    if sigma <= 0:
        raise ValidationError("sigma must be positive")
    with np.errstate(over="ignore"):
        w = np.exp(-np.square(dist) / sigma**2)
    w[w < kappa] = 0.0
    np.fill_diagonal(w, 0.0)
    return SpatialGraph(w)


def build_grid_graph(rows: int, cols: int, neighborhood: str = "four") -> SpatialGraph:
    if rows < 1 or cols < 1:
        raise ValidationError("grid needs at least one row and one column")
    if neighborhood == "four":
        offsets = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    elif neighborhood == "eight":
        offsets = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]
    else:
        raise ValidationError(f"unknown neighborhood {neighborhood!r}")
    n = rows * cols
    adj = np.zeros((n, n))
    for r in range(rows):
        for c in range(cols):
            for dr, dc in offsets:
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    adj[r * cols + c, rr * cols + cc] = 1.0
    return SpatialGraph(adj)


def build_temporal_graph(T: int) -> TemporalGraph:
    if T < 1:
        raise ValidationError("T must be >= 1")
    return TemporalGraph(np.ones((T, T)))
