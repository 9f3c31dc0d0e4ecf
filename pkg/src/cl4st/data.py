"""Dataset ingestion, normalization, windowing, splitting and corruption.

On-disk layout of a dataset directory::

    meta.json        {"kind", "N" | "I","J", "F", "interval_minutes",
                      "start_timestamp", "neighborhood"}
    signals.csv      rows = time steps, columns = N*F node-major, no header
    signals.bin      (alternative) 3 x uint64 LE header (T, N, F), then
                     float64 LE values row-major (T, N, F)
    distances.csv    traffic only, N x N (``inf`` for unreachable pairs)
"""
from __future__ import annotations

import csv
import datetime as dt
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    FeatureTensor,
    SpatialGraph,
    STGSample,
    TOD_SLOTS,
    ValidationError,
    build_grid_graph,
    build_sensor_graph,
)

KINDS = ("traffic_graph", "crime_grid")
DENSITY_CLASSES = ("0-0.25", "0.25-0.5", "0.5-0.75", "0.75-1.0")
_HEADER = struct.Struct("<3Q")


class DataLoadError(ValueError):
    pass


@dataclass
class DatasetSpec:
    kind: str
    path: str
    interval_minutes: int | None = None
    t_in: int | None = None
    t_out: int | None = None
    split: tuple = (6, 2, 2)
    sigma: float | None = None
    kappa: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        crime = self.kind == "crime_grid"
        if self.t_in is None:
            self.t_in = 30 if crime else 12
        if self.t_out is None:
            self.t_out = 1 if crime else 12
        if crime and tuple(self.split) == (6, 2, 2):
            self.split = (7, 0, 1)
        self.split = tuple(self.split)
        if self.t_in < 1 or self.t_out < 1:
            raise ValidationError("t_in and t_out must be >= 1")


@dataclass(frozen=True)
class TimeIndex:
    tod: np.ndarray
    dow: np.ndarray
    interval_minutes: int


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def invert(self, x):
        return np.asarray(x) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "NormalizationStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass(frozen=True)
class CorruptionMask:
    mask: np.ndarray
    rate: float
    seed: int


# ----------------------------------------------------------------------------- io

def time_index(n_steps: int, interval_minutes: int, start: dt.datetime) -> TimeIndex:
    steps = np.arange(n_steps)
    if interval_minutes >= 24 * 60:
        tod = np.zeros(n_steps, dtype=np.int64)
    else:
        minute_of_day = (start.hour * 60 + start.minute + steps * interval_minutes) % (24 * 60)
        tod = (minute_of_day * TOD_SLOTS // (24 * 60)).astype(np.int64)
    day_offset = (start.hour * 60 + start.minute + steps * interval_minutes) // (24 * 60)
    dow = ((start.weekday() + day_offset) % 7).astype(np.int64)
    return TimeIndex(tod=tod, dow=dow, interval_minutes=interval_minutes)


def read_signals(directory: Path) -> np.ndarray:
    binary = directory / "signals.bin"
    text = directory / "signals.csv"
    if binary.exists():
        raw = binary.read_bytes()
        if len(raw) < _HEADER.size:
            raise DataLoadError(f"{binary}: truncated header")
        T, N, F = _HEADER.unpack_from(raw)
        body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
        if body.size != T * N * F:
            raise DataLoadError(f"{binary}: header declares {T}x{N}x{F} values, found {body.size}")
        if body.size == 0:
            raise DataLoadError(f"{binary}: empty signal file")
        return body.reshape(T, N, F).astype(np.float64)
    if text.exists():
        if text.stat().st_size == 0:
            raise DataLoadError(f"{text}: empty signal file")
        arr = np.loadtxt(text, delimiter=",", ndmin=2)
        if arr.size == 0:
            raise DataLoadError(f"{text}: empty signal file")
        return arr
    raise DataLoadError(f"no signals.csv or signals.bin in {directory}")


def write_signals_bin(path: Path, data: np.ndarray) -> None:
    data = np.ascontiguousarray(data, dtype="<f8")
    T, N, F = data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(T, N, F))
        fh.write(data.tobytes())


def write_signals_csv(path: Path, data: np.ndarray) -> None:
    T, N, F = data.shape
    np.savetxt(path, data.reshape(T, N * F), delimiter=",", fmt="%.17g")


def load_dataset(spec: DatasetSpec):
    """Return ``(FeatureTensor, SpatialGraph, TimeIndex)`` for a dataset directory."""
    root = Path(spec.path)
    if not root.is_dir():
        raise DataLoadError(f"dataset directory not found: {root}")
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise DataLoadError(f"missing {meta_path}")
    meta = json.loads(meta_path.read_text())
    kind = meta.get("kind", spec.kind)
    if kind != spec.kind:
        raise DataLoadError(f"meta.json kind {kind!r} does not match requested {spec.kind!r}")
    F = int(meta["F"])
    if kind == "crime_grid":
        rows, cols = int(meta["I"]), int(meta["J"])
        N = rows * cols
    else:
        N = int(meta["N"])

    raw = read_signals(root)
    if raw.ndim == 2:
        if raw.shape[1] != N * F:
            raise DataLoadError(
                f"signals have {raw.shape[1]} columns, expected N*F = {N}*{F} = {N * F}")
        raw = raw.reshape(raw.shape[0], N, F)
    elif raw.shape[1:] != (N, F):
        raise DataLoadError(f"signals shape {raw.shape[1:]} does not match declared (N, F) = ({N}, {F})")
    if np.isnan(raw).any() or np.isinf(raw).any():
        bad = np.argwhere(~np.isfinite(raw))[:10].tolist()
        raise DataLoadError(f"non-finite signal values at (t, n, f) = {bad}")

    if kind == "crime_grid":
        graph = build_grid_graph(rows, cols, meta.get("neighborhood", "four"))
    else:
        dist_path = root / "distances.csv"
        if not dist_path.exists():
            raise DataLoadError(f"missing {dist_path}")
        dist = np.loadtxt(dist_path, delimiter=",", ndmin=2)
        if dist.shape != (N, N):
            raise DataLoadError(f"distances.csv is {dist.shape}, expected ({N}, {N})")
        graph = build_sensor_graph(dist, spec.sigma, spec.kappa)

    interval = int(spec.interval_minutes or meta["interval_minutes"])
    start = dt.datetime.fromisoformat(meta.get("start_timestamp", "2018-01-01T00:00:00"))
    return FeatureTensor(raw), graph, time_index(raw.shape[0], interval, start)


def write_dataset(out: str | Path, data: np.ndarray, *, kind: str, interval_minutes: int,
                  start_timestamp: str, distances=None, grid_shape=None,
                  neighborhood: str = "four", binary: bool = True) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    T, N, F = data.shape
    meta = {"kind": kind, "F": F, "interval_minutes": interval_minutes,
            "start_timestamp": start_timestamp, "neighborhood": neighborhood}
    if kind == "crime_grid":
        meta["I"], meta["J"] = grid_shape
    else:
        meta["N"] = N
        np.savetxt(out / "distances.csv", np.asarray(distances), delimiter=",", fmt="%.17g")
    (out / "meta.json").write_text(json.dumps(meta, indent=2))
    for stale in ("signals.bin", "signals.csv"):
        (out / stale).unlink(missing_ok=True)
    if binary:
        write_signals_bin(out / "signals.bin", data)
    else:
        write_signals_csv(out / "signals.csv", data)
    return out


def convert_pems(npz_path, distance_csv, out_dir, *, start_timestamp: str,
                 interval_minutes: int = 5, feature: int = 0, binary: bool = True) -> Path:
    """Convert the public PeMS archive layout (``data`` array in an ``.npz`` plus a
    ``from,to,cost`` edge CSV) into the dataset directory format."""
    with np.load(npz_path) as z:
        data = z["data"]
    if data.ndim == 2:
        data = data[:, :, None]
    data = data[:, :, feature:feature + 1].astype(np.float64)
    N = data.shape[1]
    dist = np.full((N, N), np.inf)
    np.fill_diagonal(dist, 0.0)
    with open(distance_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            i, j = int(row["from"]), int(row["to"])
            cost = float(row.get("cost") or row.get("distance"))
            if i != j:
                dist[i, j] = min(dist[i, j], cost)
                dist[j, i] = min(dist[j, i], cost)
    return write_dataset(out_dir, data, kind="traffic_graph", interval_minutes=interval_minutes,
                         start_timestamp=start_timestamp, distances=dist, binary=binary)


# ---------------------------------------------------------------------- transforms

def fit_normalizer(train_slice) -> NormalizationStats:
    arr = train_slice.data if isinstance(train_slice, FeatureTensor) else np.asarray(train_slice)
    if arr.size == 0:
        raise ValidationError("cannot fit a normalizer on an empty slice")
    flat = arr.reshape(-1, arr.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    if np.any(std <= 0):
        bad = np.flatnonzero(std <= 0).tolist()
        raise ValidationError(f"zero-variance feature(s) {bad}")
    return NormalizationStats(mean=mean, std=std)


def n_windows(total: int, t_in: int, t_out: int, stride: int = 1) -> int:
    if total < t_in + t_out:
        return 0
    return (total - t_in - t_out) // stride + 1


def make_windows(data, t_in: int, t_out: int, stride: int = 1,
                 time_idx: TimeIndex | None = None) -> list[STGSample]:
    arr = data.data if isinstance(data, FeatureTensor) else np.asarray(data)
    total = arr.shape[0]
    if stride < 1:
        raise ValidationError("stride must be >= 1")
    if total < t_in + t_out:
        raise ValidationError(f"need at least t_in + t_out = {t_in + t_out} steps, have {total}")
    tod = time_idx.tod if time_idx is not None else np.zeros(total, dtype=np.int64)
    dow = time_idx.dow if time_idx is not None else np.zeros(total, dtype=np.int64)
    out = []
    for k in range(0, total - t_in - t_out + 1, stride):
        out.append(STGSample(x=arr[k:k + t_in], y=arr[k + t_in:k + t_in + t_out],
                             tod_index=tod[k:k + t_in], dow_index=dow[k:k + t_in], start=k))
    return out


def split_dataset(samples: Sequence, kind: str, *, ratio=None, val_windows: int = 30):
    """Chronological split. Traffic: 6:2:2 by window count. Crime: 7:1 train:test
    with the final ``val_windows`` training windows carved out for validation."""
    n = len(samples)
    if kind == "traffic_graph":
        a, b, c = ratio or (6, 2, 2)
        n_train = n * a // (a + b + c)
        n_val = n * b // (a + b + c)
        if min(n_train, n_val, n - n_train - n_val) < 1:
            raise ValidationError(f"{n} windows are too few for a {a}:{b}:{c} split")
        return (samples[:n_train], samples[n_train:n_train + n_val],
                samples[n_train + n_val:])
    if kind == "crime_grid":
        a, _, c = ratio or (7, 0, 1)
        n_train_all = n * a // (a + c)
        if n - n_train_all < 1 or n_train_all - val_windows < 1 or val_windows < 1:
            raise ValidationError(f"{n} windows are too few for a {a}:{c} split with "
                                  f"{val_windows} validation windows")
        cut = n_train_all - val_windows
        return samples[:cut], samples[cut:n_train_all], samples[n_train_all:]
    raise ValidationError(f"unknown kind {kind!r}")


def crime_val_windows(interval_minutes: int, days: int = 30) -> int:
    return max(1, days * 24 * 60 // interval_minutes)


def corrupt_missing(data, rate: float, seed: int):
    if not 0.0 <= rate <= 1.0:
        raise ValidationError(f"missing rate must lie in [0, 1], got {rate}")
    arr = data.data if isinstance(data, FeatureTensor) else np.asarray(data, dtype=np.float64)
    rng = np.random.default_rng(seed)
    mask = rng.random(arr.shape[:2]) < rate
    out = arr.copy()
    out[mask] = 0.0
    return FeatureTensor(out), CorruptionMask(mask=mask, rate=rate, seed=seed)


def density_bins(train_targets) -> np.ndarray:
    """Per-node sparsity class 0..3 for intervals 0-0.25, ..., 0.75-1.0 (right-closed)."""
    arr = train_targets.data if isinstance(train_targets, FeatureTensor) else np.asarray(train_targets)
    if arr.size == 0:
        raise ValidationError("density_bins needs non-empty targets")
    density = np.any(arr != 0, axis=-1).mean(axis=0)
    top = density.max()
    norm = density / top if top > 0 else density
    return np.searchsorted(np.array([0.25, 0.5, 0.75]), norm, side="left").astype(np.int64)
