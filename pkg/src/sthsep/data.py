"""Dataset loading, chronological splitting, normalisation and windowing."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError, SplitError

STD_FLOOR = 1e-12


@dataclass(frozen=True)
class SpatioTemporalDataset:
    values: np.ndarray  # (T, N)
    timestamps: tuple[str, ...]
    node_ids: tuple[str, ...]
    coords: np.ndarray | None = None  # (N, 2)
    distances: np.ndarray | None = None  # (N, N), inf where unknown

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "timestamps", tuple(self.timestamps))
        object.__setattr__(self, "node_ids", tuple(self.node_ids))
        if v.ndim != 2:
            raise DataError(f"values must be 2-D (T, N), got shape {v.shape}")
        T, N = v.shape
        if T < 2 or N < 1:
            raise DataError(f"need T >= 2 and N >= 1, got T={T}, N={N}")
        if len(self.timestamps) != T:
            raise DataError(f"{len(self.timestamps)} timestamps for {T} rows")
        if len(self.node_ids) != N:
            raise DataError(f"{len(self.node_ids)} node ids for {N} columns")
        if self.coords is not None:
            c = np.asarray(self.coords, dtype=np.float64)
            if c.shape != (N, 2):
                raise DataError(f"coords shape {c.shape}, expected {(N, 2)}")
            object.__setattr__(self, "coords", c)
        if self.distances is not None:
            d = np.asarray(self.distances, dtype=np.float64)
            if d.shape != (N, N):
                raise DataError(f"distances shape {d.shape}, expected {(N, N)}")
            if not np.array_equal(d, d.T) or np.any(np.diag(d) != 0):
                raise DataError("distances must be symmetric with zero diagonal")
            object.__setattr__(self, "distances", d)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    def slice_time(self, start: int, stop: int) -> SpatioTemporalDataset:
        return replace(self, values=self.values[start:stop], timestamps=self.timestamps[start:stop])

    def with_values(self, values: np.ndarray) -> SpatioTemporalDataset:
        return replace(self, values=values)


@dataclass(frozen=True)
class WindowSpec:
    L: int
    H: int
    stride: int = 1

    def __post_init__(self):
        if self.L < 1 or self.H < 1 or self.stride < 1:
            raise ConfigError(f"window needs L, H, stride >= 1, got {self}")

    def validate_for(self, T: int) -> None:
        if self.L + self.H > T:
            raise ConfigError(f"L + H = {self.L + self.H} exceeds series length {T}")

    def count(self, T: int) -> int:
        self.validate_for(T)
        return (T - self.L - self.H) // self.stride + 1


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    warnings: list[str] = field(default_factory=list)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        # broadcasts over trailing node axis
        return values * self.std + self.mean


class Window(NamedTuple):
    X: np.ndarray  # (L, N)
    Y: np.ndarray  # (H, N)
    start: int


# ---------------------------------------------------------------- parsing

def _parse_float(text: str, path, line: int, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"cannot parse {what} {text!r} as a number", path, line) from None


def _parse_time(text: str, path, line: int) -> datetime:
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    try:
        return datetime.fromisoformat(s)
    except ValueError:
        raise DataError(f"bad ISO-8601 timestamp {text!r}", path, line) from None


def _read_rows(path) -> list[tuple[int, list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        return [(reader.line_num, row) for row in reader if row and any(c.strip() for c in row)]


def read_values_csv(path) -> tuple[np.ndarray, list[str], list[str]]:
    rows = _read_rows(path)
    if not rows:
        raise DataError("empty values file", path, 1)
    line, header = rows[0]
    if header[0].strip().lower() != "timestamp" or len(header) < 2:
        raise DataError("header must be 'timestamp,<node_id_1>,...'", path, line)
    node_ids = [h.strip() for h in header[1:]]
    if len(set(node_ids)) != len(node_ids):
        raise DataError("duplicate node id in header", path, line)
    width = len(header)
    stamps, values = [], []
    prev = None
    for line, row in rows[1:]:
        if len(row) != width:
            raise DataError(f"ragged row: {len(row)} fields, expected {width}", path, line)
        t = _parse_time(row[0], path, line)
        if prev is not None:
            try:
                increasing = t > prev
            except TypeError:
                raise DataError("mixed timezone-aware and naive timestamps", path, line) from None
            if not increasing:
                raise DataError(f"timestamp {row[0].strip()} not after previous", path, line)
        prev = t
        stamps.append(row[0].strip())
        values.append([_parse_float(c, path, line, "value") for c in row[1:]])
    return np.array(values, dtype=np.float64).reshape(len(values), len(node_ids)), stamps, node_ids


def read_coords_csv(path, node_ids: list[str]) -> np.ndarray:
    rows = _read_rows(path)
    index = {n: i for i, n in enumerate(node_ids)}
    coords = np.full((len(node_ids), 2), np.nan)
    for k, (line, row) in enumerate(rows):
        if k == 0 and row[0].strip().lower() == "node_id":
            continue
        if len(row) != 3:
            raise DataError("coords rows must be node_id,x,y", path, line)
        nid = row[0].strip()
        if nid not in index:
            raise DataError(f"unknown node id {nid!r}", path, line)
        i = index[nid]
        if not np.isnan(coords[i, 0]):
            raise DataError(f"duplicate coords for node {nid!r}", path, line)
        coords[i] = [_parse_float(row[1], path, line, "x"), _parse_float(row[2], path, line, "y")]
    missing = [node_ids[i] for i in np.flatnonzero(np.isnan(coords[:, 0]))]
    if missing:
        raise DataError(f"no coords for nodes {missing}", path)
    return coords


def read_edges_csv(path, node_ids: list[str]) -> np.ndarray:
    """Undirected ``src,dst,dist`` edges to a distance matrix (inf where absent)."""
    rows = _read_rows(path)
    index = {n: i for i, n in enumerate(node_ids)}
    n = len(node_ids)
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0.0)
    seen: dict[tuple[int, int], float] = {}
    for k, (line, row) in enumerate(rows):
        if k == 0 and row[0].strip().lower() == "src":
            continue
        if len(row) != 3:
            raise DataError("edge rows must be src,dst,dist", path, line)
        src, dst = row[0].strip(), row[1].strip()
        for nid in (src, dst):
            if nid not in index:
                raise DataError(f"unknown node id {nid!r}", path, line)
        d = _parse_float(row[2], path, line, "dist")
        if d < 0:
            raise DataError(f"negative distance {d}", path, line)
        i, j = index[src], index[dst]
        if i == j:
            raise DataError(f"self edge on {src!r}", path, line)
        key = (min(i, j), max(i, j))
        if key in seen and seen[key] != d:
            raise DataError(f"conflicting distances for edge {src}-{dst}: {seen[key]} vs {d}", path, line)
        seen[key] = d
        dist[i, j] = dist[j, i] = d
    return dist


def euclidean_distances(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def load_dataset(values_path, coords_path=None, edges_path=None) -> SpatioTemporalDataset:
    """Read the values CSV plus optional coordinates or edge distances.

    Edge distances take precedence over coordinate-derived Euclidean ones.
    """
    values_path = Path(values_path)
    if not values_path.is_file():
        raise DataError("values file not found", values_path)
    values, stamps, node_ids = read_values_csv(values_path)
    coords = read_coords_csv(coords_path, node_ids) if coords_path else None
    if edges_path:
        distances = read_edges_csv(edges_path, node_ids)
    elif coords is not None:
        distances = euclidean_distances(coords)
    else:
        distances = None
    return SpatioTemporalDataset(values, stamps, node_ids, coords, distances)


def load_dataset_dir(path) -> SpatioTemporalDataset:
    """Load ``values.csv`` and, when present, ``coords.csv``/``edges.csv`` from a directory."""
    path = Path(path)
    if path.is_file():
        return load_dataset(path)
    coords = path / "coords.csv"
    edges = path / "edges.csv"
    return load_dataset(
        path / "values.csv",
        coords if coords.is_file() else None,
        edges if edges.is_file() else None,
    )


def write_values_csv(path, ds: SpatioTemporalDataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *ds.node_ids])
        for stamp, row in zip(ds.timestamps, ds.values):
            w.writerow([stamp, *(repr(float(v)) for v in row)])


def write_coords_csv(path, node_ids, coords: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "x", "y"])
        for nid, (x, y) in zip(node_ids, coords):
            w.writerow([nid, repr(float(x)), repr(float(y))])


# ---------------------------------------------------------------- splits

def split_lengths(T: int, ratios=(0.7, 0.1, 0.2)) -> tuple[int, int, int]:
    fr = [Fraction(str(r)) for r in ratios]
    if len(fr) != 3 or any(r < 0 for r in fr) or sum(fr) != 1:
        raise ConfigError(f"split ratios must be three non-negative values summing to 1, got {ratios}")
    n_train = math.floor(fr[0] * T)
    n_val = math.floor(fr[1] * T)
    return n_train, n_val, T - n_train - n_val


def split_dataset(ds: SpatioTemporalDataset, ratios=(0.7, 0.1, 0.2), min_length: int | None = None):
    """Contiguous chronological train/val/test split; remainder goes to test."""
    n_train, n_val, n_test = split_lengths(ds.T, ratios)
    if min_length is not None:
        for name, n in (("train", n_train), ("val", n_val), ("test", n_test)):
            if n < min_length:
                raise SplitError(f"{name} split has {n} steps, fewer than L+H={min_length}")
    return (
        ds.slice_time(0, n_train),
        ds.slice_time(n_train, n_train + n_val),
        ds.slice_time(n_train + n_val, ds.T),
    )


def zscore_normalize(train, val, test):
    """Per-node z-score using train statistics (population std).

    Accepts datasets or raw (T, N) arrays and returns the same kind.
    Nodes whose train std is below ``STD_FLOOR`` get std 1 and a warning.
    """
    def vals(x):
        return x.values if isinstance(x, SpatioTemporalDataset) else np.asarray(x, dtype=np.float64)

    tr = vals(train)
    mu = tr.mean(axis=0)
    sd = tr.std(axis=0)
    notes = []
    for i in np.flatnonzero(sd < STD_FLOOR):
        notes.append(f"node {i} has train std {sd[i]:.3g}; clamped to 1")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    sd = np.where(sd < STD_FLOOR, 1.0, sd)
    stats = NormStats(mu, sd, notes)

    def norm(x):
        z = stats.apply(vals(x))
        return x.with_values(z) if isinstance(x, SpatioTemporalDataset) else z

    return norm(train), norm(val), norm(test), stats


# ---------------------------------------------------------------- windows

def window_arrays(values: np.ndarray, spec: WindowSpec):
    """Stacked windows: X (W, L, N), Y (W, H, N), starts (W,)."""
    values = np.asarray(values, dtype=np.float64)
    count = spec.count(values.shape[0])
    starts = np.arange(count) * spec.stride
    view = np.lib.stride_tricks.sliding_window_view(values, spec.L + spec.H, axis=0)
    # view: (T-L-H+1, N, L+H)
    chunks = np.moveaxis(view[starts], -1, 1)
    return chunks[:, :spec.L].copy(), chunks[:, spec.L:].copy(), starts


def make_windows(ds, spec: WindowSpec) -> list[Window]:
    values = ds.values if isinstance(ds, SpatioTemporalDataset) else ds
    X, Y, starts = window_arrays(values, spec)
    return [Window(x, y, int(s)) for x, y, s in zip(X, Y, starts)]
