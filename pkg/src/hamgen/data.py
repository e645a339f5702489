"""Flattened trajectory data, datasets, and the ``HAMGEN-DS-1`` file format.

Flattening order of one datum ``x`` (length ``N_x = n_out * K + eta_size``):

* outputs are time-major: ``y(t_1), y(t_2), ..., y(t_K)``, each ``y`` being
  ``(r1, r2, u, p1, p2)`` for the navigation problems or the state ``q`` for LTI;
* the parameter block follows. Zermelo: ``w1`` at the K sample points, then
  ``w2`` at the same points. Min-threat: threat intensity on the
  ``nx x ny`` grid, row-major with the first coordinate varying slowest.
  LTI: empty.
"""
from dataclasses import dataclass, field
import json
import struct

import numpy as np

from .fileio import FormatError, TruncatedFile, VersionMismatch, atomic_write, dump_json, seal, unseal

KINDS = {"zermelo": 1, "minthreat": 2, "lti": 3}
_KIND_NAMES = {v: k for k, v in KINDS.items()}

DS_MAGIC = b"HAMGEN-DS-1\n"
DS_VERSION = 1
_HEADER = struct.Struct("<HBIIQI")


@dataclass(frozen=True)
class Grid:
    """Uniform ``nx x ny`` grid over ``[lo, hi]^2`` carrying threat intensities."""

    nx: int
    ny: int
    lo: float
    hi: float

    @property
    def axes(self):
        return np.linspace(self.lo, self.hi, self.nx), np.linspace(self.lo, self.hi, self.ny)

    def points(self):
        gx, gy = self.axes
        return np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 2)


@dataclass(frozen=True)
class Layout:
    kind: str
    K: int
    n_out: int
    eta_size: int = 0
    grid: Grid = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")

    @classmethod
    def zermelo(cls, K):
        return cls("zermelo", K, 5, 2 * K)

    @classmethod
    def minthreat(cls, K, grid: Grid):
        return cls("minthreat", K, 5, grid.nx * grid.ny, grid)

    @classmethod
    def lti(cls, n, T):
        return cls("lti", T, n, 0)

    @property
    def n_x(self):
        return self.n_out * self.K + self.eta_size

    def outputs(self, X):
        X = np.asarray(X)
        return X[..., : self.n_out * self.K].reshape(X.shape[:-1] + (self.K, self.n_out))

    def out_index(self, channel):
        """Flat indices of one output channel at all K samples."""
        return np.arange(self.K) * self.n_out + channel

    def positions(self, X):
        return self.outputs(X)[..., :2]

    def heading(self, X):
        return self.outputs(X)[..., 2]

    def costates(self, X):
        return self.outputs(X)[..., 3:5]

    def eta(self, X):
        return np.asarray(X)[..., self.n_out * self.K :]

    def wind(self, X):
        """Zermelo only: ``(..., K, 2)`` wind at the trajectory samples."""
        e = self.eta(X)
        return np.stack([e[..., : self.K], e[..., self.K :]], axis=-1)

    def flatten(self, outputs, eta=None):
        outputs = np.asarray(outputs, dtype=np.float64)
        flat = outputs.reshape(outputs.shape[:-2] + (-1,))
        if self.eta_size:
            flat = np.concatenate([flat, np.asarray(eta, dtype=np.float64)], axis=-1)
        return flat

    def to_dict(self):
        d = {"kind": self.kind, "K": self.K, "n_out": self.n_out, "eta_size": self.eta_size}
        if self.grid is not None:
            d["grid"] = [self.grid.nx, self.grid.ny, self.grid.lo, self.grid.hi]
        return d

    @classmethod
    def from_dict(cls, d):
        grid = Grid(*d["grid"]) if d.get("grid") else None
        return cls(d["kind"], d["K"], d["n_out"], d["eta_size"], grid)


@dataclass
class TrajectoryDatum:
    layout: Layout
    x: np.ndarray
    provenance: str = "observed"
    lam: float = float("nan")
    t_final: float = float("nan")

    @property
    def times(self):
        return np.linspace(0.0, self.t_final, self.layout.K)

    @property
    def positions(self):
        return self.layout.positions(self.x)

    @property
    def heading(self):
        return self.layout.heading(self.x)

    @property
    def costates(self):
        return self.layout.costates(self.x)

    @property
    def eta(self):
        return self.layout.eta(self.x)

    @property
    def states(self):
        return self.layout.outputs(self.x)


@dataclass
class Dataset:
    """``N_D x N_x`` matrix plus per-datum tags and free-form metadata."""

    layout: Layout
    X: np.ndarray
    provenance: list = None
    lam: np.ndarray = None
    t_final: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64).reshape(-1, self.layout.n_x)
        n = len(self.X)
        if self.provenance is None:
            self.provenance = ["observed"] * n
        self.provenance = list(self.provenance)
        self.lam = np.full(n, np.nan) if self.lam is None else np.asarray(self.lam, dtype=np.float64)
        self.t_final = np.full(n, np.nan) if self.t_final is None else np.asarray(self.t_final, dtype=np.float64)
        if not (len(self.provenance) == len(self.lam) == len(self.t_final) == n):
            raise ValueError("per-datum tags must match the number of rows")

    def __len__(self):
        return len(self.X)

    def __getitem__(self, i):
        return TrajectoryDatum(self.layout, self.X[i], self.provenance[i], float(self.lam[i]), float(self.t_final[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def kind(self):
        return self.layout.kind

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.layout, self.X[idx], [self.provenance[i] for i in idx],
                       self.lam[idx], self.t_final[idx], dict(self.meta))

    def select(self, provenance=None, lam=None):
        keep = np.ones(len(self), bool)
        if provenance is not None:
            keep &= np.array([p == provenance for p in self.provenance], bool)
        if lam is not None:
            keep &= np.isclose(self.lam, lam)
        return self.subset(np.flatnonzero(keep))

    @staticmethod
    def concat(parts):
        parts = list(parts)
        layout = parts[0].layout
        if any(p.layout != layout for p in parts):
            raise ValueError("cannot concatenate datasets with different layouts")
        meta = dict(parts[0].meta)
        return Dataset(layout, np.concatenate([p.X for p in parts]),
                       sum((p.provenance for p in parts), []),
                       np.concatenate([p.lam for p in parts]),
                       np.concatenate([p.t_final for p in parts]), meta)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.layout == other.layout and self.X.tobytes() == other.X.tobytes()
                and self.provenance == other.provenance
                and self.lam.tobytes() == other.lam.tobytes()
                and self.t_final.tobytes() == other.t_final.tobytes()
                and dump_json(self.meta) == dump_json(other.meta))


def _nan_list(a):
    return [None if np.isnan(v) else float(v) for v in a]


def _from_nan_list(a):
    return np.array([np.nan if v is None else v for v in a], dtype=np.float64)


def encode_dataset(ds: Dataset) -> bytes:
    meta = {
        "layout": ds.layout.to_dict(),
        "provenance": ds.provenance,
        "lam": _nan_list(ds.lam),
        "t_final": _nan_list(ds.t_final),
        "meta": ds.meta,
    }
    blob = dump_json(meta)
    head = DS_MAGIC + _HEADER.pack(DS_VERSION, KINDS[ds.kind], ds.layout.K, ds.layout.n_x, len(ds), len(blob))
    return seal(head + blob + np.ascontiguousarray(ds.X, dtype="<f8").tobytes())


def decode_dataset(blob: bytes) -> Dataset:
    pos = len(DS_MAGIC)
    if len(blob) < pos + _HEADER.size + 4:
        raise TruncatedFile("dataset header truncated")
    if blob.startswith(DS_MAGIC):
        version, kind, K, n_x, n_d, mlen = _HEADER.unpack_from(blob, pos)
        if version != DS_VERSION:
            raise VersionMismatch(f"dataset version {version}, expected {DS_VERSION}")
        expected = pos + _HEADER.size + mlen + 8 * n_d * n_x + 4
        if len(blob) < expected:
            raise TruncatedFile(f"file has {len(blob)} bytes, header promises {expected}")
    payload = unseal(blob, DS_MAGIC)
    version, kind, K, n_x, n_d, mlen = _HEADER.unpack_from(payload, pos)
    pos += _HEADER.size
    meta = json.loads(payload[pos : pos + mlen].decode("utf-8"))
    pos += mlen
    layout = Layout.from_dict(meta["layout"])
    if _KIND_NAMES.get(kind) != layout.kind or layout.K != K or layout.n_x != n_x:
        raise FormatError("header disagrees with embedded layout")
    need = 8 * n_d * n_x
    if len(payload) - pos != need:
        raise TruncatedFile(f"expected {need} bytes of samples, found {len(payload) - pos}")
    X = np.frombuffer(payload, "<f8", n_d * n_x, pos).reshape(n_d, n_x).copy()
    return Dataset(layout, X, meta["provenance"], _from_nan_list(meta["lam"]),
                   _from_nan_list(meta["t_final"]), meta["meta"])


def save_dataset(ds: Dataset, path):
    atomic_write(path, encode_dataset(ds))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        return decode_dataset(fh.read())
