"""Performance indices and distribution diagnostics for trajectory datasets.

All functions take whole datasets (or raw ``(N, N_x)`` arrays) and return
per-datum arrays; :func:`evaluate` rolls them up into an :class:`EvalReport`.
"""
from dataclasses import asdict, dataclass, field
import csv
import logging
import warnings

import numpy as np

from .data import Dataset
from .fileio import atomic_write, dump_json
from .physics import (
    costate_residual_sq, heading_residual_sq, minthreat_hamiltonian, zermelo_hamiltonian_sq,
)

log = logging.getLogger(__name__)


class RankWarning(UserWarning):
    pass


@dataclass
class DeltaIndices:
    delta1: np.ndarray
    delta2: np.ndarray = None  # Zermelo only
    delta3: np.ndarray = None  # Zermelo only
    excluded: np.ndarray = None  # samples dropped from delta3 because |nu| was ~0


def delta_indices(ds: Dataset, V, lam=None, literal=False) -> DeltaIndices:
    """Squared optimality residuals per datum.

    For min-threat data ``lam`` overrides the per-datum weights stored in the
    dataset; one of the two must be available.
    """
    X = ds.X
    if ds.kind == "zermelo":
        d1, _ = zermelo_hamiltonian_sq(ds.layout, X, V)
        d2, _ = heading_residual_sq(ds.layout, X, literal=literal)
        d3, bad = costate_residual_sq(ds.layout, X, V)
        if bad.any():
            log.warning("%d samples with |nu| < 1e-12 left out of delta3", int(bad.sum()))
        return DeltaIndices(d1, d2, d3, bad)
    if ds.kind == "minthreat":
        lam = ds.lam if lam is None else np.broadcast_to(np.asarray(lam, dtype=np.float64), (len(ds),))
        if np.isnan(lam).any():
            raise ValueError("min-threat delta1 needs a lambda for every datum")
        if len(ds) == 0:
            return DeltaIndices(np.zeros(0))
        H = minthreat_hamiltonian(ds.layout, X, V, lam)
        return DeltaIndices(np.sum(H * H, axis=-1))
    raise ValueError(f"delta indices are not defined for {ds.kind!r} data")


def total_variance(positions):
    """Polyline length minus endpoint chord for ``(..., K, 2)`` positions."""
    r = np.asarray(positions, dtype=np.float64)
    if r.shape[-2] < 2:
        raise ValueError("total variance needs at least two samples")
    steps = np.linalg.norm(np.diff(r, axis=-2), axis=-1).sum(axis=-1)
    chord = np.linalg.norm(r[..., -1, :] - r[..., 0, :], axis=-1)
    return steps - chord


def ndrr(q, A, dt, eps=1e-12):
    """Dynamics residual ratio ``||qdot - A q||^2 / ||qdot||^2`` in percent.

    ``q`` has shape ``(..., T, n)``; derivatives use second-order differences.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-2] < 3:
        raise ValueError("NDRR needs at least three time samples")
    qd = np.gradient(q, dt, axis=-2, edge_order=2)
    res = qd - q @ np.asarray(A).T
    num = np.sum(res * res, axis=(-2, -1))
    den = np.sum(qd * qd, axis=(-2, -1))
    if np.any(den <= eps * max(1.0, float(np.max(num, initial=0.0)))):
        raise ValueError("state derivative is numerically zero; NDRR is undefined")
    return 100.0 * num / den


def ndrr_dataset(ds: Dataset, A=None, dt=None):
    A = np.array(ds.meta["A"]) if A is None else A
    dt = ds.meta["dt"] if dt is None else dt
    return ndrr(ds.layout.outputs(ds.X), A, dt)


@dataclass
class PcaBasis:
    mean: np.ndarray
    components: np.ndarray  # (n_pc, N_x)
    variances: np.ndarray

    def project(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components.T


def fit_pca(X, n_pc=3, rtol=1e-10):
    """Top principal axes of ``X``; drops directions with negligible variance."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) < 2:
        raise ValueError("PCA needs at least two rows")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    var = s * s / (len(X) - 1)
    keep = var > rtol * max(var[0], np.finfo(float).tiny) if len(var) else var > 0
    n = min(n_pc, int(keep.sum()))
    if n < n_pc:
        warnings.warn(f"reference covariance has rank {n}; reporting {n} components", RankWarning)
    # Fix the sign so that the largest-magnitude loading is positive.
    comps = vt[:n]
    flip = np.sign(comps[np.arange(n), np.argmax(np.abs(comps), axis=1)])
    return PcaBasis(mean, comps * flip[:, None], var[:n])


def moments(P):
    """Column mean, variance, skewness and raw kurtosis of projected data."""
    P = np.asarray(P, dtype=np.float64)
    mu = P.mean(axis=0)
    c = P - mu
    var = np.mean(c * c, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        skew = np.mean(c ** 3, axis=0) / var ** 1.5
        kurt = np.mean(c ** 4, axis=0) / var ** 2
    return {"mean": mu, "variance": var, "skewness": skew, "kurtosis": kurt}


def pc_moments(reference, candidate, n_pc=3):
    """Moments of both sets projected on the reference's principal axes."""
    R = reference.X if isinstance(reference, Dataset) else np.asarray(reference)
    C = candidate.X if isinstance(candidate, Dataset) else np.asarray(candidate)
    if R.shape[1] != C.shape[1]:
        raise ValueError("reference and candidate have different N_x")
    if len(R) < 4:
        raise ValueError("reference needs at least four rows")
    basis = fit_pca(R, n_pc)
    return {"reference": moments(basis.project(R)), "candidate": moments(basis.project(C))}


def _mean_pairwise(P):
    n = len(P)
    if n < 2:
        raise ValueError("dispersion needs at least two rows")
    gram = P @ P.T
    sq = np.diag(gram)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * gram, 0.0)
    return float(np.sqrt(d2).sum() / (n * (n - 1)))


def dispersion_score(data, reference=None, n_pc=3, max_rows=2000, seed=0):
    """Mean pairwise distance in the top PC projection.

    With a reference the projection uses the reference's axes and the result is
    divided by the reference's own value, so ~1 means matching spread and
    values near 0 indicate collapse. Large sets are subsampled to ``max_rows``.
    """
    X = data.X if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    R = X if reference is None else (reference.X if isinstance(reference, Dataset) else np.asarray(reference))
    rng = np.random.default_rng(seed)

    def sub(M):
        return M if len(M) <= max_rows else M[rng.choice(len(M), max_rows, replace=False)]

    X, R = sub(X), sub(R)
    if np.ptp(R, axis=0).max(initial=0.0) == 0.0:
        return 0.0 if reference is None else float("nan")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankWarning)
        basis = fit_pca(R, n_pc)
    value = _mean_pairwise(basis.project(X))
    if reference is None:
        return value
    return value / _mean_pairwise(basis.project(R))


def _summary(a):
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return {"mean": None, "std": None, "min": None, "max": None, "count": 0}
    return {"mean": float(a.mean()), "std": float(a.std()), "min": float(a.min()),
            "max": float(a.max()), "count": int(a.size)}


def _tolist(d):
    return {k: (_tolist(v) if isinstance(v, dict) else np.asarray(v).tolist()) for k, v in d.items()}


@dataclass
class EvalReport:
    kind: str
    count: int
    indices: dict = field(default_factory=dict)  # name -> per-datum array
    summary: dict = field(default_factory=dict)  # name -> mean/std/min/max
    pc_moments: dict = None
    dispersion: float = None
    excluded_samples: int = 0

    def to_dict(self):
        d = asdict(self)
        d["indices"] = {k: np.asarray(v).tolist() for k, v in self.indices.items()}
        if self.pc_moments is not None:
            d["pc_moments"] = _tolist(self.pc_moments)
        return d

    def save(self, path):
        atomic_write(path, dump_json(self.to_dict()))


def evaluate(ds: Dataset, V=None, reference: Dataset = None, lam=None, literal=False) -> EvalReport:
    """Every index that applies to ``ds``; moments and dispersion need ``reference``."""
    V = ds.meta.get("V", 1.0) if V is None else V
    rep = EvalReport(ds.kind, len(ds))
    if ds.kind in ("zermelo", "minthreat"):
        if ds.kind == "minthreat" and lam is None and np.isnan(ds.lam).any():
            log.warning("no lambda for generated min-threat data; skipping delta1")
        else:
            di = delta_indices(ds, V, lam, literal)
            rep.indices["delta1"] = di.delta1
            if di.delta2 is not None:
                rep.indices["delta2"] = di.delta2
                rep.indices["delta3"] = di.delta3
                rep.excluded_samples = int(di.excluded.sum())
        rep.indices["total_variance"] = total_variance(ds.layout.positions(ds.X))
    elif ds.kind == "lti":
        src = reference if (reference is not None and "A" not in ds.meta) else ds
        rep.indices["ndrr"] = ndrr(ds.layout.outputs(ds.X), np.array(src.meta["A"]), src.meta["dt"])
    rep.summary = {k: _summary(v) for k, v in rep.indices.items()}
    if reference is not None:
        rep.pc_moments = pc_moments(reference, ds)
        rep.dispersion = dispersion_score(ds, reference)
    return rep


def write_scatter(path, sets, n_pc=3):
    """PC scatter CSV (label, PC1..PC3) on the axes of the first set."""
    labels = list(sets)
    basis = fit_pca(sets[labels[0]].X, n_pc)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", *(f"PC{i + 1}" for i in range(len(basis.components)))])
        for label in labels:
            for row in basis.project(sets[label].X):
                w.writerow([label, *(repr(float(v)) for v in row)])
