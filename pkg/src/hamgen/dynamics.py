"""Fields, state/costate right-hand sides and Hamiltonians.

Three problem families:

* Zermelo minimum-time navigation in a linear wind field,
* minimum threat-exposure navigation in a radial-basis threat field,
* linear time-invariant systems with additive scalar process noise.

Functions broadcast over leading array dimensions; headings are radians and
kept unwrapped.
"""
from dataclasses import dataclass

import numpy as np


class SingularityError(ArithmeticError):
    """Wind cancels the vehicle's own velocity along its heading (nu ~ 0)."""


class DomainError(ValueError):
    pass


NU_MIN = 1e-12


@dataclass(frozen=True)
class WindField:
    """Linear wind ``w(r) = J r`` parameterized by ``(a1, a2, a3)``.

    ``a3`` sets the strongest wind speed over the unit region.
    """

    a1: float
    a2: float
    a3: float

    def __post_init__(self):
        if self.a1 == 0 or self.a2 == 0:
            raise ValueError("a1 and a2 must be non-zero")

    @property
    def jacobian(self):
        """Constant matrix ``J[i, j] = dw_i/dr_j``."""
        a1, a2 = self.a1, self.a2
        k = self.a3 / (a1 * a1 + a2 * a2)
        return k * np.array([[-a1 * a2, a2 * a2], [-a1 * a1, a1 * a2]])

    def __call__(self, r):
        r = np.asarray(r, dtype=np.float64)
        return r @ self.jacobian.T


def zermelo_rhs(state, field: WindField, V):
    """Time derivative of ``(r1, r2, u)`` along a minimum-time extremal."""
    state = np.asarray(state, dtype=np.float64)
    r, u = state[..., :2], state[..., 2]
    w = field(r)
    J = field.jacobian
    c, s = np.cos(u), np.sin(u)
    udot = J[1, 0] * s * s - J[0, 1] * c * c + (J[0, 0] - J[1, 1]) * s * c
    return np.stack([V * c + w[..., 0], V * s + w[..., 1], udot], axis=-1)


def zermelo_nu(u, w1, w2, V):
    return V + w1 * np.cos(u) + w2 * np.sin(u)


def zermelo_costates(u, w1, w2, V):
    """Closed-form costates ``p = -(cos u, sin u) / nu``."""
    nu = zermelo_nu(u, w1, w2, V)
    if np.any(np.abs(nu) < NU_MIN):
        raise SingularityError("|nu| below 1e-12: wind annihilates vehicle velocity")
    return -np.cos(u) / nu, -np.sin(u) / nu


def hamiltonian_zermelo(u, p1, p2, w1, w2, V):
    return 1.0 + p1 * (V * np.cos(u) + w1) + p2 * (V * np.sin(u) + w2)


@dataclass(frozen=True)
class ThreatField:
    """``c(r) = 1 + sum_j theta_j exp(-|r - center_j|^2 / (2 width^2))``.

    Construction checks ``c > 0`` on a validation grid over ``bounds``
    (``(lo, hi)`` applied to both coordinates).
    """

    centers: np.ndarray
    width: float
    theta: np.ndarray
    bounds: tuple = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "centers", np.asarray(self.centers, dtype=np.float64).reshape(-1, 2))
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=np.float64).ravel())
        if self.theta.shape[0] != self.centers.shape[0]:
            raise ValueError("one coefficient per basis center required")
        if self.width <= 0:
            raise ValueError("basis width must be positive")
        g = np.linspace(self.bounds[0], self.bounds[1], 41)
        grid = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
        if np.min(self(grid)) <= 0:
            raise DomainError("threat field is not positive on the workspace")

    @classmethod
    def gaussian_grid(cls, theta, n_side, bounds=(0.0, 1.0), width=None):
        """Isotropic Gaussian basis on an ``n_side x n_side`` uniform grid of centers."""
        g = np.linspace(bounds[0], bounds[1], n_side)
        centers = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
        if width is None:
            width = (bounds[1] - bounds[0]) / max(n_side - 1, 1)
        return cls(centers, width, theta, tuple(bounds))

    def basis(self, r):
        r = np.asarray(r, dtype=np.float64)
        d = r[..., None, :] - self.centers
        return np.exp(-np.sum(d * d, axis=-1) / (2 * self.width**2))

    def __call__(self, r):
        return 1.0 + self.basis(r) @ self.theta

    def gradient(self, r):
        r = np.asarray(r, dtype=np.float64)
        d = r[..., None, :] - self.centers
        phi = np.exp(-np.sum(d * d, axis=-1) / (2 * self.width**2))
        return -np.einsum("...j,...jk,j->...k", phi, d, self.theta) / self.width**2


def minthreat_rhs(state, field: ThreatField, V, lam):
    """Time derivative of ``(r1, r2, u)`` along a minimum-exposure extremal."""
    state = np.asarray(state, dtype=np.float64)
    r, u = state[..., :2], state[..., 2]
    denom = field(r) + lam
    if np.any(denom <= 0):
        raise DomainError("c(r) + lambda must be positive")
    gc = field.gradient(r)
    c, s = np.cos(u), np.sin(u)
    udot = V / denom * (c * gc[..., 1] - s * gc[..., 0])
    return np.stack([V * c, V * s, udot], axis=-1)


def minthreat_costates(cval, u, V, lam):
    """Costates on a minimum-exposure extremal, from stationarity and H = 0."""
    scale = -(cval + lam) / V
    return scale * np.cos(u), scale * np.sin(u)


def hamiltonian_minthreat(cval, u, p1, p2, V, lam):
    return cval + lam + V * (p1 * np.cos(u) + p2 * np.sin(u))


@dataclass(frozen=True)
class LtiSystem:
    """``qdot = A q + G w`` with ``w`` uniform on ``[-noise_bound, noise_bound]``."""

    A: np.ndarray
    G: np.ndarray
    noise_bound: float = 1.0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        G = np.asarray(self.G, dtype=np.float64).reshape(-1, 1)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or G.shape[0] != A.shape[0]:
            raise ValueError(f"incompatible shapes A {A.shape}, G {G.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "G", G)

    @property
    def n(self):
        return self.A.shape[0]

    def spectral_abscissa(self):
        return float(np.max(np.linalg.eigvals(self.A).real))

    @classmethod
    def random_hurwitz(cls, n, rng, margin=0.05, noise_bound=1.0):
        """Gaussian random matrix shifted so its spectral abscissa is ``-margin``."""
        A0 = rng.standard_normal((n, n)) / np.sqrt(n)
        shift = np.max(np.linalg.eigvals(A0).real) + margin
        G = rng.standard_normal((n, 1))
        return cls(A0 - shift * np.eye(n), G, noise_bound)


def lti_rhs(q, sys: LtiSystem, omega=0.0):
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != sys.n:
        raise ValueError(f"state has dimension {q.shape[-1]}, system has {sys.n}")
    return q @ sys.A.T + np.multiply.outer(np.asarray(omega, dtype=np.float64), sys.G[:, 0])
