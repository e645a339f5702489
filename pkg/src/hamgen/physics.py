"""Optimality-condition residuals evaluated on flattened data batches.

Everything here reads states, costates and field parameters straight out of
the flat vectors, so it applies equally to synthesized and generated data.
The ``*_sq`` functions return per-datum sums over the K samples together with
their gradient with respect to the flat input, ready to be chained into a
network's backward pass.
"""
import numpy as np
from scipy.interpolate import RectBivariateSpline

from .data import Layout
from .dynamics import NU_MIN


def _zermelo_parts(layout: Layout, X):
    Y = layout.outputs(X)
    w = layout.wind(X)
    return Y[..., 2], Y[..., 3], Y[..., 4], w[..., 0], w[..., 1]


def _scatter(layout: Layout, X, by_channel, d_w1=None, d_w2=None):
    """Assemble a flat gradient from per-channel ``(B, K)`` pieces."""
    G = np.zeros_like(np.asarray(X, dtype=np.float64))
    for ch, g in by_channel.items():
        G[..., layout.out_index(ch)] = g
    off = layout.n_out * layout.K
    if d_w1 is not None:
        G[..., off : off + layout.K] = d_w1
        G[..., off + layout.K : off + 2 * layout.K] = d_w2
    return G


def zermelo_hamiltonian(layout: Layout, X, V):
    """Per-sample Hamiltonian ``(B, K)`` using each datum's own wind block."""
    u, p1, p2, w1, w2 = _zermelo_parts(layout, X)
    return 1.0 + p1 * (V * np.cos(u) + w1) + p2 * (V * np.sin(u) + w2)


def zermelo_hamiltonian_sq(layout: Layout, X, V):
    """``sum_k H_k^2`` per datum and its gradient with respect to ``X``."""
    u, p1, p2, w1, w2 = _zermelo_parts(layout, X)
    c, s = np.cos(u), np.sin(u)
    H = 1.0 + p1 * (V * c + w1) + p2 * (V * s + w2)
    g = 2.0 * H
    grad = _scatter(layout, X, {
        2: g * V * (p2 * c - p1 * s),
        3: g * (V * c + w1),
        4: g * (V * s + w2),
    }, g * p1, g * p2)
    return np.sum(H * H, axis=-1), grad


def heading_residual_sq(layout: Layout, X, literal=False):
    """Residual of ``tan u = p2 / p1`` summed over samples, with gradient.

    The default form ``(sin u p1 - cos u p2)^2`` has the same zero set as the
    quotient form but no poles; ``literal=True`` uses ``(tan u - p2/p1)^2``.
    """
    Y = layout.outputs(X)
    u, p1, p2 = Y[..., 2], Y[..., 3], Y[..., 4]
    c, s = np.cos(u), np.sin(u)
    if literal:
        with np.errstate(divide="ignore", invalid="ignore"):
            e = np.tan(u) - p2 / p1
            gu = 2 * e / (c * c)
            g1 = 2 * e * p2 / (p1 * p1)
            g2 = -2 * e / p1
    else:
        e = s * p1 - c * p2
        gu = 2 * e * (c * p1 + s * p2)
        g1 = 2 * e * s
        g2 = -2 * e * c
    return np.sum(e * e, axis=-1), _scatter(layout, X, {2: gu, 3: g1, 4: g2})


def costate_residual_sq(layout: Layout, X, V):
    """Squared mismatch against the closed-form costates, summed over samples.

    Samples where ``|nu| < 1e-12`` are excluded; returns ``(value, n_excluded)``
    per datum.
    """
    u, p1, p2, w1, w2 = _zermelo_parts(layout, X)
    c, s = np.cos(u), np.sin(u)
    nu = V + w1 * c + w2 * s
    bad = np.abs(nu) < NU_MIN
    safe = np.where(bad, 1.0, nu)
    r = (p1 + c / safe) ** 2 + (p2 + s / safe) ** 2
    return np.sum(np.where(bad, 0.0, r), axis=-1), np.sum(bad, axis=-1)


def zermelo_nu(layout: Layout, X, V):
    u, _, _, w1, w2 = _zermelo_parts(layout, X)
    return V + w1 * np.cos(u) + w2 * np.sin(u)


def threat_at(layout: Layout, X, points=None):
    """Bicubic interpolation of each datum's threat grid.

    ``points`` defaults to the datum's own positions; returns ``(B, K)``.
    """
    X = np.atleast_2d(X)
    gx, gy = layout.grid.axes
    pos = layout.positions(X)
    out = np.empty(pos.shape[:-1])
    for i, x in enumerate(X):
        spl = RectBivariateSpline(gx, gy, layout.eta(x).reshape(layout.grid.nx, layout.grid.ny))
        pts = pos[i] if points is None else points
        out[i] = spl.ev(pts[:, 0], pts[:, 1])
    return out


def minthreat_hamiltonian(layout: Layout, X, V, lam):
    """Per-sample Hamiltonian ``(B, K)``; ``lam`` is scalar or per datum."""
    X = np.atleast_2d(X)
    Y = layout.outputs(X)
    u, p1, p2 = Y[..., 2], Y[..., 3], Y[..., 4]
    c = threat_at(layout, X)
    lam = np.reshape(np.asarray(lam, dtype=np.float64), (-1, 1))
    return c + lam + V * (p1 * np.cos(u) + p2 * np.sin(u))
