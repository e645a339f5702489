"""Trajectory synthesis: RK4, shooting solvers for the two navigation TPBVPs,
noisy LTI rollouts and dataset assembly.

Shooting unknowns are the initial heading ``u0`` and the final time ``t*``.
Time is normalized to ``s in [0, 1]`` so candidates with different ``t*`` are
integrated together in one vectorized RK4 sweep.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
import logging

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize

from .data import Dataset, Grid, Layout
from .dynamics import (
    LtiSystem, ThreatField, WindField, hamiltonian_minthreat, hamiltonian_zermelo,
    minthreat_costates, zermelo_costates,
)
from .nn import make_rng

log = logging.getLogger(__name__)


class NonFiniteState(FloatingPointError):
    def __init__(self, step):
        super().__init__(f"non-finite state at RK4 step {step}")
        self.step = step


class ShootingError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (best endpoint residual {residual:.3e})")
        self.reason = message
        self.residual = residual


def rk4_step(rhs, t, y, h):
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_rk4(rhs, y0, t_span, steps):
    """Classical RK4 on a uniform grid.

    ``rhs(t, y)`` may act on a batch (leading dimensions of ``y0``). Returns
    ``(t, Y)`` with ``Y[k]`` the state at ``t[k]``, ``k = 0..steps``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    t0, t1 = t_span
    h = (t1 - t0) / steps
    y = np.asarray(y0, dtype=np.float64)
    out = np.empty((steps + 1,) + y.shape)
    out[0] = y
    for k in range(steps):
        y = rk4_step(rhs, t0 + k * h, y, h)
        if not np.all(np.isfinite(y)):
            raise NonFiniteState(k + 1)
        out[k + 1] = y
    return t0 + h * np.arange(steps + 1), out


def resample(t, Y, K):
    """Cubic interpolation of a dense trajectory onto K uniform times."""
    tk = np.linspace(t[0], t[-1], K)
    return tk, CubicSpline(t, Y, axis=0)(tk)


@dataclass
class ShootingConfig:
    steps: int = 120
    tol: float = 1e-9
    max_iter: int = 40
    n_starts: int = 8
    heading_spread: float = 1.2
    fd_step: float = 1e-7
    block: int = 64

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.steps < 1 or self.n_starts < 1:
            raise ValueError("steps and n_starts must be >= 1")


@dataclass
class Solution:
    t: np.ndarray
    states: np.ndarray  # (steps + 1, 3): r1, r2, u
    t_final: float
    residual: float
    cost: float


# Row-batched right-hand sides: every row carries its own field parameters so a
# whole block of independent TPBVPs advances in one RK4 sweep. Only elementwise
# operations and fixed-length row reductions are used, which keeps each row's
# result independent of the block it is solved in.

def _zermelo_rows(y, prm, V):
    r1, r2, u = y[:, 0], y[:, 1], y[:, 2]
    j00, j01, j10, j11 = prm[:, 0], prm[:, 1], prm[:, 2], prm[:, 3]
    c, s = np.cos(u), np.sin(u)
    out = np.empty_like(y)
    out[:, 0] = V * c + j00 * r1 + j01 * r2
    out[:, 1] = V * s + j10 * r1 + j11 * r2
    out[:, 2] = j10 * s * s - j01 * c * c + (j00 - j11) * s * c
    return out


def _minthreat_rows(centers, width, V):
    inv2w2 = 1.0 / (2.0 * width * width)

    def rhs(y, prm):
        theta, lam = prm[:, :-1], prm[:, -1]
        dx = y[:, 0:1] - centers[:, 0]
        dy = y[:, 1:2] - centers[:, 1]
        tp = theta * np.exp(-(dx * dx + dy * dy) * inv2w2)
        cval = 1.0 + tp.sum(axis=1)
        gx = -2.0 * inv2w2 * (tp * dx).sum(axis=1)
        gy = -2.0 * inv2w2 * (tp * dy).sum(axis=1)
        c, s = np.cos(y[:, 2]), np.sin(y[:, 2])
        out = np.empty_like(y)
        out[:, 0] = V * c
        out[:, 1] = V * s
        out[:, 2] = V / (cval + lam) * (c * gy - s * gx)
        out[:, 3] = cval + lam
        return out

    return rhs


def _integrate_rows(rhs, y, prm, T, steps):
    h = 1.0 / steps
    f = lambda _, yy: T[:, None] * rhs(yy, prm)
    with np.errstate(all="ignore"):
        for _ in range(steps):
            y = rk4_step(f, 0.0, y, h)
    return y


def _starts(r0, r1, V, cfg):
    d = np.asarray(r1, float) - np.asarray(r0, float)
    dist = float(np.hypot(*d))
    if dist == 0:
        raise ValueError("endpoints must be distinct")
    bearing = float(np.arctan2(d[1], d[0]))
    offs = np.linspace(-cfg.heading_spread, cfg.heading_spread, cfg.n_starts) if cfg.n_starts > 1 else np.zeros(1)
    offs = offs[np.argsort(np.abs(offs), kind="stable")]
    return np.stack([bearing + offs, dist / V / np.maximum(np.cos(offs), 0.5)], axis=1)


def shoot_batch(rhs, prm, r0, r1, V, cfg: ShootingConfig, extra=0):
    """Damped Newton shooting for P problems from ``cfg.n_starts`` starts each.

    ``prm`` is ``(P, n_param)``; the Jacobian of the endpoint map with respect
    to ``(u0, t*)`` comes from forward differences integrated alongside.
    Returns ``(z, res, cost)`` for the best converged start of every problem
    (``res = inf`` where no start converged).
    """
    r0, r1 = np.asarray(r0, float), np.asarray(r1, float)
    P, S = len(prm), cfg.n_starts
    z = np.broadcast_to(_starts(r0, r1, V, cfg), (P, S, 2)).copy()
    eye = np.array([[0.0, 0.0], [cfg.fd_step, 0.0], [0.0, cfg.fd_step]])
    res = np.full((P, S), np.inf)
    active = np.ones((P, S), bool)

    def run(Z, rp):
        y = np.zeros((len(Z), 3 + extra))
        y[:, :2] = r0
        y[:, 2] = Z[:, 0]
        return _integrate_rows(rhs, y, rp, Z[:, 1], cfg.steps)

    for _ in range(cfg.max_iter):
        pi, si = np.nonzero(active)
        if len(pi) == 0:
            break
        za = z[pi, si]
        Z = (za[:, None, :] + eye).reshape(-1, 2)
        F = (run(Z, np.repeat(prm[pi], 3, axis=0))[:, :2] - r1).reshape(-1, 3, 2)
        F0 = F[:, 0]
        r = np.hypot(F0[:, 0], F0[:, 1])
        res[pi, si] = r
        go = np.isfinite(r) & (r >= cfg.tol)
        a = (F[:, 1, 0] - F0[:, 0]) / cfg.fd_step
        b = (F[:, 2, 0] - F0[:, 0]) / cfg.fd_step
        c = (F[:, 1, 1] - F0[:, 1]) / cfg.fd_step
        d = (F[:, 2, 1] - F0[:, 1]) / cfg.fd_step
        with np.errstate(all="ignore"):
            det = a * d - b * c
            step = -np.stack([d * F0[:, 0] - b * F0[:, 1], a * F0[:, 1] - c * F0[:, 0]], axis=1) / det[:, None]
        go &= np.all(np.isfinite(step), axis=1)
        big = np.max(np.abs(step), axis=1)
        scale = np.minimum(1.0, 0.5 / np.maximum(big, 1e-300))
        new = za + scale[:, None] * np.where(go[:, None], step, 0.0)
        new[:, 1] = np.where(new[:, 1] <= 0, 0.5 * za[:, 1], new[:, 1])
        z[pi, si] = np.where(go[:, None], new, za)
        active[pi, si] = go
    conv = res < cfg.tol
    # cost of every converged start: t* for min-time, the running-cost channel otherwise
    if extra:
        cost = np.full((P, S), np.inf)
        pi, si = np.nonzero(conv)
        if len(pi):
            cost[pi, si] = run(z[pi, si], prm[pi])[:, 3]
    else:
        cost = np.where(conv, z[..., 1], np.inf)
    best = np.argmin(cost, axis=1)
    pick = np.arange(P)
    return z[pick, best], np.where(conv.any(axis=1), res[pick, best], res.min(axis=1)), cost[pick, best]


def _dense(rhs, prm, r0, z, steps, extra):
    u0, T = z
    y0 = np.concatenate([np.asarray(r0, float), [u0], np.zeros(extra)])
    t, Y = integrate_rk4(lambda _, yy: T * rhs(yy[None, :], prm[None, :])[0], y0, (0.0, 1.0), steps)
    return T * t, Y


def _solve_single(rhs, prm, r0, r1, V, cfg, extra):
    z, res, cost = shoot_batch(rhs, prm[None, :], r0, r1, V, cfg, extra)
    z, res = z[0], float(res[0])
    if not res < cfg.tol:
        # derivative-free fallback from the best start, then Newton polish
        def endpoint(v):
            y = np.zeros((1, 3 + extra))
            y[0, :2] = r0
            y[0, 2] = v[0]
            return _integrate_rows(rhs, y, prm[None, :], np.array([v[1]]), cfg.steps)[0, :2] - r1

        obj = lambda v: float(np.sum(endpoint(v) ** 2)) if v[1] > 0 else 1e6
        v = minimize(obj, z, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-24, "maxiter": 4000}).x
        for _ in range(cfg.max_iter):
            F0 = endpoint(v)
            if np.linalg.norm(F0) < cfg.tol:
                break
            J = np.column_stack([(endpoint(v + e) - F0) / cfg.fd_step for e in np.eye(2) * cfg.fd_step])
            try:
                v = v - np.linalg.solve(J, F0)
            except np.linalg.LinAlgError:
                break
        res = float(np.linalg.norm(endpoint(v)))
        if not (res < cfg.tol and v[1] > 0):
            raise ShootingError("shooting did not converge", res if np.isfinite(res) else float("inf"))
        z = v
    t, Y = _dense(rhs, prm, r0, z, cfg.steps, extra)
    cost = float(Y[-1, 3]) if extra else float(z[1])
    return Solution(t, Y[:, :3], float(z[1]), float(np.linalg.norm(Y[-1, :2] - r1)), cost)


def solve_zermelo(r0, r1, wind: WindField, V=1.0, cfg: ShootingConfig = None):
    """Minimum-time extremal from ``r0`` to ``r1``; shortest ``t*`` among converged starts."""
    cfg = cfg or ShootingConfig()
    return _solve_single(lambda y, p: _zermelo_rows(y, p, V), wind.jacobian.ravel(), r0, r1, V, cfg, 0)


def solve_minthreat(r0, r1, threat: ThreatField, V=1.0, lam=1.0, cfg: ShootingConfig = None):
    """Minimum-exposure extremal; the lowest-cost converged start is returned."""
    cfg = cfg or ShootingConfig()
    rhs = _minthreat_rows(threat.centers, threat.width, V)
    return _solve_single(rhs, np.append(threat.theta, lam), r0, r1, V, cfg, 1)


def simulate_lti(sys: LtiSystem, q0, T, dt, noise=True, rng=None):
    """RK4 rollout with zero-order-hold uniform noise; returns ``(T, n)`` states.

    Also returns the held noise values (zeros when ``noise`` is off).
    """
    q = np.asarray(q0, dtype=np.float64)
    if q.shape != (sys.n,):
        raise ValueError(f"q0 has shape {q.shape}, expected ({sys.n},)")
    if noise:
        omega = rng.uniform(-sys.noise_bound, sys.noise_bound, size=T - 1)
    else:
        omega = np.zeros(T - 1)
    A, g = sys.A, sys.G[:, 0]
    out = np.empty((T, sys.n))
    out[0] = q
    for k in range(T - 1):
        w = omega[k]
        q = rk4_step(lambda _, y: A @ y + g * w, 0.0, q, dt)
        out[k + 1] = q
    return out, omega


# ---------------------------------------------------------------- dataset assembly


@dataclass
class ZermeloConfig:
    K: int = 25
    V: float = 1.0
    r0: tuple = (0.0, 0.0)
    r1: tuple = (1.0, 0.0)
    a_min: float = 0.1
    a_max: float = 1.0
    a3_max: float = 0.25
    shooting: ShootingConfig = field(default_factory=ShootingConfig)

    kind = "zermelo"

    def layout(self):
        return Layout.zermelo(self.K)


@dataclass
class MinThreatConfig:
    K: int = 25
    V: float = 1.0
    r0: tuple = (0.1, 0.1)
    r1: tuple = (0.9, 0.9)
    lams: tuple = (2.0, 5.0, 10.0)
    provenance: str = "observed"
    rbf_side: int = 4
    rbf_width: float = 0.2
    theta_max: float = 4.0
    field_bounds: tuple = (0.0, 1.0)
    grid_shape: tuple = (42, 46)
    grid_bounds: tuple = (-0.4, 1.4)
    shooting: ShootingConfig = field(default_factory=ShootingConfig)

    kind = "minthreat"

    def grid(self):
        return Grid(self.grid_shape[0], self.grid_shape[1], *self.grid_bounds)

    def layout(self):
        return Layout.minthreat(self.K, self.grid())

    def threat(self, theta):
        return ThreatField.gaussian_grid(theta, self.rbf_side, self.field_bounds, self.rbf_width)


@dataclass
class LtiConfig:
    n: int = 10
    T: int = 1001
    dt: float = 0.01
    noise_bound: float = 20.0
    q0_scale: float = 1.0
    margin: float = 0.05
    system_seed: int = 0
    provenance: str = "observed"

    kind = "lti"

    def layout(self):
        return Layout.lti(self.n, self.T)

    def system(self):
        return LtiSystem.random_hurwitz(self.n, make_rng(self.system_seed, "lti-system"),
                                        self.margin, self.noise_bound)


def config_to_dict(cfg):
    d = asdict(cfg)
    d["kind"] = cfg.kind
    return d


def config_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    cls = {"zermelo": ZermeloConfig, "minthreat": MinThreatConfig, "lti": LtiConfig}[kind]
    if "shooting" in d:
        d["shooting"] = ShootingConfig(**d["shooting"])
    for k, v in d.items():
        if isinstance(v, list):
            d[k] = tuple(v)
    return cls(**d)


def _dense_rows(rhs, prm, r0, z, steps, extra):
    """Dense RK4 trajectories ``(steps + 1, P, 3 + extra)`` for solved ``z = (u0, t*)``."""
    y = np.zeros((len(z), 3 + extra))
    y[:, :2] = r0
    y[:, 2] = z[:, 0]
    T = z[:, 1]
    f = lambda _, yy: T[:, None] * rhs(yy, prm)
    return integrate_rk4(f, y, (0.0, 1.0), steps)[1]


class _Family:
    """Field sampling and datum assembly for one navigation problem kind."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.layout = cfg.layout()
        if cfg.kind == "zermelo":
            self.rhs = lambda y, p: _zermelo_rows(y, p, cfg.V)
            self.extra = 0
        else:
            self.grid_pts = cfg.grid().points()
            t = cfg.threat(np.zeros(cfg.rbf_side**2))
            self.rhs = _minthreat_rows(t.centers, t.width, cfg.V)
            self.extra = 1

    def draw(self, rng, i):
        """Field description (JSON-able list) and the solver parameter row."""
        cfg = self.cfg
        if cfg.kind == "zermelo":
            s = rng.uniform(cfg.a_min, cfg.a_max, 2) * rng.choice([-1.0, 1.0], 2)
            wind = WindField(float(s[0]), float(s[1]), float(rng.uniform(0.0, cfg.a3_max)))
            return [wind.a1, wind.a2, wind.a3], wind.jacobian.ravel()
        theta = rng.uniform(0.0, cfg.theta_max, cfg.rbf_side**2)
        lam = cfg.lams[i % len(cfg.lams)]
        return [float(v) for v in theta], np.append(theta, lam)

    def assemble(self, fld, prm, Yd, T, residual):
        """Resample a dense solution onto K samples and attach costates and eta."""
        cfg = self.cfg
        steps = len(Yd) - 1
        t = T * np.linspace(0.0, 1.0, steps + 1)
        if cfg.kind == "minthreat":
            lo, hi = cfg.grid_bounds
            if np.any(Yd[:, :2] < lo) or np.any(Yd[:, :2] > hi):
                raise ShootingError("trajectory leaves the parameter grid", residual)
        _, Y = resample(t, Yd[:, :3], cfg.K)
        Y[0, :2], Y[-1, :2] = cfg.r0, cfg.r1
        if cfg.kind == "zermelo":
            wind = WindField(*fld)
            w = wind(Y[:, :2])
            p1, p2 = zermelo_costates(Y[:, 2], w[:, 0], w[:, 1], cfg.V)
            H = hamiltonian_zermelo(Y[:, 2], p1, p2, w[:, 0], w[:, 1], cfg.V)
            x = self.layout.flatten(np.column_stack([Y, p1, p2]), np.concatenate([w[:, 0], w[:, 1]]))
            return x, float("nan"), {"field": fld, "residual": residual, "max_abs_H": float(np.max(np.abs(H)))}
        lam = float(prm[-1])
        threat = cfg.threat(np.asarray(fld))
        c = threat(Y[:, :2])
        p1, p2 = minthreat_costates(c, Y[:, 2], cfg.V, lam)
        H = hamiltonian_minthreat(c, Y[:, 2], p1, p2, cfg.V, lam)
        x = self.layout.flatten(np.column_stack([Y, p1, p2]), threat(self.grid_pts))
        return x, lam, {"field": fld, "residual": residual, "max_abs_H": float(np.max(np.abs(H))),
                        "cost": float(Yd[-1, 3])}

    def solve(self, prms):
        """Batch-solve; returns per-problem (ok, z, residual, dense states)."""
        cfg = self.cfg
        prms = np.asarray(prms, float)
        z, res, _ = shoot_batch(self.rhs, prms, cfg.r0, cfg.r1, cfg.V, cfg.shooting, self.extra)
        ok = res < cfg.shooting.tol
        dense = None
        if ok.any():
            try:
                dense = _dense_rows(self.rhs, prms[ok], cfg.r0, z[ok], cfg.shooting.steps, self.extra)
            except NonFiniteState:
                ok[:] = False
        return ok, z, res, dense


def _block(args):
    """Solve a fixed block of data indices, redrawing failed fields per index.

    ``lams`` lists extra weights at which the same field must also solve (paired
    observed/model generation); a draw counts only when every variant succeeds.
    """
    cfg, seed, idx, retries, fixed, lams = args
    fam = _Family(cfg)
    done = {}
    attempt = {i: 0 for i in idx}
    pending = list(idx)
    last = {}
    nv = 1 + len(lams)
    while pending:
        flds, prms = [], []
        for i in pending:
            if fixed is not None:
                f, p = fixed[i]
            else:
                f, p = fam.draw(make_rng(seed, "datum", i, attempt[i]), i)
            flds.append(f)
            prms.append(p)
            prms.extend(np.append(p[:-1], lam) for lam in lams)
        ok, z, res, dense = fam.solve(prms)
        col = np.cumsum(ok) - 1
        nxt = []
        for j, i in enumerate(pending):
            rows = range(j * nv, (j + 1) * nv)
            bad = [r for r in rows if not ok[r]]
            if bad:
                last[i] = ShootingError("shooting did not converge", float(res[bad[0]]))
                nxt.append(i)
                continue
            try:
                done[i] = [fam.assemble(flds[j], prms[r], dense[:, col[r]], z[r, 1], float(res[r]))
                           + (float(z[r, 1]), attempt[i]) for r in rows]
            except (ShootingError, ArithmeticError) as err:
                last[i] = err
                nxt.append(i)
        for i in nxt:
            attempt[i] += 1
            if fixed is not None or attempt[i] >= retries:
                err = last[i]
                raise ShootingError(f"datum {i}: {attempt[i]} attempt(s) failed; last: "
                                    f"{getattr(err, 'reason', err)}", getattr(err, "residual", float("inf")))
        pending = nxt
    return [done[i] for i in idx]


def _run_blocks(cfg, count, seed, jobs, retries, fixed=None, lams=()):
    size = max(1, cfg.shooting.block)
    tasks = [(cfg, seed, list(range(s, min(s + size, count))), retries, fixed, tuple(lams))
             for s in range(0, count, size)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(min(jobs, len(tasks))) as pool:
            parts = list(pool.map(_block, tasks))
    else:
        parts = [_block(t) for t in tasks]
    return [r for p in parts for r in p]


def _stats(results, count):
    infos = [r[2] for r in results]
    attempts = int(sum(r[4] + 1 for r in results))
    return {
        "attempts": attempts,
        "failures": attempts - count,
        "convergence_rate": count / attempts,
        "max_abs_H": max(i["max_abs_H"] for i in infos),
        "mean_abs_H_max": float(np.mean([i["max_abs_H"] for i in infos])),
        "max_endpoint_residual": max(i["residual"] for i in infos),
    }


def _assemble_dataset(cfg, results, seed, provenance):
    count = len(results)
    meta = {"config": config_to_dict(cfg), "seed": int(seed), "V": cfg.V,
            "fields": [r[2]["field"] for r in results], "stats": _stats(results, count)}
    return Dataset(cfg.layout(), np.stack([r[0] for r in results]), [provenance] * count,
                   np.array([r[1] for r in results]), np.array([r[3] for r in results]), meta)


def build_dataset(cfg, count, seed, jobs=1, retries=10):
    """Synthesize ``count`` data reproducibly from ``(cfg, seed)``.

    Each datum draws its field from a stream derived from ``(seed, index,
    attempt)``; data are solved in fixed blocks of ``cfg.shooting.block``
    regardless of ``jobs``, so the output is identical for any worker count.
    Solver stats are recorded in ``meta["stats"]``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if cfg.kind == "lti":
        return _build_lti(cfg, count, seed)
    results = _run_blocks(cfg, count, seed, jobs, retries)
    return _assemble_dataset(cfg, [r[0] for r in results], seed, getattr(cfg, "provenance", "observed"))


def build_paired(cfg, count, seed, lam_model=1.0, jobs=1, retries=10):
    """Observed data plus their model twins on identical fields.

    Min-threat: every field is solved at the observed weight and at
    ``lam_model``; a field is kept only if both solve. LTI: the model twin is a
    noiseless rollout from the same initial state.
    """
    if cfg.kind == "lti":
        obs = _build_lti(cfg, count, seed)
        return obs, model_counterpart(obs)
    if cfg.kind != "minthreat":
        raise ValueError("paired data exist for min-threat and LTI only")
    results = _run_blocks(cfg, count, seed, jobs, retries, lams=(float(lam_model),))
    obs = _assemble_dataset(cfg, [r[0] for r in results], seed, "observed")
    model = _assemble_dataset(cfg, [r[1] for r in results], seed, "model")
    return obs, model


def _build_lti(cfg: LtiConfig, count, seed):
    sys = cfg.system()
    X = np.empty((count, cfg.layout().n_x))
    for i in range(count):
        rng = make_rng(seed, "datum", i, 0)
        q0 = cfg.q0_scale * rng.standard_normal(cfg.n)
        Q, _ = simulate_lti(sys, q0, cfg.T, cfg.dt, noise=cfg.provenance == "observed", rng=rng)
        X[i] = Q.ravel()
    meta = {"config": config_to_dict(cfg), "seed": int(seed), "dt": cfg.dt,
            "A": sys.A.tolist(), "G": sys.G[:, 0].tolist(), "noise_bound": sys.noise_bound}
    return Dataset(cfg.layout(), X, [cfg.provenance] * count, None, np.full(count, cfg.dt * (cfg.T - 1)), meta)


def model_counterpart(ds: Dataset, lam_model=1.0, jobs=1):
    """Noiseless/model twin of an observed dataset.

    Min-threat: each stored threat field is re-solved with ``lam_model``.
    LTI: noiseless rollouts from each datum's first state.
    """
    cfg = config_from_dict(ds.meta["config"])
    if ds.kind == "lti":
        A = np.array(ds.meta["A"])
        sys = LtiSystem(A, np.array(ds.meta["G"]), ds.meta["noise_bound"])
        X = np.empty_like(ds.X)
        for i, q in enumerate(ds.layout.outputs(ds.X)):
            X[i] = simulate_lti(sys, q[0], cfg.T, cfg.dt, noise=False)[0].ravel()
        return Dataset(ds.layout, X, ["model"] * len(ds), None, ds.t_final.copy(), dict(ds.meta))
    if ds.kind != "minthreat":
        raise ValueError("model counterparts exist for min-threat and LTI data only")
    fixed = {i: (list(th), np.append(th, float(lam_model))) for i, th in enumerate(ds.meta["fields"])}
    results = _run_blocks(cfg, len(ds), 0, jobs, 1, fixed)
    return _assemble_dataset(cfg, [r[0] for r in results], ds.meta["seed"], "model")
