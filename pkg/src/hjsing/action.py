"""Fundamental solution A_t(x, y): action minimization, derivatives and probes.

The pipeline has two stages.  A direct method minimizes the trapezoidal
action of a piecewise-linear path over its interior nodes by damped Newton
with the exact block-tridiagonal Hessian, from several seeds.  The best
discrete path then seeds a shooting method: Hamilton's equations are
integrated with fixed-step RK4 (plus variational equations) and Newton
adjusts the initial covector until the endpoint matches.
"""

from __future__ import annotations

import contextlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cholesky_banded, cho_solve_banded

from .errors import BlowUp, NoConvergence
from .models import LagrangianModel, velocity_bound_kappa

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ActionOptions:
    """Solver controls for :func:`minimize_action`.

    Attributes:
        nodes: Number of time intervals; ``None`` means ``max(32, ceil(64 t))``.
        starts: Multi-start count (straight segment plus bump perturbations).
        seed: Seed for the bump perturbations.
        direct_tol: Stopping tolerance on the Newton step of the direct method.
        direct_max_iter: Newton iteration cap per seed.
        shoot_tol: Terminal mismatch tolerance of the shooting refinement.
        shoot_max_iter: Newton iteration cap for shooting.
        radius: ``R`` in the trust region ``kappa(R/t)``; defaults to ``|y - x|``.
    """

    nodes: int | None = None
    starts: int = 5
    seed: int = 0
    direct_tol: float = 1e-9
    direct_max_iter: int = 60
    shoot_tol: float = 1e-10
    shoot_max_iter: int = 40
    radius: float | None = None


def node_count(t: float, opts: ActionOptions | None = None) -> int:
    if opts is not None and opts.nodes is not None:
        return int(opts.nodes)
    return max(32, int(math.ceil(64.0 * t)))


@dataclass
class Trajectory:
    """Minimizing curve sampled at ``nodes``; ``p`` is the dual arc ``L_v``."""

    t: float
    nodes: np.ndarray
    xi: np.ndarray
    xi_dot: np.ndarray
    p: np.ndarray
    energy: np.ndarray

    @property
    def max_speed(self) -> float:
        return float(np.max(np.linalg.norm(self.xi_dot, axis=1)))

    @property
    def energy_variation(self) -> float:
        e0 = self.energy[0]
        return float(np.max(np.abs(self.energy - e0)) / (1.0 + abs(e0)))

    def el_residual(self, model: LagrangianModel) -> float:
        """Max over interior nodes of ``|d/ds L_v - L_x|`` by central differences."""
        if len(self.nodes) < 3:
            return 0.0
        h = np.diff(self.nodes)
        dp = (self.p[2:] - self.p[:-2]) / (h[1:] + h[:-1])[:, None]
        lx = model.L_x(self.xi[1:-1], self.xi_dot[1:-1])
        return float(np.max(np.linalg.norm(dp - lx, axis=1)))

    def to_rows(self) -> list[list[float]]:
        rows = []
        for i in range(len(self.nodes)):
            rows.append(
                [float(self.nodes[i])]
                + [float(v) for v in self.xi[i]]
                + [float(v) for v in self.xi_dot[i]]
                + [float(v) for v in self.p[i]]
                + [float(self.energy[i])]
            )
        return rows

    def csv_header(self) -> list[str]:
        n = self.xi.shape[1]
        return (
            ["s"]
            + [f"xi{i + 1}" for i in range(n)]
            + [f"xi_dot{i + 1}" for i in range(n)]
            + [f"p{i + 1}" for i in range(n)]
            + ["E"]
        )


@dataclass
class FundamentalSolution:
    """Value and derivatives of ``A_t(x, y)``.

    ``hess_yy`` and ``hess_xx`` are the second derivatives in ``y`` and ``x``
    obtained from the variational equations of the Hamiltonian flow.
    """

    value: float
    grad_y: np.ndarray
    grad_x: np.ndarray
    dt: float
    energy: float
    minimizer: Trajectory
    multiplicity_hint: int
    hess_yy: np.ndarray
    hess_xx: np.ndarray
    x: np.ndarray
    y: np.ndarray
    t: float


# ---------------------------------------------------------------------------
# Minimizer log used to audit the a-priori velocity bound


_MINIMIZER_LOGS: list[list] = []


@dataclass
class MinimizerRecord:
    """A batch of computed minimizers: endpoints, durations and max node speeds."""

    model: LagrangianModel
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    speed: np.ndarray


@contextlib.contextmanager
def minimizer_log():
    """Collect a :class:`MinimizerRecord` for every minimizer computed inside the block.

    Not thread-safe; intended for audits in tests.
    """
    log: list[MinimizerRecord] = []
    _MINIMIZER_LOGS.append(log)
    try:
        yield log
    finally:
        _MINIMIZER_LOGS.remove(log)


def _record(model: LagrangianModel, x: np.ndarray, y: np.ndarray, t, speed) -> None:
    if not _MINIMIZER_LOGS:
        return
    x = np.atleast_2d(np.array(x, dtype=float))
    y = np.atleast_2d(np.array(y, dtype=float))
    if len(x) == 0:
        return
    t = np.broadcast_to(np.asarray(t, dtype=float), (len(x),)).copy()
    speed = np.broadcast_to(np.asarray(speed, dtype=float), (len(x),)).copy()
    rec = MinimizerRecord(model, x, y, t, speed)
    for log in _MINIMIZER_LOGS:
        log.append(rec)


@dataclass
class VelocityAudit:
    """Outcome of checking ``max speed <= kappa(|y - x|/t)`` over a log."""

    checked: int
    violations: list[dict]

    @property
    def passed(self) -> bool:
        return not self.violations


def audit_velocity_bound(log: list[MinimizerRecord], grid_ratio: float = 1.02) -> VelocityAudit:
    """Check every logged minimizer against the a-priori velocity bound.

    ``kappa`` is nondecreasing, so each ratio ``r = |y - x|/t`` is first
    compared with ``kappa`` at the nearest geometric grid point below ``r``;
    only entries failing that sufficient test are checked at ``r`` exactly.
    """
    checked = 0
    violations: list[dict] = []
    by_model: dict[int, list[MinimizerRecord]] = {}
    for rec in log:
        by_model.setdefault(id(rec.model), []).append(rec)
    for recs in by_model.values():
        model = recs[0].model
        r = np.concatenate([np.linalg.norm(q.y - q.x, axis=1) / q.t for q in recs])
        sp = np.concatenate([q.speed for q in recs])
        checked += len(r)
        r_floor = np.where(r > 1e-12, r, 1e-12)
        k = np.floor(np.log(r_floor) / np.log(grid_ratio))
        keys = np.unique(k)
        table = {kk: velocity_bound_kappa(model, float(grid_ratio**kk)) for kk in keys}
        bound = np.array([table[kk] for kk in k])
        bound = np.where(r > 1e-12, bound, velocity_bound_kappa(model, 1e-12))
        for i in np.nonzero(sp > bound)[0]:
            exact = velocity_bound_kappa(model, float(max(r[i], 1e-12)))
            if sp[i] > exact:
                violations.append({"model": model.name, "ratio": float(r[i]), "speed": float(sp[i]), "kappa": exact})
    return VelocityAudit(checked, violations)


# ---------------------------------------------------------------------------
# Hamiltonian flow with variational equations


@dataclass
class FlowResult:
    xi: np.ndarray  # (B, n) terminal position
    p: np.ndarray  # (B, n) terminal covector
    action: np.ndarray  # (B,)
    phi: np.ndarray | None  # (B, 2n, k) terminal variational matrix
    max_speed: np.ndarray  # (B,)
    path_xi: np.ndarray | None = None  # (m+1, B, n)
    path_p: np.ndarray | None = None


def hamiltonian_flow(
    model: LagrangianModel,
    x0: np.ndarray,
    p0: np.ndarray,
    t: np.ndarray | float,
    steps: int,
    variational: str = "p",
    store: bool = False,
) -> FlowResult:
    """Integrate Hamilton's equations with fixed-step RK4.

    Args:
        x0, p0: Initial data of shape ``(B, n)``.
        t: Duration, scalar or per-item ``(B,)``.
        steps: Number of RK4 steps.
        variational: ``"none"``, ``"p"`` (columns for ``p0`` only) or
            ``"full"`` (columns for ``x0`` then ``p0``).
        store: Keep the full node history.
    """
    ham = model.hamiltonian
    n = model.dim
    x = np.array(x0, dtype=float)
    p = np.array(p0, dtype=float)
    B = x.shape[0]
    h = (np.broadcast_to(np.asarray(t, dtype=float), (B,)) / steps)[:, None]
    a = np.zeros(B)
    if variational == "full":
        phi = np.broadcast_to(np.eye(2 * n), (B, 2 * n, 2 * n)).copy()
    elif variational == "p":
        phi = np.zeros((B, 2 * n, n))
        phi[:, n:, :] = np.eye(n)
    else:
        phi = None

    def rhs(xx, pp, ph):
        if ham.potential is not None:
            V, dV, d2V = ham.potential
            da = 0.5 * np.einsum("bi,bi->b", pp, pp) - V(xx)
            dph = None
            if ph is not None:
                dph = np.concatenate([ph[:, n:], -d2V(xx) @ ph[:, :n]], axis=1)
            return pp, -dV(xx), da, dph
        H, H_x, H_p, H_xx, H_xp, H_pp = ham.jet(xx, pp)
        da = np.einsum("bi,bi->b", pp, H_p) - H
        dph = None
        if ph is not None:
            top = np.swapaxes(H_xp, 1, 2) @ ph[:, :n] + H_pp @ ph[:, n:]
            bot = -H_xx @ ph[:, :n] - H_xp @ ph[:, n:]
            dph = np.concatenate([top, bot], axis=1)
        return H_p, -H_x, da, dph

    path_x = [x.copy()] if store else None
    path_p = [p.copy()] if store else None
    speed = np.zeros(B)
    for _ in range(steps):
        k1 = rhs(x, p, phi)
        speed = np.maximum(speed, np.linalg.norm(k1[0], axis=1))
        k2 = rhs(x + 0.5 * h * k1[0], p + 0.5 * h * k1[1], None if phi is None else phi + 0.5 * h[:, :, None] * k1[3])
        k3 = rhs(x + 0.5 * h * k2[0], p + 0.5 * h * k2[1], None if phi is None else phi + 0.5 * h[:, :, None] * k2[3])
        k4 = rhs(x + h * k3[0], p + h * k3[1], None if phi is None else phi + h[:, :, None] * k3[3])
        x = x + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        p = p + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        a = a + h[:, 0] / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if phi is not None:
            phi = phi + h[:, :, None] / 6.0 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        if store:
            path_x.append(x.copy())
            path_p.append(p.copy())
    speed = np.maximum(speed, np.linalg.norm(ham.H_p(x, p), axis=1))
    return FlowResult(
        xi=x,
        p=p,
        action=a,
        phi=phi,
        max_speed=speed,
        path_xi=np.array(path_x) if store else None,
        path_p=np.array(path_p) if store else None,
    )


def shoot(
    model: LagrangianModel,
    x: np.ndarray,
    y: np.ndarray,
    t: np.ndarray | float,
    p0: np.ndarray,
    steps: int,
    tol: float = 1e-10,
    max_iter: int = 40,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched Newton shooting on the initial covector.

    Returns ``(p0, mismatch, converged)``; the mismatch is the terminal
    position error relative to ``1 + |y - x|``.  Newton keeps iterating past
    ``tol`` towards round-off so that endpoints are matched tightly.
    """
    n = model.dim
    B = len(x)
    p0 = np.array(p0, dtype=float)
    tb = np.broadcast_to(np.asarray(t, dtype=float), (B,))
    scale = 1.0 + np.linalg.norm(y - x, axis=1)
    flow = hamiltonian_flow(model, x, p0, tb, steps, variational="p")
    r = flow.xi - y
    res = np.linalg.norm(r, axis=1) / scale
    J = flow.phi[:, :n, :].copy()
    target = min(tol, 1e-13)
    stalled = np.zeros(B, dtype=bool)
    for _ in range(max_iter):
        active = np.nonzero((res > target) & ~stalled)[0]
        if active.size == 0:
            break
        try:
            dp = -np.linalg.solve(J[active], r[active][..., None])[..., 0]
        except LinAlgError:
            dp = np.stack([-np.linalg.lstsq(J[i], r[i], rcond=None)[0] for i in active])
        alpha = np.ones(len(active))
        pending = np.arange(len(active))
        for _ls in range(12):
            idx = active[pending]
            trial = p0[idx] + alpha[pending, None] * dp[pending]
            f = hamiltonian_flow(model, x[idx], trial, tb[idx], steps, variational="p")
            rr = f.xi - y[idx]
            rn = np.linalg.norm(rr, axis=1) / scale[idx]
            better = np.isfinite(rn) & (rn < res[idx])
            acc = idx[better]
            p0[acc] = trial[better]
            r[acc] = rr[better]
            res[acc] = rn[better]
            J[acc] = f.phi[better, :n, :]
            pending = pending[~better]
            if pending.size == 0:
                break
            alpha[pending] *= 0.5
        stalled[active[pending]] = True
    return p0, res, res <= tol


# ---------------------------------------------------------------------------
# Direct method


def _discrete_action_parts(model: LagrangianModel, xi: np.ndarray, h: float):
    """Action, gradient and block Hessian of the trapezoidal discretization.

    ``xi`` has shape ``(m+1, n)``.  Returns ``(S, grad (m+1, n), diag
    (m+1, n, n), off (m, n, n))`` where ``off[k]`` couples nodes ``k`` and
    ``k+1``.
    """
    a, b = xi[:-1], xi[1:]
    v = (b - a) / h
    La, Lb = model.L(a, v), model.L(b, v)
    S = 0.5 * h * float(np.sum(La + Lb))
    Lx_a, Lx_b = model.L_x(a, v), model.L_x(b, v)
    Lv_a, Lv_b = model.L_v(a, v), model.L_v(b, v)
    P = Lv_a + Lv_b
    ga = 0.5 * h * Lx_a - 0.5 * P
    gb = 0.5 * h * Lx_b + 0.5 * P
    grad = np.zeros_like(xi)
    grad[:-1] += ga
    grad[1:] += gb
    Lxx_a, Lxx_b = model.L_xx(a, v), model.L_xx(b, v)
    Lxv_a, Lxv_b = model.L_xv(a, v), model.L_xv(b, v)
    Vsum = (model.L_vv(a, v) + model.L_vv(b, v)) / (2.0 * h)
    Haa = 0.5 * h * Lxx_a - 0.5 * (Lxv_a + np.swapaxes(Lxv_a, 1, 2)) + Vsum
    Hbb = 0.5 * h * Lxx_b + 0.5 * (Lxv_b + np.swapaxes(Lxv_b, 1, 2)) + Vsum
    Hab = 0.5 * Lxv_a - 0.5 * np.swapaxes(Lxv_b, 1, 2) - Vsum
    diag = np.zeros(xi.shape + (xi.shape[1],))
    diag[:-1] += Haa
    diag[1:] += Hbb
    return S, grad, diag, Hab


def _banded_upper(diag: np.ndarray, off: np.ndarray) -> np.ndarray:
    """Upper banded storage of the symmetric block-tridiagonal matrix."""
    m, n, _ = diag.shape
    bw = 2 * n - 1
    ab = np.zeros((bw + 1, m * n))
    base = np.arange(m) * n
    for i in range(n):
        for j in range(n):
            if j >= i:
                ab[bw + i - j, base + j] = diag[:, i, j]
            if m > 1:
                # off[k] couples block row k with block column k + 1
                ab[bw + i - (n + j), base[:-1] + n + j] = off[:, i, j]
    return ab


def _straight(x: np.ndarray, y: np.ndarray, m: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, m + 1)[:, None]
    return (1.0 - s) * x + s * y


def _seeds(x: np.ndarray, y: np.ndarray, t: float, m: int, opts: ActionOptions) -> list[np.ndarray]:
    base = _straight(x, y, m)
    seeds = [base]
    rng = np.random.default_rng(opts.seed)
    s = np.linspace(0.0, 1.0, m + 1)
    scale = 0.2 * max(float(np.linalg.norm(y - x)), 0.1 * t)
    for _ in range(max(0, opts.starts - 1)):
        # sin^2 bumps vanish with their derivative at both ends (C^1)
        freq = rng.integers(1, 3)
        bump = np.sin(np.pi * freq * s) ** 2
        direction = rng.normal(size=x.shape)
        direction /= max(np.linalg.norm(direction), 1e-300)
        seeds.append(base + scale * bump[:, None] * direction[None, :])
    return seeds


@dataclass
class _DirectResult:
    xi: np.ndarray
    action: float
    p0: np.ndarray
    converged: bool
    blew_up: bool
    local_min: bool


def _direct_newton(
    model: LagrangianModel,
    xi: np.ndarray,
    h: float,
    x: np.ndarray,
    trust: float,
    opts: ActionOptions,
) -> _DirectResult:
    n = model.dim
    xi = xi.copy()
    scale = 1.0 + float(np.linalg.norm(xi[-1] - xi[0]))
    S, grad, diag, off = _discrete_action_parts(model, xi, h)
    converged = False
    local_min = False
    for _ in range(opts.direct_max_iter):
        g = grad[1:-1].reshape(-1)
        mu = 0.0
        step = None
        for _shift in range(30):
            d = diag[1:-1].copy()
            if mu > 0:
                d += mu * np.eye(n)
            ab = _banded_upper(d, off[1:-1])
            try:
                c = cholesky_banded(ab, lower=False)
                step = -cho_solve_banded((c, False), g)
                local_min = mu == 0.0
                break
            except LinAlgError:
                mu = max(2.0 * mu, 1e-6 * (1.0 + float(np.max(np.abs(d)))))
        if step is None:
            break
        step = step.reshape(-1, n)
        slope = float(g @ step.reshape(-1))
        alpha = 1.0
        accepted = False
        outside = True
        for _ls in range(40):
            trial = xi.copy()
            trial[1:-1] += alpha * step
            if np.max(np.linalg.norm(trial - x, axis=1)) <= trust:
                outside = False
                S1, g1, d1, o1 = _discrete_action_parts(model, trial, h)
                if S1 <= S + 1e-4 * alpha * slope + 1e-14 * abs(S):
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            if outside:
                return _DirectResult(xi, S, np.zeros(n), False, True, False)
            break
        xi, S, grad, diag, off = trial, S1, g1, d1, o1
        if alpha * float(np.max(np.abs(step))) <= opts.direct_tol * scale:
            converged = True
            break
    # discrete Legendre transform at the initial node
    v0 = (xi[1] - xi[0]) / h
    p0 = 0.5 * (model.L_v(xi[0], v0) + model.L_v(xi[1], v0)) - 0.5 * h * model.L_x(xi[0], v0)
    gnorm = float(np.max(np.abs(grad[1:-1]))) if len(xi) > 2 else 0.0
    converged = converged or gnorm <= 1e-10 * h * scale
    return _DirectResult(xi, S, p0, converged, False, local_min)


def _trust_radius(model: LagrangianModel, x: np.ndarray, y: np.ndarray, t: float, opts: ActionOptions) -> float:
    R = opts.radius if opts.radius is not None else float(np.linalg.norm(y - x))
    r = max(R / t, 1e-9)
    kappa = velocity_bound_kappa(model, r)
    return kappa * max(2.0 * t, 1.0)


def _direct_stage(
    model: LagrangianModel, x: np.ndarray, y: np.ndarray, t: float, opts: ActionOptions
) -> tuple[list[_DirectResult], int]:
    m = node_count(t, opts)
    h = t / m
    trust = _trust_radius(model, x, y, t, opts)
    results = []
    for seed in _seeds(x, y, t, m, opts):
        results.append(_direct_newton(model, seed, h, x, trust, opts))
    return results, m


def _select(results: list[_DirectResult], x: np.ndarray, y: np.ndarray) -> tuple[_DirectResult, int]:
    """Pick the lowest action (lexicographic covector tie-break) and count distinct minima."""
    good = [r for r in results if not r.blew_up and np.all(np.isfinite(r.xi))]
    if not good:
        raise BlowUp("every multi-start seed left the a-priori trust region")
    scale = 1.0 + float(np.linalg.norm(y - x))

    def key(r: _DirectResult):
        return (round(r.action / (1e-10 * (1.0 + abs(r.action))), 0), tuple(np.round(r.p0, 10)))

    best = min(good, key=key)
    distinct: list[np.ndarray] = []
    for r in good:
        if not (r.converged and r.local_min):
            continue
        if all(np.max(np.abs(r.xi - d)) > 1e-4 * scale for d in distinct):
            distinct.append(r.xi)
    return best, max(1, len(distinct))


# ---------------------------------------------------------------------------
# Public API


def _refine(
    model: LagrangianModel,
    x: np.ndarray,
    y: np.ndarray,
    t: float,
    p0_guess: np.ndarray,
    m: int,
    opts: ActionOptions,
):
    p0, res, ok = shoot(
        model, x[None], y[None], t, p0_guess[None], m, tol=opts.shoot_tol, max_iter=opts.shoot_max_iter
    )
    return p0[0], float(res[0]), bool(ok[0])


def _trajectory(model: LagrangianModel, x: np.ndarray, y: np.ndarray, t: float, p0: np.ndarray, m: int):
    flow = hamiltonian_flow(model, x[None], p0[None], t, m, variational="full", store=True)
    xi = flow.path_xi[:, 0, :]
    p = flow.path_p[:, 0, :]
    ham = model.hamiltonian
    H, _, H_p, _, _, _ = ham.jet(xi, p)
    xi = xi.copy()
    xi[-1] = y
    traj = Trajectory(t=t, nodes=np.linspace(0.0, t, m + 1), xi=xi, xi_dot=H_p, p=p, energy=H)
    return traj, flow


def _second_derivatives(phi: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    pxx, pxp = phi[:n, :n], phi[:n, n:]
    ppx, ppp = phi[n:, :n], phi[n:, n:]
    inv = np.linalg.inv(pxp)
    hess_yy = ppp @ inv
    hess_xx = inv @ pxx
    return 0.5 * (hess_yy + hess_yy.T), 0.5 * (hess_xx + hess_xx.T)


def minimize_action(model: LagrangianModel, x, y, t: float, opts: ActionOptions | None = None) -> Trajectory:
    """Minimizing trajectory from ``x`` to ``y`` in time ``t``."""
    return fundamental_solution(model, x, y, t, opts).minimizer


def fundamental_solution(
    model: LagrangianModel, x, y, t: float, opts: ActionOptions | None = None
) -> FundamentalSolution:
    """Compute ``A_t(x, y)`` with its first and second derivatives.

    Raises:
        BlowUp: every seed left the a-priori trust region.
        NoConvergence: shooting could not match the endpoint.
    """
    opts = opts or ActionOptions()
    if t <= 0:
        raise ValueError("t must be positive")
    n = model.dim
    x = np.asarray(x, dtype=float).reshape(n)
    y = np.asarray(y, dtype=float).reshape(n)
    results, m = _direct_stage(model, x, y, t, opts)
    best, multiplicity = _select(results, x, y)
    p0, res, ok = _refine(model, x, y, t, best.p0, m, opts)
    if not ok:
        # the straight-line covector is a second chance for smooth problems
        v = (y - x) / t
        alt = model.L_v(x, v)
        p0b, resb, okb = _refine(model, x, y, t, alt, m, opts)
        if okb or resb < res:
            p0, res, ok = p0b, resb, okb
    if not ok:
        raise NoConvergence(f"shooting mismatch {res:.3e} for x={x}, y={y}, t={t}", residual=res)
    traj, flow = _trajectory(model, x, y, t, p0, m)
    hess_yy, hess_xx = _second_derivatives(flow.phi[0], n)
    e = float(traj.energy[0])
    _record(model, x, y, t, traj.max_speed)
    return FundamentalSolution(
        value=float(flow.action[0]),
        grad_y=traj.p[-1].copy(),
        grad_x=-traj.p[0].copy(),
        dt=-e,
        energy=e,
        minimizer=traj,
        multiplicity_hint=multiplicity,
        hess_yy=hess_yy,
        hess_xx=hess_xx,
        x=x,
        y=y,
        t=float(t),
    )


@dataclass
class BatchSolution:
    """Vectorized fundamental-solution data for ``B`` endpoint problems."""

    value: np.ndarray
    grad_y: np.ndarray
    grad_x: np.ndarray
    energy: np.ndarray
    hess_yy: np.ndarray | None
    hess_xx: np.ndarray | None
    multiplicity: np.ndarray
    max_speed: np.ndarray


def fundamental_solution_batch(
    model: LagrangianModel,
    X,
    Y,
    t,
    hessians: bool = False,
    opts: ActionOptions | None = None,
    p0: np.ndarray | None = None,
) -> BatchSolution:
    """Shooting-only fundamental solution for many pairs at once.

    Starts from the straight-line covector ``L_v(x, (y - x)/t)``, which is
    reliable in the small-time regime.  Problems whose shooting fails are
    recomputed one by one with the full multi-start pipeline.
    """
    opts = opts or ActionOptions()
    n = model.dim
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    X, Y = np.broadcast_arrays(X, Y)
    X = np.ascontiguousarray(X)
    Y = np.ascontiguousarray(Y)
    B = len(X)
    T = np.broadcast_to(np.asarray(t, dtype=float), (B,)).copy()
    m = node_count(float(np.max(T)), opts)
    if p0 is None:
        p0 = model.L_v(X, (Y - X) / T[:, None])
    p0, res, ok = shoot(model, X, Y, T, p0, m, tol=opts.shoot_tol, max_iter=opts.shoot_max_iter)
    flow = hamiltonian_flow(model, X, p0, T, m, variational="full" if hessians else "none")
    value = flow.action.copy()
    grad_y = flow.p.copy()
    grad_x = -p0.copy()
    energy = model.hamiltonian.H(X, p0)
    speed = flow.max_speed.copy()
    mult = np.ones(B, dtype=int)
    hyy = hxx = None
    if hessians:
        pxx, pxp = flow.phi[:, :n, :n], flow.phi[:, :n, n:]
        ppp = flow.phi[:, n:, n:]
        inv = np.linalg.inv(pxp)
        hyy = ppp @ inv
        hxx = inv @ pxx
        hyy = 0.5 * (hyy + np.swapaxes(hyy, 1, 2))
        hxx = 0.5 * (hxx + np.swapaxes(hxx, 1, 2))
    for i in np.nonzero(~ok)[0]:
        fs = fundamental_solution(model, X[i], Y[i], float(T[i]), opts)
        value[i] = fs.value
        grad_y[i] = fs.grad_y
        grad_x[i] = fs.grad_x
        energy[i] = fs.energy
        speed[i] = fs.minimizer.max_speed
        mult[i] = fs.multiplicity_hint
        if hessians:
            hyy[i] = fs.hess_yy
            hxx[i] = fs.hess_xx
    good = np.nonzero(ok)[0]
    _record(model, X[good], Y[good], T[good], speed[good])
    return BatchSolution(value, grad_y, grad_x, energy, hyy, hxx, mult, speed)


# ---------------------------------------------------------------------------
# Regularity probes


@dataclass
class RegularityProbeReport:
    """Sampled estimate of a regularity constant of ``A_t``."""

    constant_estimate: float
    samples: list[dict]
    worst_ratio: float
    verdict: bool
    flagged: int = 0
    kind: str = ""

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "constant_estimate": self.constant_estimate,
            "worst_ratio": self.worst_ratio,
            "verdict": "pass" if self.verdict else "fail",
            "flagged": self.flagged,
            "samples": self.samples,
        }


def _ball(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    d = rng.normal(size=n)
    d /= np.linalg.norm(d)
    return d * radius * rng.uniform() ** (1.0 / n)


def _evaluate(model, X, Y, T, solver: str, opts: ActionOptions | None):
    """Values and multiplicity hints for lists of problems."""
    if solver == "shooting":
        b = fundamental_solution_batch(model, X, Y, T, opts=opts)
        return b.value, b.multiplicity
    vals = np.empty(len(X))
    mult = np.empty(len(X), dtype=int)
    for i in range(len(X)):
        fs = fundamental_solution(model, X[i], Y[i], float(T[i]), opts)
        vals[i] = fs.value
        mult[i] = fs.multiplicity_hint
    return vals, mult


def probe_convexity(
    model: LagrangianModel,
    x,
    t: float,
    lam: float,
    sample_count: int = 64,
    seed: int = 0,
    solver: str = "full",
    opts: ActionOptions | None = None,
) -> RegularityProbeReport:
    """Estimate the uniform convexity constant of ``A_t(x, .)`` on ``B(x, lam t)``.

    Reports the infimum over samples of ``excess * t / |z|^2`` where
    ``excess = A_t(x, y+z) + A_t(x, y-z) - 2 A_t(x, y)``.  Offsets shorter
    than ``0.05 lam t`` are resampled to limit cancellation.
    """
    n = model.dim
    x = np.asarray(x, dtype=float).reshape(n)
    rng = np.random.default_rng(seed)
    r = lam * t
    ys, zs = [], []
    while len(ys) < sample_count:
        y = x + _ball(rng, n, r)
        z = _ball(rng, n, r)
        if np.linalg.norm(z) < 0.05 * r:
            continue
        if np.linalg.norm(y + z - x) > r or np.linalg.norm(y - z - x) > r:
            continue
        ys.append(y)
        zs.append(z)
    ys = np.array(ys)
    zs = np.array(zs)
    X = np.repeat(x[None], 3 * sample_count, axis=0)
    Y = np.concatenate([ys + zs, ys - zs, ys])
    vals, mult = _evaluate(model, X, Y, np.full(len(X), t), solver, opts)
    k = sample_count
    excess = vals[:k] + vals[k : 2 * k] - 2.0 * vals[2 * k :]
    ratio = excess * t / np.sum(zs * zs, axis=1)
    flags = (mult[:k] > 1) | (mult[k : 2 * k] > 1) | (mult[2 * k :] > 1)
    samples = [
        {"y": ys[i].tolist(), "z": zs[i].tolist(), "excess": float(excess[i]), "ratio": float(ratio[i]), "flagged": bool(flags[i])}
        for i in range(k)
    ]
    use = ratio[~flags] if np.any(~flags) else ratio
    est = float(np.min(use))
    return RegularityProbeReport(
        constant_estimate=est,
        samples=samples,
        worst_ratio=est,
        verdict=bool(est > 0),
        flagged=int(np.sum(flags)),
        kind="convexity",
    )


def probe_semiconcavity(
    model: LagrangianModel,
    x,
    t: float,
    lam: float,
    sample_count: int = 64,
    seed: int = 0,
    cap: float = 1e6,
    solver: str = "full",
    opts: ActionOptions | None = None,
    vary_time: bool = True,
) -> RegularityProbeReport:
    """Estimate the semiconcavity constant of ``(t, y) -> A_t(x, y)``.

    Reports the supremum of ``excess * t / (h^2 + |z|^2)`` with
    ``excess = A_{t+h}(x, y+z) + A_{t-h}(x, y-z) - 2 A_t(x, y)``,
    ``|h| < t/2`` and ``|z| < lam t``.  With ``vary_time=False`` every
    sample uses ``h = 0``, probing semiconcavity in ``y`` alone.
    """
    n = model.dim
    x = np.asarray(x, dtype=float).reshape(n)
    rng = np.random.default_rng(seed)
    r = lam * t
    ys, zs, hs = [], [], []
    while len(ys) < sample_count:
        y = x + _ball(rng, n, r)
        z = _ball(rng, n, r)
        h = rng.uniform(-0.5 * t, 0.5 * t) if vary_time else 0.0
        if math.hypot(h, float(np.linalg.norm(z))) < 0.05 * max(r, t):
            continue
        ys.append(y)
        zs.append(z)
        hs.append(h)
    ys, zs, hs = np.array(ys), np.array(zs), np.array(hs)
    k = sample_count
    X = np.repeat(x[None], 3 * k, axis=0)
    Y = np.concatenate([ys + zs, ys - zs, ys])
    T = np.concatenate([t + hs, t - hs, np.full(k, t)])
    vals, mult = _evaluate(model, X, Y, T, solver, opts)
    excess = vals[:k] + vals[k : 2 * k] - 2.0 * vals[2 * k :]
    ratio = excess * t / (hs**2 + np.sum(zs * zs, axis=1))
    flags = (mult[:k] > 1) | (mult[k : 2 * k] > 1) | (mult[2 * k :] > 1)
    samples = [
        {
            "y": ys[i].tolist(),
            "z": zs[i].tolist(),
            "h": float(hs[i]),
            "excess": float(excess[i]),
            "ratio": float(ratio[i]),
            "flagged": bool(flags[i]),
        }
        for i in range(k)
    ]
    use = ratio[~flags] if np.any(~flags) else ratio
    est = float(np.max(use))
    return RegularityProbeReport(
        constant_estimate=est,
        samples=samples,
        worst_ratio=est,
        verdict=bool(np.isfinite(est) and est <= cap),
        flagged=int(np.sum(flags)),
        kind="semiconcavity",
    )


@dataclass
class RegularityRatios:
    """The three scaled differences between minimizers ending at ``y1`` and ``y2``."""

    sup_xi: float
    l2_p: float
    l2_xi_dot: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.sup_xi, self.l2_p, self.l2_xi_dot)


def main_regularity_check(
    model: LagrangianModel, x, t: float, y1, y2, opts: ActionOptions | None = None
) -> RegularityRatios:
    """Ratios ``|xi2-xi1|_inf^2 t/|dy|^2``, ``int |dp|^2 t/|dy|^2``, ``int |dxi_dot|^2 t/|dy|^2``."""
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    dy2 = float(np.sum((y2 - y1) ** 2))
    if dy2 == 0.0:
        return RegularityRatios(0.0, 0.0, 0.0)
    a = fundamental_solution(model, x, y1, t, opts).minimizer
    b = fundamental_solution(model, x, y2, t, opts).minimizer
    s = a.nodes
    dxi = np.max(np.sum((b.xi - a.xi) ** 2, axis=1))
    dp = np.trapezoid(np.sum((b.p - a.p) ** 2, axis=1), s)
    dv = np.trapezoid(np.sum((b.xi_dot - a.xi_dot) ** 2, axis=1), s)
    return RegularityRatios(float(dxi * t / dy2), float(dp * t / dy2), float(dv * t / dy2))


@dataclass
class RegularityBand:
    """Ratios of :func:`main_regularity_check` under repeated halving of ``|dy|``."""

    offsets: list[float]
    ratios: list[tuple[float, float, float]]
    band: float
    verdict: bool

    def to_dict(self) -> dict:
        return {
            "offsets": self.offsets,
            "ratios": [list(r) for r in self.ratios],
            "band": self.band,
            "verdict": "pass" if self.verdict else "fail",
        }


def regularity_band(
    model: LagrangianModel,
    x,
    t: float,
    lam: float = 1.0,
    halvings: int = 4,
    band: float = 2.0,
    opts: ActionOptions | None = None,
) -> RegularityBand:
    """Check that each ratio stays within a factor ``band`` of its first value.

    ``y1 = x + 0.3 lam t e_1`` and ``y2 = y1 + d e_1`` with
    ``d = 0.2 lam t / 2^k`` for ``k = 0..halvings``.
    """
    n = model.dim
    x = np.asarray(x, dtype=float).reshape(n)
    e = np.zeros(n)
    e[0] = 1.0
    y1 = x + 0.3 * lam * t * e
    offsets, ratios = [], []
    for k in range(halvings + 1):
        d = 0.2 * lam * t / 2**k
        offsets.append(d)
        ratios.append(main_regularity_check(model, x, t, y1, y1 + d * e, opts).as_tuple())
    R = np.array(ratios)
    ref = R[0]
    ok = bool(np.all(R <= band * ref + 1e-300) and np.all(R >= ref / band))
    return RegularityBand(offsets, [tuple(map(float, r)) for r in R], band, ok)
