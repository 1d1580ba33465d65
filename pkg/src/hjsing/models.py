"""Tonelli Lagrangians, their Hamiltonians and the explicit bound functions.

Every model callable is vectorized over leading axes: ``x`` and ``v`` (or
``p``) have shape ``(..., n)``; scalar quantities come back with shape
``(...)``, covectors with shape ``(..., n)`` and second-derivative blocks with
shape ``(..., n, n)``.  Second-derivative blocks use the row index for the
first variable, so ``L_xv[..., i, j] = d^2 L / dx_i dv_j``.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import NonConvergence, Unbounded

logger = logging.getLogger(__name__)

ScalarFn = Callable[[float], float]
ArrayFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class HamiltonianModel:
    """Hamiltonian data with first and second derivatives.

    Attributes:
        dim: State dimension n.
        H, H_x, H_p, H_xx, H_xp, H_pp: Vectorized callables of ``(x, p)``.
        provenance: ``"native"`` for closed forms, ``"derived-from-L"`` when
            obtained through the Legendre transform.
        jet_fn: Optional callable returning all six quantities at once; used
            by integrators to avoid repeated Legendre solves.
        potential: ``(V, dV, d2V)`` when ``H = |p|^2/2 + V(x)``; lets
            integrators skip the generic second-derivative algebra.
    """

    dim: int
    H: ArrayFn
    H_x: ArrayFn
    H_p: ArrayFn
    H_xx: ArrayFn
    H_xp: ArrayFn
    H_pp: ArrayFn
    provenance: str = "native"
    jet_fn: Callable | None = None
    potential: tuple | None = None

    def jet(self, x: np.ndarray, p: np.ndarray):
        """Return ``(H, H_x, H_p, H_xx, H_xp, H_pp)`` evaluated at ``(x, p)``."""
        if self.jet_fn is not None:
            return self.jet_fn(x, p)
        return (
            self.H(x, p),
            self.H_x(x, p),
            self.H_p(x, p),
            self.H_xx(x, p),
            self.H_xp(x, p),
            self.H_pp(x, p),
        )


@dataclass(frozen=True, eq=False)
class LagrangianModel:
    """A Tonelli Lagrangian together with its structural bound functions.

    The bound functions mirror conditions (L1)-(L3): ``nu`` lower-bounds the
    spectrum of ``L_vv``; ``theta(|v|) - c0 <= L <= theta_bar(|v|)``; ``K``
    bounds every first and second derivative entry.  ``box_radius`` records
    the region ``|x| <= box_radius`` on which the bounds are claimed (``inf``
    for global models).
    """

    name: str
    dim: int
    L: ArrayFn
    L_x: ArrayFn
    L_v: ArrayFn
    L_xx: ArrayFn
    L_xv: ArrayFn
    L_vv: ArrayFn
    nu: ScalarFn
    theta: ScalarFn
    theta_bar: ScalarFn
    K: ScalarFn
    c0: float
    periodic: bool = False
    box_radius: float = math.inf
    native_hamiltonian: HamiltonianModel | None = None
    params: dict = field(default_factory=dict)

    @cached_property
    def hamiltonian(self) -> HamiltonianModel:
        """Closed-form Hamiltonian when available, otherwise the Legendre dual."""
        if self.native_hamiltonian is not None:
            return self.native_hamiltonian
        return derived_hamiltonian(self)

    @cached_property
    def bounds(self) -> "BoundFunctions":
        return BoundFunctions(self)


# ---------------------------------------------------------------------------
# Legendre transform


def _as_batch(a: np.ndarray, n: int) -> tuple[np.ndarray, tuple]:
    a = np.asarray(a, dtype=float)
    shape = a.shape[:-1]
    return a.reshape(-1, n), shape


def legendre_batch(
    model: LagrangianModel,
    x: np.ndarray,
    p: np.ndarray,
    v0: np.ndarray | None = None,
    tol: float = 1e-12,
    max_iter: int = 100,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Legendre transform; returns ``(H, v_star)`` with batch shape.

    Newton on ``L_v(x, v) = p`` with ``L_vv`` as Jacobian and Armijo
    backtracking on ``g(v) = <p, v> - L(x, v)``.  Where ``L_vv`` is not
    positive definite the step falls back to the gradient direction.
    """
    n = model.dim
    xb, shape = _as_batch(np.broadcast_to(x, np.broadcast_shapes(np.shape(x), np.shape(p))), n)
    pb, _ = _as_batch(np.broadcast_to(p, np.broadcast_shapes(np.shape(x), np.shape(p))), n)
    v = pb.copy() if v0 is None else np.array(np.broadcast_to(v0, pb.shape), dtype=float)

    def objective(vv, idx):
        return np.einsum("bi,bi->b", pb[idx], vv) - model.L(xb[idx], vv)

    active = np.arange(len(v))
    scale = 1.0 + np.linalg.norm(pb, axis=1)
    for _ in range(max_iter):
        grad = pb[active] - model.L_v(xb[active], v[active])
        res = np.linalg.norm(grad, axis=1)
        done = res <= tol * scale[active]
        active = active[~done]
        grad = grad[~done]
        if active.size == 0:
            break
        hess = model.L_vv(xb[active], v[active])
        step = np.empty_like(grad)
        for k in range(len(active)):
            try:
                np.linalg.cholesky(hess[k])
                step[k] = np.linalg.solve(hess[k], grad[k])
            except np.linalg.LinAlgError:
                step[k] = grad[k]
        g0 = objective(v[active], active)
        slope = np.einsum("bi,bi->b", grad, step)
        alpha = np.ones(len(active))
        pending = np.ones(len(active), dtype=bool)
        for _ls in range(60):
            idx = np.nonzero(pending)[0]
            if idx.size == 0:
                break
            trial = v[active[idx]] + alpha[idx, None] * step[idx]
            g1 = objective(trial, active[idx])
            ok = g1 >= g0[idx] + 1e-4 * alpha[idx] * slope[idx] - 1e-15 * np.abs(g0[idx])
            v[active[idx[ok]]] = trial[ok]
            pending[idx[ok]] = False
            alpha[idx[~ok]] *= 0.5
        if np.any(pending):
            # Armijo failed: accept a tiny step so that progress is not lost
            idx = np.nonzero(pending)[0]
            v[active[idx]] += alpha[idx, None] * step[idx]
    else:
        grad = pb[active] - model.L_v(xb[active], v[active])
        res = float(np.max(np.linalg.norm(grad, axis=1)))
        raise NonConvergence(f"Legendre Newton failed; residual {res:.3e}")
    H = np.einsum("bi,bi->b", pb, v) - model.L(xb, v)
    return H.reshape(shape), v.reshape(shape + (n,))


def legendre(model: LagrangianModel, x, p) -> tuple[float, np.ndarray]:
    """Return ``(H(x, p), v_star)`` where ``v_star`` attains the supremum."""
    x = np.asarray(x, dtype=float).reshape(model.dim)
    p = np.asarray(p, dtype=float).reshape(model.dim)
    H, v = legendre_batch(model, x[None], p[None])
    return float(H[0]), v[0]


def energy(model: LagrangianModel, x, v) -> np.ndarray | float:
    """Energy ``<v, L_v(x, v)> - L(x, v)``; vectorized over leading axes."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    e = np.sum(v * model.L_v(x, v), axis=-1) - model.L(x, v)
    return float(e) if np.ndim(e) == 0 else e


def derived_hamiltonian(model: LagrangianModel) -> HamiltonianModel:
    """Build the Hamiltonian of ``model`` through the Legendre transform.

    Derivatives follow from the envelope theorem and implicit
    differentiation of ``L_v(x, v) = p``.
    """

    def jet(x, p):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        H, v = legendre_batch(model, x, p)
        xb = np.broadcast_to(x, v.shape)
        L_x = model.L_x(xb, v)
        L_xx = model.L_xx(xb, v)
        L_xv = model.L_xv(xb, v)
        H_pp = np.linalg.inv(model.L_vv(xb, v))
        H_xp = -L_xv @ H_pp
        H_px = np.swapaxes(H_xp, -1, -2)
        H_xx = -L_xx - L_xv @ H_px
        return H, -L_x, v, H_xx, H_xp, H_pp

    return HamiltonianModel(
        dim=model.dim,
        H=lambda x, p: jet(x, p)[0],
        H_x=lambda x, p: jet(x, p)[1],
        H_p=lambda x, p: jet(x, p)[2],
        H_xx=lambda x, p: jet(x, p)[3],
        H_xp=lambda x, p: jet(x, p)[4],
        H_pp=lambda x, p: jet(x, p)[5],
        provenance="derived-from-L",
        jet_fn=jet,
    )


# ---------------------------------------------------------------------------
# Bound functions


def conjugate(theta: ScalarFn, s: float, rel_tol: float = 1e-10) -> float:
    """Convex conjugate ``sup_{r >= 0} (r s - theta(r))`` of a superlinear ``theta``."""
    if s < 0:
        raise ValueError("conjugate argument must be nonnegative")

    def g(r: float) -> float:
        return r * s - theta(r)

    r_max = max(1.0, 2.0 * s)
    for _ in range(200):
        if g(r_max) < g(0.5 * r_max):
            break
        r_max *= 2.0
    else:
        raise Unbounded(f"no decreasing tail for r*s - theta(r) at s={s}")
    res = minimize_scalar(
        lambda r: -g(r),
        bounds=(0.0, r_max),
        method="bounded",
        options={"xatol": rel_tol * r_max, "maxiter": 500},
    )
    return max(g(0.0), -float(res.fun))


def conjugate_bound(model: LagrangianModel, s: float) -> float:
    """``theta*(s)`` for the model's superlinear lower bound ``theta``."""
    return conjugate(model.theta, s)


def action_bound(model: LagrangianModel, r: float) -> float:
    """Upper bound on ``L`` over speeds ``<= r``.

    The velocity-bound chain uses ``K`` as a bound on the Lagrangian itself;
    taking the max with ``theta_bar`` keeps the chain valid for models whose
    derivative bound ``K`` is smaller than ``L``.
    """
    return max(model.K(r), model.theta_bar(r))


def velocity_bound_kappa(model: LagrangianModel, r: float) -> float:
    """A-priori bound on the speed of minimizers with ``|y - x| / t <= r``."""
    if r <= 0:
        raise ValueError("r must be positive")
    return _kappa_cached(model, float(r))


@lru_cache(maxsize=4096)
def _kappa_cached(model: LagrangianModel, r: float) -> float:
    c0 = model.c0
    c1 = action_bound(model, r) + c0
    c2 = c1 + conjugate_bound(model, 1.0)
    c3 = 4.0 * c0 + 3.0 * action_bound(model, 4.0 * c2 / 3.0)
    c4 = (c0 - c3) + conjugate_bound(model, action_bound(model, 1.0) + c3 + 1.0)
    c5 = max(2.0, c4)
    return max(c5, c2)


@lru_cache(maxsize=1024)
def lambda0(model: LagrangianModel, lip_u: float) -> float:
    """Search-radius coefficient for the Lax-Oleinik extremizers."""
    return conjugate_bound(model, lip_u + 1.0) + model.c0 + action_bound(model, 0.0)


class BoundFunctions:
    """Convenience view bundling ``theta_star``, ``lambda0`` and ``kappa``."""

    def __init__(self, model: LagrangianModel):
        self._model = model

    def theta_star(self, s: float) -> float:
        return conjugate_bound(self._model, s)

    def lambda0(self, lip_u: float) -> float:
        return lambda0(self._model, lip_u)

    def kappa(self, r: float) -> float:
        return velocity_bound_kappa(self._model, r)


# ---------------------------------------------------------------------------
# Structural checks


@dataclass(frozen=True)
class SampleSpec:
    """Sampling region for :func:`check_tonelli`."""

    box_lo: tuple[float, ...]
    box_hi: tuple[float, ...]
    v_radius: float = 3.0
    count: int = 200
    seed: int = 0


@dataclass
class ConditionResult:
    margin: float
    passed: bool
    detail: str = ""


@dataclass
class TonelliReport:
    conditions: dict[str, ConditionResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions.values())

    def to_dict(self) -> dict:
        return {
            k: {"margin": c.margin, "passed": c.passed, "detail": c.detail}
            for k, c in self.conditions.items()
        }


def _fd_derivative_error(model: LagrangianModel, x: np.ndarray, v: np.ndarray) -> float:
    """Worst relative mismatch between analytic and central-difference derivatives."""
    n = model.dim
    h = 1e-5
    worst = 0.0

    def rel(a, b):
        a = np.asarray(a)
        b = np.asarray(b)
        return float(np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(b))))

    eye = np.eye(n)
    fd_Lx = np.array([(model.L(x + h * e, v) - model.L(x - h * e, v)) / (2 * h) for e in eye])
    fd_Lv = np.array([(model.L(x, v + h * e) - model.L(x, v - h * e)) / (2 * h) for e in eye])
    fd_Lxx = np.array([(model.L_x(x + h * e, v) - model.L_x(x - h * e, v)) / (2 * h) for e in eye])
    fd_Lxv = np.array([(model.L_v(x + h * e, v) - model.L_v(x - h * e, v)) / (2 * h) for e in eye])
    fd_Lvv = np.array([(model.L_v(x, v + h * e) - model.L_v(x, v - h * e)) / (2 * h) for e in eye])
    worst = max(worst, rel(fd_Lx, model.L_x(x, v)))
    worst = max(worst, rel(fd_Lv, model.L_v(x, v)))
    worst = max(worst, rel(fd_Lxx, model.L_xx(x, v)))
    worst = max(worst, rel(fd_Lxv, model.L_xv(x, v)))
    worst = max(worst, rel(fd_Lvv, model.L_vv(x, v)))
    return worst


def check_tonelli(model: LagrangianModel, sample_spec: SampleSpec) -> TonelliReport:
    """Evaluate (L1)-(L3) and the derived (H1)-(H3) on random samples.

    Each condition reports its worst margin; a negative margin is a
    violation.  Failures never raise.
    """
    rng = np.random.default_rng(sample_spec.seed)
    n = model.dim
    lo = np.asarray(sample_spec.box_lo, dtype=float)
    hi = np.asarray(sample_spec.box_hi, dtype=float)
    xs = rng.uniform(lo, hi, size=(sample_spec.count, n))
    dirs = rng.normal(size=(sample_spec.count, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = sample_spec.v_radius * rng.uniform(0.0, 1.0, size=sample_spec.count) ** (1.0 / n)
    vs = dirs * radii[:, None]
    vs[0] = 0.0
    speeds = np.linalg.norm(vs, axis=1)

    cond: dict[str, ConditionResult] = {}

    eig = np.linalg.eigvalsh(model.L_vv(xs, vs))[:, 0]
    nu = np.array([model.nu(r) for r in speeds])
    m1 = float(np.min(eig - nu))
    min_eig = float(np.min(eig))
    cond["L1"] = ConditionResult(
        m1, bool(m1 >= -1e-12 and min_eig > 0 and np.all(nu > 0)), f"min eigenvalue {min_eig:.6g}"
    )

    Lval = model.L(xs, vs)
    lower = Lval - np.array([model.theta(r) for r in speeds]) + model.c0
    upper = np.array([model.theta_bar(r) for r in speeds]) - Lval
    m2 = float(min(lower.min(), upper.min()))
    cond["L2"] = ConditionResult(m2, m2 >= -1e-12)

    blocks = [model.L_x(xs, vs), model.L_v(xs, vs), model.L_xx(xs, vs), model.L_xv(xs, vs), model.L_vv(xs, vs)]
    entry = np.max(np.stack([np.abs(b).reshape(len(xs), -1).max(axis=1) for b in blocks]), axis=0)
    kk = np.array([model.K(r) for r in speeds])
    m3 = float(np.min(kk - entry))
    cond["L3"] = ConditionResult(m3, m3 >= -1e-12)

    fd = max(_fd_derivative_error(model, xs[i], vs[i]) for i in range(min(20, len(xs))))
    cond["derivatives"] = ConditionResult(-fd, fd <= 1e-5, f"worst relative FD mismatch {fd:.3e}")

    if min_eig <= 0:
        for key in ("H1", "H2", "H3", "legendre"):
            cond[key] = ConditionResult(float("nan"), False, "skipped: L_vv not positive definite")
        return TonelliReport(cond)

    ham = model.hamiltonian
    ps = model.L_v(xs, vs)
    pn = np.linalg.norm(ps, axis=1)
    H, H_x, H_p, H_xx, H_xp, H_pp = ham.jet(xs, ps)
    h_eig = float(np.min(np.linalg.eigvalsh(H_pp)[:, 0]))
    cond["H1"] = ConditionResult(h_eig, h_eig > 0)

    theta_bar_star = np.array([conjugate(model.theta_bar, s) for s in pn])
    theta_star = np.array([conjugate(model.theta, s) for s in pn])
    m_h2 = float(min(np.min(H - theta_bar_star), np.min(theta_star + model.c0 - H)))
    cond["H2"] = ConditionResult(m_h2, m_h2 >= -1e-9 * (1 + np.max(np.abs(H))))

    speed_bound = np.array(
        [model.c0 + model.theta_bar(0.0) + conjugate(model.theta, s + 1.0) for s in pn]
    )
    m_h3 = float(np.min(speed_bound - np.linalg.norm(H_p, axis=1)))
    finite = all(np.all(np.isfinite(a)) for a in (H_x, H_xx, H_xp, H_pp))
    cond["H3"] = ConditionResult(m_h3, bool(m_h3 >= -1e-9 and finite))

    # Legendre relations between the Hamiltonian in use and L
    L_vv = model.L_vv(xs, vs)
    L_xv = model.L_xv(xs, vs)
    errs = [
        np.max(np.abs(H_p - vs)) / (1 + np.max(np.abs(vs))),
        np.max(np.abs(H + Lval - np.sum(ps * vs, axis=1))) / (1 + np.max(np.abs(H))),
        np.max(np.abs(H_x + model.L_x(xs, vs))) / (1 + np.max(np.abs(H_x))),
        np.max(np.abs(H_pp @ L_vv - np.eye(n))),
        np.max(np.abs(H_xp + L_xv @ H_pp)) / (1 + np.max(np.abs(H_xp))),
        np.max(np.abs(H_xx + model.L_xx(xs, vs) + L_xv @ np.swapaxes(H_xp, -1, -2)))
        / (1 + np.max(np.abs(H_xx))),
    ]
    worst = float(max(errs))
    cond["legendre"] = ConditionResult(-worst, worst <= 1e-6, f"worst relation residual {worst:.3e}")
    return TonelliReport(cond)


# ---------------------------------------------------------------------------
# Built-in models


@dataclass(frozen=True)
class Potential:
    """Potential ``V`` with sup-bounds used to set the model bound functions."""

    name: str
    V: Callable[[np.ndarray], np.ndarray]
    dV: Callable[[np.ndarray], np.ndarray]
    d2V: Callable[[np.ndarray], np.ndarray]
    vmax: float
    vmin: float
    d1max: float
    d2max: float
    periodic: bool = False


def _zeros_like_scalar(x):
    return np.zeros(np.shape(x)[:-1])


def _zero_block(x):
    n = np.shape(x)[-1]
    return np.zeros(np.shape(x)[:-1] + (n, n))


def potential(name: str, dim: int, **params) -> Potential:
    """Look up a potential by id: ``zero``, ``eikonal``, ``harmonic``, ``cos``, ``gaussian``."""
    if name == "zero":
        return Potential("zero", _zeros_like_scalar, np.zeros_like, _zero_block, 0.0, 0.0, 0.0, 0.0)
    if name == "eikonal":
        # V = -1/2 turns |v|^2/2 - V into the eikonal Lagrangian of H = |p|^2/2 - 1/2
        return Potential(
            "eikonal",
            lambda x: np.full(np.shape(x)[:-1], -0.5),
            np.zeros_like,
            _zero_block,
            -0.5,
            -0.5,
            0.0,
            0.0,
        )
    if name == "harmonic":
        omega = float(params.get("omega", 1.0))
        radius = float(params.get("box_radius", 2.0))
        w2 = omega * omega
        return Potential(
            "harmonic",
            lambda x: 0.5 * w2 * np.sum(x * x, axis=-1),
            lambda x: w2 * np.asarray(x, dtype=float),
            lambda x: w2 * np.broadcast_to(np.eye(np.shape(x)[-1]), np.shape(x) + (np.shape(x)[-1],)).copy(),
            0.5 * w2 * radius * radius,
            0.0,
            w2 * radius,
            w2,
        )
    if name == "cos":
        two_pi = 2.0 * math.pi

        def d2(x):
            x = np.asarray(x, dtype=float)
            diag = -(two_pi**2) * np.cos(two_pi * x)
            return diag[..., :, None] * np.eye(x.shape[-1])

        return Potential(
            "cos",
            lambda x: np.sum(np.cos(two_pi * np.asarray(x, dtype=float)), axis=-1),
            lambda x: -two_pi * np.sin(two_pi * np.asarray(x, dtype=float)),
            d2,
            float(dim),
            -float(dim),
            two_pi,
            two_pi**2,
            periodic=True,
        )
    if name == "gaussian":
        amp = float(params.get("amplitude", 1.0))

        def V(x):
            return amp * np.exp(-np.sum(np.asarray(x) ** 2, axis=-1))

        def dV(x):
            x = np.asarray(x, dtype=float)
            return -2.0 * x * V(x)[..., None]

        def d2V(x):
            x = np.asarray(x, dtype=float)
            n = x.shape[-1]
            outer = 4.0 * x[..., :, None] * x[..., None, :] - 2.0 * np.eye(n)
            return outer * V(x)[..., None, None]

        return Potential(
            "gaussian",
            V,
            dV,
            d2V,
            max(amp, 0.0),
            min(amp, 0.0),
            abs(amp) * math.sqrt(2.0 / math.e),
            2.0 * abs(amp) * max(1.0, 4.0 * math.exp(-1.5)),
        )
    raise KeyError(f"unknown potential {name!r}")


def mechanical_model(pot: Potential, dim: int, name: str | None = None, params: dict | None = None) -> LagrangianModel:
    """``L = |v|^2/2 - V(x)`` with its closed-form Hamiltonian ``|p|^2/2 + V(x)``."""
    n = dim
    eye = np.eye(n)

    def L(x, v):
        return 0.5 * np.sum(np.asarray(v) ** 2, axis=-1) - pot.V(x)

    def L_vv(x, v):
        shape = np.broadcast_shapes(np.shape(x), np.shape(v))
        return np.broadcast_to(eye, shape + (n,)).copy()

    def L_xv(x, v):
        shape = np.broadcast_shapes(np.shape(x), np.shape(v))
        return np.zeros(shape + (n,))

    def bx(f):
        return lambda x, v: np.broadcast_to(f(x), np.broadcast_shapes(np.shape(x), np.shape(v))).copy()

    def bxx(f):
        return lambda x, v: np.broadcast_to(
            f(x), np.broadcast_shapes(np.shape(x), np.shape(v)) + (n,)
        ).copy()

    ham = HamiltonianModel(
        dim=n,
        H=lambda x, p: 0.5 * np.sum(np.asarray(p) ** 2, axis=-1) + pot.V(x),
        H_x=lambda x, p: bx(pot.dV)(x, p),
        H_p=lambda x, p: np.broadcast_to(p, np.broadcast_shapes(np.shape(x), np.shape(p))).astype(float),
        H_xx=lambda x, p: bxx(pot.d2V)(x, p),
        H_xp=L_xv,
        H_pp=L_vv,
        provenance="native",
        potential=(pot.V, pot.dV, pot.d2V),
    )

    d1, d2 = pot.d1max, pot.d2max
    c0 = max(pot.vmax, 0.0)
    lift = max(-pot.vmin, 0.0)
    return LagrangianModel(
        name=name or f"mechanical({pot.name})",
        dim=n,
        L=L,
        L_x=lambda x, v: -bx(pot.dV)(x, v),
        L_v=lambda x, v: np.broadcast_to(v, np.broadcast_shapes(np.shape(x), np.shape(v))).astype(float),
        L_xx=lambda x, v: -bxx(pot.d2V)(x, v),
        L_xv=L_xv,
        L_vv=L_vv,
        nu=lambda r: 1.0,
        theta=lambda r: 0.5 * r * r,
        theta_bar=lambda r: 0.5 * r * r + lift,
        K=lambda r: max(r, 1.0, d1, d2),
        c0=c0,
        periodic=pot.periodic,
        box_radius=float((params or {}).get("box_radius", math.inf)),
        native_hamiltonian=ham,
        params=dict(params or {}),
    )


def quartic1d() -> LagrangianModel:
    """``L = v^4/4`` in one dimension.

    Not uniformly convex at ``v = 0``; it exists to exercise the Legendre
    solver on a non-quadratic Lagrangian and to show an (L1) failure.
    """

    def L(x, v):
        return 0.25 * np.asarray(v)[..., 0] ** 4

    def L_v(x, v):
        return np.asarray(v, dtype=float) ** 3

    def L_vv(x, v):
        return 3.0 * np.asarray(v, dtype=float)[..., None] ** 2

    def zeros(x, v):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(v)))

    def zeros2(x, v):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(v)) + (1,))

    return LagrangianModel(
        name="quartic1d",
        dim=1,
        L=L,
        L_x=zeros,
        L_v=L_v,
        L_xx=zeros2,
        L_xv=zeros2,
        L_vv=L_vv,
        nu=lambda r: 0.0,
        theta=lambda r: 0.25 * r**4,
        theta_bar=lambda r: 0.25 * r**4,
        K=lambda r: max(r**3, 3.0 * r * r, 1.0),
        c0=0.0,
    )


def magnetic_model(beta: float = 1.0, box_radius: float = 2.0) -> LagrangianModel:
    """``L = |v|^2/2 + beta <A(x), v>`` in two dimensions with ``A(x) = J x / 2``.

    ``J`` is the quarter rotation, so the field is a constant magnetic field
    of strength ``beta``.  ``L`` is not even in ``v``; it exercises the
    time-reversal identities.  Bounds hold on ``|x| <= box_radius``.
    """
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    b2 = 0.5 * beta

    def shape2(x, v):
        return np.broadcast_shapes(np.shape(x), np.shape(v))

    def L(x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        return 0.5 * np.sum(v * v, axis=-1) + b2 * np.sum(v * (x @ J.T), axis=-1)

    def L_x(x, v):
        return np.broadcast_to(-b2 * (np.asarray(v, dtype=float) @ J.T), shape2(x, v)).copy()

    def L_v(x, v):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(v, dtype=float) + b2 * (x @ J.T), shape2(x, v)).copy()

    def const(mat):
        return lambda x, v: np.broadcast_to(mat, shape2(x, v) + (2,)).copy()

    def jet(x, p):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        q = p - b2 * (x @ J.T)
        sh = np.broadcast_shapes(np.shape(x), np.shape(p))
        q = np.broadcast_to(q, sh)
        H = 0.5 * np.sum(q * q, axis=-1)
        H_x = -b2 * (q @ J)
        H_xx = np.broadcast_to(b2 * b2 * np.eye(2), sh + (2,)).copy()
        H_xp = np.broadcast_to(-b2 * J.T, sh + (2,)).copy()
        H_pp = np.broadcast_to(np.eye(2), sh + (2,)).copy()
        return H, H_x, q.copy(), H_xx, H_xp, H_pp

    ham = HamiltonianModel(
        dim=2,
        H=lambda x, p: jet(x, p)[0],
        H_x=lambda x, p: jet(x, p)[1],
        H_p=lambda x, p: jet(x, p)[2],
        H_xx=lambda x, p: jet(x, p)[3],
        H_xp=lambda x, p: jet(x, p)[4],
        H_pp=lambda x, p: jet(x, p)[5],
        provenance="native",
        jet_fn=jet,
    )
    c0 = (beta * box_radius) ** 2 / 4.0
    return LagrangianModel(
        name="magnetic",
        dim=2,
        L=L,
        L_x=L_x,
        L_v=L_v,
        L_xx=const(np.zeros((2, 2))),
        L_xv=const(b2 * J.T),
        L_vv=const(np.eye(2)),
        nu=lambda r: 1.0,
        theta=lambda r: 0.25 * r * r,
        theta_bar=lambda r: 0.75 * r * r + c0,
        K=lambda r: max(1.0, r + 0.5 * abs(beta) * box_radius, 0.5 * abs(beta)),
        c0=c0,
        box_radius=box_radius,
        native_hamiltonian=ham,
        params={"beta": beta, "box_radius": box_radius},
    )


def reversed_model(model: LagrangianModel) -> LagrangianModel:
    """The time-reversed Lagrangian ``L~(x, v) = L(x, -v)``.

    Curves of ``L~`` from ``y`` to ``x`` are the reversals of curves of ``L``
    from ``x`` to ``y`` with the same action, so ``A~_t(y, x) = A_t(x, y)``.
    The Hamiltonian is ``H~(x, p) = H(x, -p)``.
    """

    def neg(v):
        return -np.asarray(v, dtype=float)

    ham = model.hamiltonian

    def jet(x, p):
        H, H_x, H_p, H_xx, H_xp, H_pp = ham.jet(x, neg(p))
        return H, H_x, -H_p, H_xx, -H_xp, H_pp

    rham = HamiltonianModel(
        dim=model.dim,
        H=lambda x, p: ham.H(x, neg(p)),
        H_x=lambda x, p: ham.H_x(x, neg(p)),
        H_p=lambda x, p: -ham.H_p(x, neg(p)),
        H_xx=lambda x, p: ham.H_xx(x, neg(p)),
        H_xp=lambda x, p: -ham.H_xp(x, neg(p)),
        H_pp=lambda x, p: ham.H_pp(x, neg(p)),
        provenance=ham.provenance,
        jet_fn=jet,
        potential=ham.potential,
    )
    return LagrangianModel(
        name=f"reversed({model.name})",
        dim=model.dim,
        L=lambda x, v: model.L(x, neg(v)),
        L_x=lambda x, v: model.L_x(x, neg(v)),
        L_v=lambda x, v: -model.L_v(x, neg(v)),
        L_xx=lambda x, v: model.L_xx(x, neg(v)),
        L_xv=lambda x, v: -model.L_xv(x, neg(v)),
        L_vv=lambda x, v: model.L_vv(x, neg(v)),
        nu=model.nu,
        theta=model.theta,
        theta_bar=model.theta_bar,
        K=model.K,
        c0=model.c0,
        periodic=model.periodic,
        box_radius=model.box_radius,
        native_hamiltonian=rham,
        params=dict(model.params),
    )


MODEL_REGISTRY: dict[str, str] = {
    "free": "L = |v|^2/2; params: dim (default 1)",
    "harmonic": "L = |v|^2/2 - omega^2 |x|^2/2 on |x| <= box_radius; params: omega, dim, box_radius (2)",
    "mechanical": "L = |v|^2/2 - V(x); params: potential (zero|eikonal|harmonic|cos|gaussian), dim, potential params",
    "quartic1d": "L = v^4/4 (not uniformly convex at v = 0)",
    "pendulum": "L = |v|^2/2 - sum cos(2 pi x_i), periodic; params: dim (default 1)",
    "magnetic": "L = |v|^2/2 + beta <J x / 2, v> in 2-D on |x| <= box_radius; params: beta (1), box_radius (2)",
}

_ID_RE = re.compile(r"^\s*([a-z0-9_]+)\s*(?:\((.*)\))?\s*$")


def get_model(model_id: str, **params) -> LagrangianModel:
    """Instantiate a built-in model.

    ``model_id`` may carry a positional argument in parentheses, e.g.
    ``"harmonic(2.0)"`` (omega) or ``"mechanical(eikonal)"`` (potential id);
    keyword parameters override.
    """
    m = _ID_RE.match(model_id)
    if not m:
        raise KeyError(f"malformed model id {model_id!r}")
    base, arg = m.group(1), m.group(2)
    params = dict(params)
    dim = int(params.pop("dim", 1))
    if base == "free":
        _reject_extra(params, base)
        return mechanical_model(potential("zero", dim), dim, name="free", params={"dim": dim})
    if base == "harmonic":
        if arg:
            params.setdefault("omega", float(arg))
        omega = float(params.pop("omega", 1.0))
        radius = float(params.pop("box_radius", 2.0))
        _reject_extra(params, base)
        pot = potential("harmonic", dim, omega=omega, box_radius=radius)
        return mechanical_model(
            pot, dim, name="harmonic", params={"omega": omega, "box_radius": radius, "dim": dim}
        )
    if base == "mechanical":
        pname = arg.strip() if arg else params.pop("potential", "zero")
        params.pop("potential", None)
        pot = potential(pname, dim, **params)
        return mechanical_model(pot, dim, params={"potential": pname, "dim": dim, **params})
    if base == "quartic1d":
        _reject_extra(params, base)
        if dim != 1:
            raise ValueError("quartic1d is one-dimensional")
        return quartic1d()
    if base == "magnetic":
        if arg:
            params.setdefault("beta", float(arg))
        beta = float(params.pop("beta", 1.0))
        radius = float(params.pop("box_radius", 2.0))
        _reject_extra(params, base)
        if dim != 2:
            raise ValueError("magnetic is two-dimensional")
        return magnetic_model(beta, radius)
    if base == "pendulum":
        _reject_extra(params, base)
        return mechanical_model(potential("cos", dim), dim, name="pendulum", params={"dim": dim})
    raise KeyError(f"unknown model id {model_id!r}")


def _reject_extra(params: dict, base: str) -> None:
    if params:
        raise KeyError(f"unexpected parameters for {base}: {sorted(params)}")


def list_models() -> dict[str, str]:
    return dict(MODEL_REGISTRY)
