"""Lax-Oleinik sup/inf convolutions and the intrinsic singular step.

The objective ``phi(y) = u(y) - A_t(x, y)`` is strictly concave for small
``t`` but not smooth: at singular points of ``u`` the maximizer sits on a
kink.  Each extremization therefore runs a proximal Newton iteration: the
smooth kernel ``A_t`` is replaced by its exact second-order model (Hessian
from the variational equations) and the model problem, which only involves
cheap evaluations of ``u``, is solved accurately by a derivative-free inner
search.  A step is accepted only if it increases the true objective;
otherwise the quadratic model is stiffened.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .action import ActionOptions, fundamental_solution, fundamental_solution_batch, probe_convexity
from .errors import ProbeFailure, UniquenessViolation
from .fields import ScalarField
from .models import LagrangianModel, lambda0

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConvolutionOptions:
    """Controls for the convolution optimizers.

    Attributes:
        xtol: Outer convergence tolerance on the extremizer, relative to ``1 + R``.
        max_outer: Proximal Newton iteration cap per seed.
        consensus_tol: Seeds must agree within ``consensus_tol * (1 + lambda0 t)``.
        probe_samples: Samples for the convexity probe inside :func:`step_time`.
        probe_seed: RNG seed of that probe.
        max_halvings: Trial-time halvings allowed in :func:`step_time`.
        action: Options for kernel evaluations (single start: the kernel is
            evaluated in the small-time regime where minimizers are unique).
        shift_radius: Initial shift radius for periodic kernels.
    """

    xtol: float = 1e-10
    max_outer: int = 80
    consensus_tol: float = 1e-6
    probe_samples: int = 16
    probe_seed: int = 0
    max_halvings: int = 24
    action: ActionOptions = field(default_factory=lambda: ActionOptions(starts=1))
    shift_radius: int = 1


@dataclass
class ConvolutionResult:
    """Outcome of a sup/inf convolution at ``x``."""

    value: float
    y: np.ndarray
    boundary_flag: bool
    concavity_ok: bool
    radius: float
    lambda0: float
    kernel_grad: np.ndarray
    seed_points: list[np.ndarray] = field(default_factory=list)
    iterations: int = 0


# ---------------------------------------------------------------------------
# Kernels


def torus_shifts(n: int, radius: int) -> np.ndarray:
    rng = range(-radius, radius + 1)
    return np.array(list(itertools.product(rng, repeat=n)), dtype=float)


def wrap_unit(x: np.ndarray) -> np.ndarray:
    """Representative of ``x`` modulo ``Z^n`` in ``(0, 1]^n``."""
    x = np.asarray(x, dtype=float)
    r = np.mod(x, 1.0)
    return np.where(r == 0.0, 1.0, r)


class Kernel:
    """``A_t`` with one endpoint fixed at ``anchor``, as a function of the other.

    ``direction="to"`` evaluates ``A_t(anchor, y)`` (sup-convolution);
    ``direction="from"`` evaluates ``A_t(y, anchor)`` (inf-convolution).  On
    the torus the value is minimized over integer shifts of the free point.
    """

    def __init__(
        self,
        model: LagrangianModel,
        anchor: np.ndarray,
        t: float,
        direction: str = "to",
        periodic: bool = False,
        opts: ConvolutionOptions | None = None,
    ):
        self.model = model
        self.anchor = np.asarray(anchor, dtype=float)
        self.t = float(t)
        self.direction = direction
        self.periodic = periodic
        self.opts = opts or ConvolutionOptions()
        self.evaluations = 0

    def __call__(self, y: np.ndarray):
        """Return ``(value, gradient, hessian)`` with respect to the free point."""
        y = np.asarray(y, dtype=float)
        n = self.model.dim
        if self.periodic:
            radius = self.opts.shift_radius
            while True:
                shifts = torus_shifts(n, radius)
                Y = y[None, :] + shifts
                v, g, h = self._planar(Y)
                k = int(np.argmin(v))
                if np.max(np.abs(shifts[k])) < radius or radius >= 4:
                    return float(v[k]), g[k], h[k]
                radius += 1
        v, g, h = self._planar(y[None, :])
        return float(v[0]), g[0], h[0]

    def _planar(self, Y: np.ndarray):
        self.evaluations += len(Y)
        A = np.broadcast_to(self.anchor, Y.shape)
        if self.direction == "to":
            b = fundamental_solution_batch(self.model, A, Y, self.t, hessians=True, opts=self.opts.action)
            return b.value, b.grad_y, b.hess_yy
        b = fundamental_solution_batch(self.model, Y, A, self.t, hessians=True, opts=self.opts.action)
        return b.value, b.grad_x, b.hess_xx


# ---------------------------------------------------------------------------
# Proximal Newton maximizer


def _inner_maximize(F, y: np.ndarray, x: np.ndarray, R: float, step: float, xtol: float, penalty: float) -> np.ndarray:
    """Maximize the model objective ``F`` locally around ``y`` within ``B(x, R)``.

    The search is local (a trust interval of half-width ``4 step`` in 1-D, a
    simplex of size ``step`` otherwise) so that seeds in different basins
    stay apart and the consensus test can detect multiple maximizers.
    """
    n = len(x)
    if n == 1:
        lo = max(x[0] - R, y[0] - 4.0 * step)
        hi = min(x[0] + R, y[0] + 4.0 * step)
        res = minimize_scalar(
            lambda s: -F(np.array([s])), bounds=(lo, hi), method="bounded",
            options={"xatol": 0.1 * xtol, "maxiter": 500},
        )
        z = np.array([res.x])
        # the bounded search never samples the endpoints exactly
        for end in (lo, hi):
            e = np.array([end])
            if F(e) > F(z):
                z = e
        return z

    def obj(z):
        d = z - x
        r = float(np.linalg.norm(d))
        if r > R:
            return -F(x + d * (R / r)) + penalty * (r - R)
        return -F(z)

    z = y.copy()
    size = step
    for _restart in range(8):
        simplex = np.vstack([z] + [z + size * e for e in np.eye(n)])
        res = minimize(
            obj, z, method="Nelder-Mead",
            options={"initial_simplex": simplex, "xatol": 0.1 * xtol, "fatol": 1e-15, "maxfev": 4000},
        )
        moved = float(np.linalg.norm(res.x - z))
        z = res.x
        if moved <= xtol:
            break
        size = max(0.5 * moved, 10 * xtol)
    d = z - x
    r = float(np.linalg.norm(d))
    if r > R:
        z = x + d * (R / r)
    return z


def _extremize(
    sign: float,
    u: ScalarField,
    kernel: Kernel,
    x: np.ndarray,
    R: float,
    seed: np.ndarray,
    opts: ConvolutionOptions,
):
    """Maximize ``sign * u(y) - K(y)`` over ``B(x, R)`` from ``seed``.

    Returns ``(y, objective, kernel_gradient, iterations, converged)``.
    """
    n = len(x)
    xtol = opts.xtol * (1.0 + R)
    y = seed.copy()
    A, g, Q = kernel(y)
    phi = sign * u(y) - A
    mu = 0.0
    step = max(0.05 * R, 1e-6)
    penalty = 1e3 * (1.0 + u.lip_estimate + float(np.linalg.norm(g)) + float(np.linalg.norm(Q)) * R)
    converged = False
    it = 0
    for it in range(1, opts.max_outer + 1):
        lam_min = float(np.linalg.eigvalsh(Q)[0])
        shift = mu + max(0.0, 1e-8 * (1.0 + float(np.linalg.norm(Q))) - lam_min)
        Qr = Q + shift * np.eye(n)
        y0, g0, A0 = y.copy(), g.copy(), A

        def F(z, y0=y0, g0=g0, Qr=Qr):
            d = z - y0
            return sign * u(z) - (g0 @ d + 0.5 * d @ Qr @ d)

        z = _inner_maximize(F, y0, x, R, step, xtol, penalty)
        move = float(np.linalg.norm(z - y0))
        if move <= xtol:
            converged = True
            break
        A1, g1, Q1 = kernel(z)
        phi1 = sign * u(z) - A1
        if phi1 >= phi - 1e-14 * (1.0 + abs(phi)):
            y, A, g, Q, phi = z, A1, g1, Q1, phi1
            mu *= 0.25
            if mu < 1e-12:
                mu = 0.0
            step = max(move, 10 * xtol)
        else:
            mu = max(2.0 * mu, 0.5 * (1.0 + float(np.linalg.norm(Q))))
            step = max(0.5 * move, 10 * xtol)
    return y, phi, g, it, converged


def _seeds(x: np.ndarray, R: float) -> list[np.ndarray]:
    n = len(x)
    seeds = [x.copy()]
    for i in range(n):
        for s in (1.0, -1.0):
            e = np.zeros(n)
            e[i] = s * 0.5 * R
            seeds.append(x + e)
    return seeds


def search_radius(u: ScalarField, model: LagrangianModel, t: float) -> tuple[float, float]:
    """``(lambda0, radius)`` for the extremizer search ball."""
    lam = lambda0(model, float(u.lip_estimate))
    R = lam * t
    if u.periodic:
        R = min(R, 0.5 * math.sqrt(model.dim))
    return lam, R


def _convolve(sign: float, u: ScalarField, model: LagrangianModel, x, t: float, opts: ConvolutionOptions | None):
    opts = opts or ConvolutionOptions()
    x = np.asarray(x, dtype=float).reshape(model.dim)
    lam, R = search_radius(u, model, t)
    kernel = Kernel(model, x, t, "to" if sign > 0 else "from", u.periodic, opts)
    runs = []
    for seed in _seeds(x, R):
        runs.append(_extremize(sign, u, kernel, x, R, seed, opts))
    best = max(runs, key=lambda r: (r[1], tuple(-r[0])))
    spread = max(float(np.linalg.norm(r[0] - best[0])) for r in runs)
    ok = spread <= opts.consensus_tol * (1.0 + lam * t)
    y = best[0]
    flag = bool(np.linalg.norm(y - x) >= 0.99 * R)
    value = best[1] if sign > 0 else -best[1]
    return ConvolutionResult(
        value=float(value),
        y=y,
        boundary_flag=flag,
        concavity_ok=bool(ok),
        radius=R,
        lambda0=lam,
        kernel_grad=best[2],
        seed_points=[r[0] for r in runs],
        iterations=sum(r[3] for r in runs),
    ), spread


def barrier_phi(u: ScalarField, model: LagrangianModel, x, y, t: float, opts: ActionOptions | None = None) -> float:
    """``u(y) - A_t(x, y)`` with the full fundamental-solution pipeline."""
    if u.periodic:
        from .weak_kam import fundamental_solution_torus

        fs = fundamental_solution_torus(model, x, y, t, opts)
    else:
        fs = fundamental_solution(model, x, y, t, opts)
    return float(u(np.asarray(y, dtype=float))) - fs.value


def sup_convolution(u: ScalarField, model: LagrangianModel, x, t: float, opts: ConvolutionOptions | None = None) -> ConvolutionResult:
    """``T+_t u(x) = sup_y u(y) - A_t(x, y)`` over ``B(x, lambda0 t)``."""
    res, _ = _convolve(1.0, u, model, x, t, opts)
    if res.boundary_flag:
        logger.warning("sup-convolution maximizer on the search boundary at x=%s", x)
    return res


def inf_convolution(u: ScalarField, model: LagrangianModel, x, t: float, opts: ConvolutionOptions | None = None) -> ConvolutionResult:
    """``T-_t u(x) = inf_y u(y) + A_t(y, x)`` over ``B(x, lambda0 t)``."""
    res, _ = _convolve(-1.0, u, model, x, t, opts)
    if res.boundary_flag:
        logger.warning("inf-convolution minimizer on the search boundary at x=%s", x)
    return res


def intrinsic_step(u: ScalarField, model: LagrangianModel, x, t: float, opts: ConvolutionOptions | None = None) -> ConvolutionResult:
    """The unique maximizer of ``u - A_t(x, .)`` for ``t`` below the step time.

    Raises:
        UniquenessViolation: the multi-start extremizers disagree.
    """
    opts = opts or ConvolutionOptions()
    res, spread = _convolve(1.0, u, model, x, t, opts)
    if not res.concavity_ok:
        raise UniquenessViolation(
            f"intrinsic step seeds disagree by {spread:.3e} at x={np.asarray(x).tolist()}, t={t}"
        )
    return res


def step_time(
    u: ScalarField,
    model: LagrangianModel,
    x,
    lam: float | None = None,
    opts: ConvolutionOptions | None = None,
) -> float:
    """Time below which ``u - A_t(x, .)`` is strictly concave near ``x``.

    Returns ``0.5 * C2 / C1`` where ``C2`` is the probed convexity constant of
    ``A_t`` on ``B(x, lam t)`` (``lam = 1 + lambda0`` by default) at the
    first passing trial time, capped by that trial time and by 1.
    """
    opts = opts or ConvolutionOptions()
    x = np.asarray(x, dtype=float).reshape(model.dim)
    if lam is None:
        lam = 1.0 + lambda0(model, float(u.lip_estimate))
    t_trial = 1.0
    trials = []
    for _ in range(opts.max_halvings):
        rep = probe_convexity(
            model, x, t_trial, lam, opts.probe_samples, seed=opts.probe_seed, solver="shooting", opts=opts.action
        )
        trials.append((t_trial, rep.constant_estimate))
        if rep.verdict:
            c2 = rep.constant_estimate
            c1 = float(u.semiconcavity)
            t0 = t_trial if c1 <= 0 else 0.5 * c2 / c1
            return float(min(t0, t_trial, 1.0))
        t_trial *= 0.5
    raise ProbeFailure(f"convexity probe failed at all trial times: {trials}")
