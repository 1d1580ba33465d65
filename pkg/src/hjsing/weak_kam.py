"""Torus fundamental solutions, weak KAM solutions and arcs on the torus."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, fields
from functools import cached_property

import numpy as np

from .action import ActionOptions, FundamentalSolution, fundamental_solution, fundamental_solution_batch
from .errors import NoConvergence, ShiftBoundary
from .fields import ScalarField, grid_field
from .models import LagrangianModel, action_bound, conjugate_bound, lambda0
from .propagation import SingularArc, TraceOptions, trace_arc

logger = logging.getLogger(__name__)

_K_GRID = tuple(0.25 * 2.0 ** (j / 2) for j in range(24))


def check_periodic(model: LagrangianModel, samples: int = 32, seed: int = 0, tol: float = 1e-10) -> None:
    """Verify ``L(x + e_i, v) = L(x, v)`` on random samples.

    Raises:
        ValueError: the Lagrangian is not periodic.
    """
    rng = np.random.default_rng(seed)
    n = model.dim
    X = rng.uniform(0.0, 1.0, size=(samples, n))
    V = rng.normal(size=(samples, n))
    base = model.L(X, V)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        if np.max(np.abs(model.L(X + e, V) - base)) > tol * (1.0 + np.max(np.abs(base))):
            raise ValueError(f"model {model.name!r} is not periodic in direction {i}")


def wrapped_distance(x, y) -> float:
    """Distance between the classes of ``x`` and ``y`` on the unit torus."""
    d = np.mod(np.asarray(y, dtype=float) - np.asarray(x, dtype=float) + 0.5, 1.0) - 0.5
    return float(np.linalg.norm(d))


def to_fundamental_domain(x) -> np.ndarray:
    """Representative in ``Q = (0, 1]^n``."""
    r = np.mod(np.asarray(x, dtype=float), 1.0)
    return np.where(r == 0.0, 1.0, r)


def torus_small_time(model: LagrangianModel) -> float:
    """Time below which nearby classes are joined by their nearest representatives.

    ``t0 = k sqrt(n) / (kappa1(1) + theta*(k) + c0 + k)`` maximized over a
    grid of ``k``, with ``kappa1(1)`` bounded by the action bound at speed 1.
    """
    n = model.dim
    k1 = action_bound(model, 1.0)
    c0 = model.c0
    return max(k * math.sqrt(n) / (k1 + conjugate_bound(model, k) + c0 + k) for k in _K_GRID)


def _action_lower_bound(model: LagrangianModel, d: np.ndarray, t: float) -> np.ndarray:
    """``max_k k|y - x| - t (theta*(k) + c0)``, a lower bound of ``A_t``."""
    ks = np.array(_K_GRID + tuple(64.0 * 2.0**j for j in range(10)))
    ts = np.array([conjugate_bound(model, k) for k in ks])
    return np.max(ks[None, :] * d[:, None] - t * (ts[None, :] + model.c0), axis=1)


@dataclass
class TorusFundamentalSolution(FundamentalSolution):
    """Planar solution for the winning representative pair.

    ``x`` is the representative of the first class in ``Q``; ``y`` is the
    winning lift ``y_Q + shift``.
    """

    shift: np.ndarray = field(default_factory=lambda: np.zeros(0))
    widened: bool = False
    nearest: bool = True
    nearest_ok: bool = True
    candidates: list[tuple[list[int], float]] = field(default_factory=list)


def fundamental_solution_torus(
    model: LagrangianModel,
    x_class,
    y_class,
    t: float,
    opts: ActionOptions | None = None,
    shift_radius: int = 1,
    max_radius: int = 4,
) -> TorusFundamentalSolution:
    """``A_t([x], [y])`` as the minimum of planar values over integer shifts.

    Raises:
        ShiftBoundary: the best shift stays on the boundary of the widest
            shift box.
    """
    n = model.dim
    x = to_fundamental_domain(np.asarray(x_class, dtype=float).reshape(n))
    y = to_fundamental_domain(np.asarray(y_class, dtype=float).reshape(n))
    radius = shift_radius
    cache: dict[tuple, FundamentalSolution] = {}
    widened = False
    while True:
        for k in itertools.product(range(-radius, radius + 1), repeat=n):
            if k not in cache:
                cache[k] = fundamental_solution(model, x, y + np.array(k, dtype=float), t, opts)
        best = min(cache, key=lambda k: (cache[k].value, k))
        if max(abs(c) for c in best) < radius:
            break
        if radius >= max_radius:
            raise ShiftBoundary(f"best shift {best} on the boundary of radius {radius}")
        radius += 1
        widened = True
        logger.info("widening torus shift radius to %d", radius)
    nearest_shift = tuple(int(v) for v in np.round(x - y))
    nearest = best == nearest_shift
    nearest_ok = True
    if t <= torus_small_time(model) and wrapped_distance(x, y) < t and not nearest:
        nearest_ok = False
        logger.warning("torus winner %s is not the nearest representative %s", best, nearest_shift)
    fs = cache[best]
    base = {f.name: getattr(fs, f.name) for f in fields(FundamentalSolution)}
    return TorusFundamentalSolution(
        **base,
        shift=np.array(best, dtype=int),
        widened=widened,
        nearest=bool(nearest),
        nearest_ok=nearest_ok,
        candidates=[(list(k), cache[k].value) for k in sorted(cache)],
    )


@dataclass(eq=False)
class TorusGrid:
    """Nodal values on ``Q = (0, 1]^n`` at nodes ``(i + 1)/N``."""

    dim: int
    resolution: int
    values: np.ndarray

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.arange(1, self.resolution + 1) / self.resolution for _ in range(self.dim)]

    @cached_property
    def field(self) -> ScalarField:
        return grid_field(self.axes, self.values, periodic=True, name=f"torus_grid({self.resolution})")

    def __call__(self, x):
        return self.field(x)

    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def csv_header(self) -> list[str]:
        return ["index"] + [f"x{i + 1}" for i in range(self.dim)] + ["u"]

    def to_rows(self) -> list[list]:
        X = self.nodes()
        v = self.values.reshape(-1)
        return [[i, *X[i].tolist(), v[i]] for i in range(len(v))]


@dataclass
class WeakKamResult:
    """Converged weak KAM solution.

    Attributes:
        c: Critical value estimate.
        u: Solution on the grid, normalized to ``min u = 0``.
        iterations: Lax-Oleinik sweeps performed.
        residual: ``sup |u - (T-_t u + c t)|`` for the discrete operator.
        t_step: Step time of the operator.
        c_history: Per-sweep estimates of ``c``.
        delta_history: Per-sweep ``sup |v_{k+1} - v_k|``.
    """

    c: float
    u: TorusGrid
    iterations: int
    residual: float
    t_step: float
    c_history: list[float] = field(default_factory=list, repr=False)
    delta_history: list[float] = field(default_factory=list, repr=False)
    operator: "TorusOperator | None" = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "iterations": self.iterations,
            "residual": self.residual,
            "t_step": self.t_step,
            "resolution": self.u.resolution,
            "dim": self.u.dim,
        }


class TorusOperator:
    """Discrete ``T-_t`` on a torus grid: ``(T v)_i = min_o v_{i+o} + K_{i,o}``.

    ``K_{i,o} = A_t([x_i + o/N], [x_i])`` over the offsets ``o`` inside the
    search ball of radius ``lambda0 t`` (clamped to half the torus).
    Planar values are computed by batched shooting for the nearest
    representative; other shifts are evaluated only where the action lower
    bound does not already exclude them.
    """

    def __init__(self, model: LagrangianModel, resolution: int, t: float, lip_u: float, opts: ActionOptions | None = None, chunk: int = 65536):
        n = model.dim
        N = resolution
        self.model, self.N, self.t, self.dim = model, N, float(t), n
        radius = min(lambda0(model, lip_u) * t, 0.5 * math.sqrt(n))
        rng = np.arange(-(N // 2) + 1, N // 2 + 1) if N % 2 == 0 else np.arange(-(N // 2), N // 2 + 1)
        offs = np.array(list(itertools.product(rng, repeat=n)), dtype=int)
        offs = offs[np.linalg.norm(offs / N, axis=1) <= radius + 1e-12]
        self.offsets = offs
        idx = np.array(list(itertools.product(range(N), repeat=n)), dtype=int)
        strides = N ** np.arange(n - 1, -1, -1)
        nb = np.mod(idx[:, None, :] + offs[None, :, :], N)
        self.neighbors = nb @ strides
        X = (idx + 1) / N
        P = len(idx) * len(offs)
        starts = (X[:, None, :] + offs[None, :, :] / N).reshape(P, n)
        ends = np.repeat(X, len(offs), axis=0)
        K = self._values(starts, ends, opts, chunk)
        shifts = [np.array(k, dtype=float) for k in itertools.product((-1, 0, 1), repeat=n) if any(k)]
        for k in shifts:
            lifted = starts + k
            lb = _action_lower_bound(model, np.linalg.norm(lifted - ends, axis=1), self.t)
            need = np.nonzero(lb < K)[0]
            if len(need):
                K[need] = np.minimum(K[need], self._values(lifted[need], ends[need], opts, chunk))
        self.kernel = K.reshape(len(idx), len(offs))

    def _values(self, X, Y, opts, chunk) -> np.ndarray:
        out = np.empty(len(X))
        for s in range(0, len(X), chunk):
            b = fundamental_solution_batch(self.model, X[s : s + chunk], Y[s : s + chunk], self.t, opts=opts)
            out[s : s + chunk] = b.value
        return out

    def __call__(self, v: np.ndarray) -> np.ndarray:
        flat = v.reshape(-1)
        return np.min(flat[self.neighbors] + self.kernel, axis=1).reshape(v.shape)


def weak_kam_solve(
    model: LagrangianModel,
    resolution: int,
    t_step: float | None = None,
    tol: float = 1e-10,
    max_iter: int = 20000,
    lip_guess: float | None = None,
    opts: ActionOptions | None = None,
    operator: TorusOperator | None = None,
) -> WeakKamResult:
    """Weak KAM solution and critical value by Lax-Oleinik iteration.

    Iterates ``w = T-_t v``, reads ``c_k = -max(w - v)/t``, renormalizes
    ``v <- w - min w`` and stops once ``sup |v_{k+1} - v_k| < tol``.

    Raises:
        NoConvergence: the sweep budget ran out.
    """
    check_periodic(model)
    n = model.dim
    if t_step is None:
        t_step = min(0.05, torus_small_time(model))
    if lip_guess is None:
        # |Du| <= max over the torus of the speed at energy c, bounded via c <= max L(x, 0)
        lip_guess = math.sqrt(2.0 * (model.c0 + action_bound(model, 0.0)))
    op = operator or TorusOperator(model, resolution, t_step, lip_guess, opts)
    v = np.zeros((resolution,) * n)
    c_hist, d_hist = [], []
    c = float("nan")
    for it in range(1, max_iter + 1):
        w = op(v)
        c = -float(np.max(w - v)) / t_step
        w = w - np.min(w)
        delta = float(np.max(np.abs(w - v)))
        c_hist.append(c)
        d_hist.append(delta)
        v = w
        if delta < tol:
            break
    else:
        raise NoConvergence(f"weak KAM iteration did not converge in {max_iter} sweeps (last delta {d_hist[-1]:.3e})", d_hist[-1])
    w = op(v)
    c = -float(np.mean(w - v)) / t_step
    residual = float(np.max(np.abs(v - (w + c * t_step))))
    return WeakKamResult(c, TorusGrid(n, resolution, v), it, residual, t_step, c_hist, d_hist, op)


def trace_arc_torus(
    u: TorusGrid | ScalarField,
    model: LagrangianModel,
    x0_class,
    horizon: float,
    opts: TraceOptions | None = None,
) -> SingularArc:
    """:func:`trace_arc` on the torus; points are reported in ``Q``."""
    check_periodic(model)
    f = u.field if isinstance(u, TorusGrid) else u
    if not f.periodic:
        raise ValueError("trace_arc_torus needs a periodic field")
    x0 = to_fundamental_domain(np.asarray(x0_class, dtype=float).reshape(model.dim))
    return trace_arc(f, model, x0, horizon, opts)
