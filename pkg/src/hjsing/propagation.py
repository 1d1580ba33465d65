"""Singular generalized characteristics by concatenated intrinsic steps."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .action import fundamental_solution_batch
from .errors import HJSingError, NotSingularSeed, StepFailure, UniquenessViolation
from .fields import ScalarField
from .geometry import distance_to_hull
from .lax_oleinik import ConvolutionOptions, intrinsic_step, step_time
from .models import LagrangianModel
from .singularity import PointClassification, SuperdiffEstimate, classify_point, minimal_energy_element, reachable_gradients

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TraceOptions:
    """Controls for :func:`trace_arc`.

    Attributes:
        fractions: Sample times within a segment, as fractions of its length.
        max_segment: Cap on the segment length.  Each segment restarts the
            maximizer construction from its endpoint, which behaves like an
            implicit Euler step of the characteristic; the cap bounds that
            first-order splitting error.
        max_halvings: Segment halvings allowed after a uniqueness violation.
        gradient_radius: Sampling radius for superdifferential estimates.
        gradient_samples: Gradient samples per estimate.
        seed: RNG seed for gradient sampling.
        convolution: Options of the intrinsic steps and step-time probes.
    """

    fractions: tuple[float, ...] = (0.125, 0.25, 0.5, 1.0)
    max_segment: float = 0.05
    max_halvings: int = 6
    gradient_radius: float | None = None
    gradient_samples: int = 96
    seed: int = 0
    convolution: ConvolutionOptions = field(default_factory=ConvolutionOptions)


@dataclass
class SingularArc:
    """A traced arc with per-point diagnostics.

    ``points`` are reported in the fundamental domain for periodic fields;
    ``unwrapped`` holds the continuous lift and ``unwrap_shifts`` the
    integer offsets between the two.
    """

    times: np.ndarray
    points: np.ndarray
    p_x_list: np.ndarray
    singular_flags: np.ndarray
    inclusion_residuals: np.ndarray
    step_times_used: list[float]
    stopped_reason: str
    segment_index: np.ndarray
    dual_covectors: np.ndarray
    diameters: np.ndarray
    eps_sing: float
    c_arc: float
    unwrapped: np.ndarray
    unwrap_shifts: np.ndarray
    classifications: list[PointClassification] = field(default_factory=list, repr=False)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def segment_starts(self) -> np.ndarray:
        """Indices of the points where segments begin."""
        idx = [0]
        for i in range(1, len(self.segment_index)):
            if self.segment_index[i] != self.segment_index[i - 1]:
                idx.append(i - 1)
        return np.array(sorted(set(idx)))

    def csv_header(self) -> list[str]:
        return ["time"] + [f"x{i + 1}" for i in range(self.dim)] + ["p_x_norm", "singular_flag", "residual"]

    def to_rows(self) -> list[list]:
        return [
            [self.times[i], *self.points[i].tolist(), float(np.linalg.norm(self.p_x_list[i])), bool(self.singular_flags[i]), self.inclusion_residuals[i]]
            for i in range(len(self.times))
        ]


def arc_from_points(times, points) -> SingularArc:
    """Wrap a bare ``(times, points)`` curve as a single-segment arc for certification."""
    times = np.asarray(times, dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] != len(times):
        pts = pts.T
    m, n = pts.shape
    nan = np.full(m, np.nan)
    return SingularArc(
        times=times,
        points=pts,
        p_x_list=np.zeros((m, n)),
        singular_flags=np.zeros(m, dtype=bool),
        inclusion_residuals=nan,
        step_times_used=[],
        stopped_reason="horizon",
        segment_index=np.zeros(m, dtype=int),
        dual_covectors=np.zeros((m, n)),
        diameters=nan.copy(),
        eps_sing=float("nan"),
        c_arc=float("nan"),
        unwrapped=pts,
        unwrap_shifts=np.zeros((m, n), dtype=int),
    )


def _estimate(u: ScalarField, x: np.ndarray, opts: TraceOptions) -> SuperdiffEstimate:
    return reachable_gradients(u, x, opts.gradient_radius, opts.gradient_samples, seed=opts.seed)


def initial_velocity(u: ScalarField, model: LagrangianModel, x, est: SuperdiffEstimate | None = None, seed: int = 0) -> np.ndarray:
    """``H_p(x, p_x)`` with ``p_x`` the minimal-energy element of ``D+u(x)``."""
    x = np.asarray(x, dtype=float).reshape(u.dim)
    if est is None:
        est = reachable_gradients(u, x, seed=seed)
    p_x, _ = minimal_energy_element(model.hamiltonian, x, est)
    return np.asarray(model.hamiltonian.H_p(x, p_x), dtype=float)


def trace_arc(
    u: ScalarField,
    model: LagrangianModel,
    x0,
    horizon: float,
    opts: TraceOptions | None = None,
) -> SingularArc:
    """Trace a singular arc from ``x0`` over ``[0, horizon]``.

    Each segment starts at the current point ``x``, probes a step time
    ``t0`` (never above the previous one, nor ``max_segment``), records the
    maximizers of ``u - A_s(x, .)`` at ``s = f t0`` for the configured
    fractions ``f`` and restarts from the last one.  Uniqueness violations
    halve the segment.

    Raises:
        NotSingularSeed: ``x0`` is not singular.
        StepFailure: a segment failed after all halvings; carries the
            partial arc and the time reached.
    """
    opts = opts or TraceOptions()
    x = np.asarray(x0, dtype=float).reshape(u.dim)
    t_local = step_time(u, model, x, opts=opts.convolution)
    cls0 = classify_point(u, model, x, min(t_local, opts.max_segment), est=_estimate(u, x, opts))
    if not cls0.singular:
        raise NotSingularSeed(
            f"x0={x.tolist()} is not singular (diameter {cls0.estimate.diameter:.3e} <= {cls0.estimate.eps_sing:.3e})"
        )
    times = [0.0]
    pts = [x.copy()]
    duals = [cls0.p_x.copy()]
    seg_idx = [0]
    used: list[float] = []
    time = 0.0
    prev = math.inf
    reason = "horizon"
    failure: HJSingError | None = None
    seg = 0
    while horizon - time > 1e-12 * max(1.0, horizon):
        try:
            t_probe = step_time(u, model, x, opts=opts.convolution)
        except HJSingError as exc:
            reason, failure = "solver-failure", exc
            break
        prev = min(prev, t_probe)
        t0 = min(prev, opts.max_segment, horizon - time)
        samples = None
        for _ in range(opts.max_halvings + 1):
            try:
                samples = [intrinsic_step(u, model, x, f * t0, opts.convolution) for f in opts.fractions]
                break
            except UniquenessViolation as exc:
                logger.info("uniqueness violation at t=%.4g, halving segment %.3g", time, t0)
                failure = exc
                t0 *= 0.5
            except HJSingError as exc:
                failure = exc
                samples = None
                reason = "solver-failure"
                break
        if samples is None:
            if reason == "horizon":
                reason = "uniqueness-violation"
            break
        seg += 1
        for f, res in zip(opts.fractions, samples):
            times.append(time + f * t0)
            pts.append(res.y.copy())
            duals.append(np.asarray(res.kernel_grad, dtype=float).copy())
            seg_idx.append(seg)
        used.append(t0)
        time += t0
        x = samples[-1].y.copy()
    arc = _finish(u, model, np.array(times), np.array(pts), np.array(duals), np.array(seg_idx), used, reason, cls0, opts)
    if reason != "horizon":
        raise StepFailure(f"arc stopped at t={time:.6g}: {failure}", time_reached=time, arc=arc)
    return arc


def _finish(u, model, times, pts, duals, seg_idx, used, reason, cls0, opts) -> SingularArc:
    classes = [cls0]
    for i in range(1, len(times)):
        s = times[i] - times[i - 1] if times[i] > times[i - 1] else used[-1] if used else 0.1
        classes.append(classify_point(u, model, pts[i], max(s, 1e-6), est=_estimate(u, pts[i], opts)))
    steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    dts = np.diff(times)
    c_arc = float(np.max(steps / dts)) if len(dts) else 0.0
    if u.periodic:
        shifts = -np.floor(pts - 1e-15)
        shifts = np.where(np.mod(pts, 1.0) == 0.0, -(pts - 1.0), shifts)
        wrapped = pts + shifts
    else:
        shifts = np.zeros_like(pts)
        wrapped = pts.copy()
    arc = SingularArc(
        times=times,
        points=wrapped,
        p_x_list=np.array([c.p_x for c in classes]),
        singular_flags=np.array([c.singular for c in classes]),
        inclusion_residuals=np.full(len(times), np.nan),
        step_times_used=list(used),
        stopped_reason=reason,
        segment_index=seg_idx,
        dual_covectors=duals,
        diameters=np.array([c.estimate.diameter for c in classes]),
        eps_sing=cls0.estimate.eps_sing,
        c_arc=c_arc,
        unwrapped=pts,
        unwrap_shifts=shifts.astype(int) if len(pts) else shifts,
        classifications=classes,
    )
    if len(times) >= 3:
        cert = certify_inclusion(arc, u, model, estimates=[c.estimate for c in classes])
        for s in cert.samples:
            arc.inclusion_residuals[s["index"]] = s["distance"]
    return arc


# ---------------------------------------------------------------------------
# Certification


@dataclass
class InclusionCertificate:
    """Residuals of ``y' in co H_p(y, D+u(y))`` at interior arc samples."""

    samples: list[dict]
    max_residual: float
    velocity_scale: float
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "max_residual": self.max_residual,
            "velocity_scale": self.velocity_scale,
            "tol": self.tol,
            "verdict": "pass" if self.passed else "fail",
            "samples": self.samples,
        }


def fd_velocities(times: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Second-order three-point velocities at interior nodes of a nonuniform grid."""
    t = np.asarray(times, dtype=float)
    h1 = (t[1:-1] - t[:-2])[:, None]
    h2 = (t[2:] - t[1:-1])[:, None]
    return (
        -h2 / (h1 * (h1 + h2)) * pts[:-2]
        + (h2 - h1) / (h1 * h2) * pts[1:-1]
        + h1 / (h2 * (h1 + h2)) * pts[2:]
    )


def certify_inclusion(
    arc: SingularArc,
    u: ScalarField,
    model: LagrangianModel,
    tol: float = 2e-2,
    estimates: list[SuperdiffEstimate] | None = None,
    seed: int = 0,
) -> InclusionCertificate:
    """Check the differential inclusion at interior samples of ``arc``.

    Passes iff the largest distance from the finite-difference velocity to
    ``co{H_p(y, p) : p in hull of D*u(y)}`` is at most
    ``tol * (1 + max |velocity|)``.
    """
    pts = arc.unwrapped if arc.unwrapped is not None else arc.points
    if len(arc.times) < 3:
        raise ValueError("certify_inclusion needs at least three arc points")
    vel = fd_velocities(arc.times, pts)
    ham = model.hamiltonian
    samples = []
    for k, v in enumerate(vel):
        i = k + 1
        y = arc.points[i]
        est = estimates[i] if estimates is not None else reachable_gradients(u, y, seed=seed)
        images = np.vstack([ham.H_p(y, p) for p in est.hull_vertices])
        d = distance_to_hull(v, images)
        samples.append({"index": i, "time": float(arc.times[i]), "velocity": v.tolist(), "distance": float(d)})
    max_res = max(s["distance"] for s in samples)
    scale = float(np.max(np.linalg.norm(vel, axis=1)))
    return InclusionCertificate(samples, float(max_res), scale, tol, bool(max_res <= tol * (1.0 + scale)))


@dataclass
class EnergyReport:
    """Fit of ``H(y, p) <= H(x, p_x) + C1 s - C2 |p - p_x|^2`` along an arc.

    ``feasible`` is true iff nonnegative constants with ``C1 <= c1_cap``
    make every excess nonpositive (up to ``tol``).  Reported constants are
    ``C1 = c1_cap`` with the largest compatible ``C2``; ``required_c1`` is the
    smallest feasible ``C1`` (at ``C2 = 0``).
    """

    c1: float
    c2: float
    feasible: bool
    c1_cap: float
    required_c1: float
    samples: list[dict]
    segments: list[dict]

    def to_dict(self) -> dict:
        return {
            "C1": self.c1,
            "C2": self.c2,
            "feasible": self.feasible,
            "C1_cap": self.c1_cap,
            "required_C1": self.required_c1,
            "segments": self.segments,
            "samples": self.samples,
        }


def energy_monitor(
    arc: SingularArc,
    u: ScalarField,
    model: LagrangianModel,
    c1_cap: float = 10.0,
    tol: float = 1e-9,
    seed: int = 0,
) -> EnergyReport:
    """Fit the energy estimate along the arc's segments.

    ``p_x`` at each segment start is recomputed from ``u`` and the dual
    covector ``p(s) = D_yA_s(x, y(s))`` from the model, so the arc can be
    monitored against a field other than the one that produced it.  The
    constants are shared across the arc.
    """
    ham = model.hamiltonian
    pts = arc.unwrapped
    starts: dict[int, int] = {}
    idx, seg_of, start_of = [], [], []
    for i in range(1, len(arc.times)):
        seg = int(arc.segment_index[i])
        starts.setdefault(seg, i - 1)
        idx.append(i)
        seg_of.append(seg)
        start_of.append(starts[seg])
    if not idx:
        return EnergyReport(0.0, 0.0, True, c1_cap, 0.0, [], [])
    p_start = {}
    for j in sorted(set(start_of)):
        est = reachable_gradients(u, arc.points[j], seed=seed)
        p_start[j] = minimal_energy_element(ham, arc.points[j], est)[0]
    idx_a, start_a = np.array(idx), np.array(start_of)
    S = arc.times[idx_a] - arc.times[start_a]
    sol = fundamental_solution_batch(model, pts[start_a], pts[idx_a], S)
    rows = []
    for k, (i, seg, j) in enumerate(zip(idx, seg_of, start_of)):
        p, px = sol.grad_y[k], p_start[j]
        a = float(ham.H(arc.points[i], p) - ham.H(arc.points[j], px))
        d = float(np.sum((p - px) ** 2))
        rows.append((i, seg, float(S[k]), a, d))
    if not rows:
        return EnergyReport(0.0, 0.0, True, c1_cap, 0.0, [], [])
    S = np.array([r[2] for r in rows])
    A = np.array([r[3] for r in rows])
    D = np.array([r[4] for r in rows])
    required = float(max(0.0, np.max((A - tol) / S)))
    feasible = required <= c1_cap
    if feasible:
        # largest C2 compatible with C1 = c1_cap; C2 = 0 when no covector moves
        c1 = c1_cap
        slack = tol - A + c1 * S
        moving = D > 0
        c2 = float(np.min(slack[moving] / D[moving])) if np.any(moving) else 0.0
    else:
        c1, c2 = required, 0.0
    excess = A - c1 * S + c2 * D
    samples = [
        {"index": r[0], "segment": r[1], "s": r[2], "dH": r[3], "dp2": r[4], "excess": float(e)}
        for r, e in zip(rows, excess)
    ]
    segments = []
    for seg in sorted(starts):
        m = np.array([r[1] == seg for r in rows])
        segments.append({"segment": seg, "max_excess": float(np.max(excess[m])), "required_C1": float(max(0.0, np.max((A[m] - tol) / S[m])))})
    return EnergyReport(c1, c2, bool(feasible), c1_cap, required, samples, segments)
