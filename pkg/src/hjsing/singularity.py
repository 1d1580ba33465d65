"""Reachable gradients, minimal-energy covectors and point classification."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .action import ActionOptions, fundamental_solution
from .errors import DegenerateSamples
from .fields import ScalarField
from .geometry import distance_to_hull, hull_vertices, min_norm_point, project_simplex
from .models import HamiltonianModel, LagrangianModel

logger = logging.getLogger(__name__)

CLUSTER_FRACTION = 0.05


@dataclass
class SuperdiffEstimate:
    """Finite-sample estimate of the reachable gradients ``D*u(x)``.

    Attributes:
        reachable: Cluster representatives, one row per covector.
        hull_vertices: Rows of ``reachable`` spanning the convex hull.
        diameter: Maximum pairwise distance among ``reachable``.
        sample_radius: Outer sampling radius.
        sample_count: Number of accepted gradient samples.
        eps_cluster: Single-linkage threshold used.
    """

    x: np.ndarray
    reachable: np.ndarray
    hull_vertices: np.ndarray
    diameter: float
    sample_radius: float
    sample_count: int
    eps_cluster: float

    @property
    def eps_sing(self) -> float:
        return 2.0 * self.eps_cluster

    def to_dict(self) -> dict:
        return {
            "x": self.x.tolist(),
            "reachable": self.reachable.tolist(),
            "hull_vertices": self.hull_vertices.tolist(),
            "diameter": self.diameter,
            "sample_radius": self.sample_radius,
            "sample_count": self.sample_count,
            "eps_cluster": self.eps_cluster,
        }


def default_radius(u: ScalarField) -> float:
    """Sampling radius: tiny for analytic fields, a few cells for grids."""
    if u.mode == "grid" and u.fd_scale > 0:
        return float(u.fd_scale)
    return 1e-4


def _fd_gradients(u: ScalarField, P: np.ndarray, h: float) -> np.ndarray:
    n = P.shape[1]
    G = np.empty_like(P)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        G[:, i] = (np.asarray(u(P + e)) - np.asarray(u(P - e))) / (2 * h)
    return G


def reachable_gradients(
    u: ScalarField,
    x,
    radius: float | None = None,
    sample_count: int = 96,
    seed: int = 0,
) -> SuperdiffEstimate:
    """Estimate ``D*u(x)`` from gradients sampled on shrinking balls.

    Samples are drawn uniformly in balls of radius ``r, r/2, r/4``.  Each
    gradient is a central difference with step ``r/100``; samples whose
    gradient changes by more than ``eps_cluster / 4`` when the step is halved
    straddle a kink and are rejected.  Accepted gradients are clustered by
    single linkage at ``eps_cluster = 0.05 Lip(u)``; each cluster is
    represented by the mean of its members from the smallest shell present.

    Raises:
        DegenerateSamples: no sample is accepted or difference quotients
            exceed the Lipschitz estimate by a wide margin.
    """
    x = np.asarray(x, dtype=float).reshape(u.dim)
    n = u.dim
    r = default_radius(u) if radius is None else float(radius)
    lip = float(u.lip_estimate)
    eps_cluster = CLUSTER_FRACTION * max(lip, 1e-12)
    rng = np.random.default_rng(seed)
    per_shell = max(4, sample_count // 3)
    pts, shells = [], []
    for k, rho in enumerate((r, r / 2, r / 4)):
        d = rng.normal(size=(per_shell, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        d *= rho * rng.uniform(0.0, 1.0, size=(per_shell, 1)) ** (1.0 / n)
        pts.append(x + d)
        shells.append(np.full(per_shell, k))
    P = np.vstack(pts)
    shell = np.concatenate(shells)
    h = r / 100.0
    if u.mode == "grid":
        # interpolants are piecewise linear; the step must stay inside a cell
        h = min(h, 0.01 * r)
    G1 = _fd_gradients(u, P, h)
    G2 = _fd_gradients(u, P, h / 2)
    ok = np.linalg.norm(G1 - G2, axis=1) <= 0.25 * eps_cluster
    norms = np.linalg.norm(G2, axis=1)
    if np.any(norms[ok] > 2.0 * lip + 1e-9):
        raise DegenerateSamples(
            f"difference quotients up to {norms[ok].max():.3e} exceed Lip estimate {lip:.3e} at x={x.tolist()}"
        )
    G, S = G2[ok], shell[ok]
    if len(G) == 0:
        raise DegenerateSamples(f"no differentiability samples accepted near x={x.tolist()}")
    # project onto the Lipschitz ball: FD noise may overshoot by a few ulps
    gn = np.linalg.norm(G, axis=1, keepdims=True)
    G = np.where(gn > lip, G * (lip / np.maximum(gn, 1e-300)), G)
    if len(G) == 1:
        labels = np.array([1])
    else:
        labels = fcluster(linkage(G, method="single"), t=eps_cluster, criterion="distance")
    reps = []
    for lab in np.unique(labels):
        mem = labels == lab
        smallest = S[mem].max()
        reps.append(G[mem & (S == smallest)].mean(axis=0))
    R = np.array(reps)
    if len(R) > 1:
        diff = R[:, None, :] - R[None, :, :]
        diam = float(np.max(np.linalg.norm(diff, axis=2)))
    else:
        diam = 0.0
    verts = R[hull_vertices(R)] if len(R) > 1 else R.copy()
    return SuperdiffEstimate(x, R, verts, diam, r, int(len(G)), eps_cluster)


def minimal_energy_element(
    ham: HamiltonianModel,
    x,
    est: SuperdiffEstimate | np.ndarray,
    tol: float = 1e-14,
    max_iter: int = 2000,
) -> tuple[np.ndarray, float]:
    """Minimize ``H(x, .)`` over ``co(hull_vertices)``.

    Projected gradient on the simplex of convex weights, started from the
    min-norm point (exact for ``H = |p|^2/2 + V``), with backtracking.
    """
    x = np.asarray(x, dtype=float)
    Vt = np.atleast_2d(est.hull_vertices if isinstance(est, SuperdiffEstimate) else np.asarray(est, dtype=float))
    if len(Vt) == 1:
        p = Vt[0].copy()
        return p, float(ham.H(x, p))
    _, w = min_norm_point(Vt)

    def f(w):
        return float(ham.H(x, w @ Vt))

    fw = f(w)
    step = 1.0
    for _ in range(max_iter):
        g = Vt @ ham.H_p(x, w @ Vt)
        while True:
            w_new = project_simplex(w - step * g)
            f_new = f(w_new)
            if f_new <= fw - 1e-4 * float(g @ (w - w_new)) or step < 1e-14:
                break
            step *= 0.5
        moved = float(np.max(np.abs(w_new - w)))
        w, fw = w_new, min(f_new, fw)
        if moved <= tol:
            break
        step *= 2.0
    p = w @ Vt
    return p, float(ham.H(x, p))


@dataclass
class PointClassification:
    """Criticality flags of a point of a semiconcave field.

    ``strong_critical`` implies ``critical`` because ``H_p(x, p_x)`` is
    included among the images tested for criticality.
    """

    x: np.ndarray
    singular: bool
    critical: bool
    strong_critical: bool
    stationarity: bool
    p_x: np.ndarray
    H_at_px: float
    velocity: np.ndarray
    eps_crit: float
    critical_distance: float
    stationarity_distance: float
    dyA: np.ndarray
    t_probe: float
    estimate: SuperdiffEstimate = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "x": self.x.tolist(),
            "singular": self.singular,
            "critical": self.critical,
            "strong_critical": self.strong_critical,
            "stationarity": self.stationarity,
            "p_x": self.p_x.tolist(),
            "H_at_px": self.H_at_px,
            "velocity": self.velocity.tolist(),
            "eps_crit": self.eps_crit,
            "critical_distance": self.critical_distance,
            "stationarity_distance": self.stationarity_distance,
            "D_yA_t(x,x)": self.dyA.tolist(),
            "t_probe": self.t_probe,
            "diameter": self.estimate.diameter,
            "eps_sing": self.estimate.eps_sing,
            "reachable": self.estimate.reachable.tolist(),
        }


def _newton_zero(ham: HamiltonianModel, x: np.ndarray, p: np.ndarray, tol: float, max_iter: int = 50) -> np.ndarray:
    """Solve ``H_p(x, p) = 0`` by Newton from ``p``."""
    for _ in range(max_iter):
        r = ham.H_p(x, p)
        if np.linalg.norm(r) <= tol:
            break
        p = p - np.linalg.solve(ham.H_pp(x, p), r)
    return p


def classify_point(
    u: ScalarField,
    model: LagrangianModel,
    x,
    t_probe: float,
    est: SuperdiffEstimate | None = None,
    seed: int = 0,
    action_opts: ActionOptions | None = None,
) -> PointClassification:
    """Classify ``x`` as singular, critical, strong critical and step-stationary.

    Args:
        u: Semiconcave field.
        model: Tonelli Lagrangian; its Hamiltonian supplies ``H_p``.
        x: Point.
        t_probe: Step time for the stationarity test ``D_yA_t(x, x) in co D+u(x)``.
        est: Precomputed superdifferential estimate.
        seed: RNG seed for gradient sampling.
    """
    x = np.asarray(x, dtype=float).reshape(u.dim)
    ham = model.hamiltonian
    if est is None:
        est = reachable_gradients(u, x, seed=seed)
    p_x, h_px = minimal_energy_element(ham, x, est)
    v0 = np.asarray(ham.H_p(x, p_x), dtype=float)
    eps_crit = 1e-3 * (1.0 + float(np.linalg.norm(v0)))
    images = np.vstack([ham.H_p(x, v) for v in est.hull_vertices] + [v0])
    crit_dist = float(np.linalg.norm(min_norm_point(images)[0]))
    p_star = _newton_zero(ham, x, p_x.copy(), 1e-12)
    strong = bool(
        np.linalg.norm(ham.H_p(x, p_star)) <= eps_crit and distance_to_hull(p_star, est.hull_vertices) <= eps_crit
    )
    fs = fundamental_solution(model, x, x, t_probe, action_opts)
    stat_dist = distance_to_hull(fs.grad_y, est.hull_vertices)
    return PointClassification(
        x=x,
        singular=bool(est.diameter > est.eps_sing),
        critical=bool(crit_dist <= eps_crit),
        strong_critical=strong,
        stationarity=bool(stat_dist <= eps_crit),
        p_x=p_x,
        H_at_px=h_px,
        velocity=v0,
        eps_crit=eps_crit,
        critical_distance=crit_dist,
        stationarity_distance=stat_dist,
        dyA=np.asarray(fs.grad_y, dtype=float),
        t_probe=float(t_probe),
        estimate=est,
    )
