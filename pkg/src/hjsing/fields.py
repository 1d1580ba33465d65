"""Scalar fields (analytic or grid-backed) and the built-in fixtures."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import GridLoadError, UnknownFixture


@dataclass(frozen=True, eq=False)
class ScalarField:
    """A Lipschitz, semiconcave function on a box (or on the torus).

    Attributes:
        dim: Dimension n.
        func: Vectorized evaluation ``(..., n) -> (...)``.
        lip_estimate: Upper estimate of the Lipschitz constant.
        semiconcavity: Constant ``C1`` with ``u(x+z) + u(x-z) - 2u(x) <= C1 |z|^2``.
        box_lo, box_hi: Domain box (the unit cell for periodic fields).
        mode: ``"analytic"`` or ``"grid"``.
        periodic: Whether the field lives on the unit torus.
        name: Human-readable id.
    """

    dim: int
    func: Callable[[np.ndarray], np.ndarray]
    lip_estimate: float
    semiconcavity: float
    box_lo: np.ndarray
    box_hi: np.ndarray
    mode: str = "analytic"
    periodic: bool = False
    name: str = ""
    fd_scale: float = 0.0

    def __call__(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        val = self.func(x)
        return float(val) if np.ndim(val) == 0 else val

    def shifted(self, c: float) -> "ScalarField":
        """The field ``u + c``."""
        f = self.func
        return ScalarField(
            self.dim, lambda x: f(x) + c, self.lip_estimate, self.semiconcavity, self.box_lo,
            self.box_hi, self.mode, self.periodic, self.name, self.fd_scale,
        )

    def scaled(self, a: float) -> "ScalarField":
        """The field ``a u`` for ``a >= 0``."""
        if a < 0:
            raise ValueError("scaling must be nonnegative to preserve semiconcavity")
        f = self.func
        return ScalarField(
            self.dim, lambda x: a * f(x), a * self.lip_estimate, a * self.semiconcavity, self.box_lo,
            self.box_hi, self.mode, self.periodic, f"{a}*{self.name}", self.fd_scale,
        )


# ---------------------------------------------------------------------------
# Grid-backed fields


def _grid_estimates(axes: Sequence[np.ndarray], values: np.ndarray, periodic: bool) -> tuple[float, float, float]:
    """Lipschitz and semiconcavity estimates with a 10% inflation.

    Second differences use a stride of several cells: a multilinear
    interpolant has convex kinks at nodes that would otherwise dominate the
    quotient at the cell scale.
    """
    n = values.ndim
    grad_sq = 0.0
    c1 = 0.0
    strides = []
    for ax in range(n):
        h = float(axes[ax][1] - axes[ax][0])
        if periodic:
            d = (np.roll(values, -1, axis=ax) - values) / h
        else:
            d = np.diff(values, axis=ax) / h
        grad_sq += float(np.max(np.abs(d))) ** 2
        N = values.shape[ax]
        s = max(1, N // 64)
        strides.append(s * h)
        if periodic:
            dd = np.roll(values, -s, axis=ax) + np.roll(values, s, axis=ax) - 2 * values
        else:
            sl = [slice(None)] * n
            fw, bw, ce = list(sl), list(sl), list(sl)
            fw[ax] = slice(2 * s, None)
            bw[ax] = slice(None, -2 * s if N > 2 * s else None)
            ce[ax] = slice(s, -s if N > 2 * s else None)
            if N <= 2 * s:
                continue
            dd = values[tuple(fw)] + values[tuple(bw)] - 2 * values[tuple(ce)]
        c1 = max(c1, float(np.max(dd)) / (s * h) ** 2)
    lip = 1.1 * math.sqrt(grad_sq)
    return lip, 1.1 * max(c1, 0.0), max(strides)


def grid_field(
    axes: Sequence[np.ndarray],
    values: np.ndarray,
    periodic: bool = False,
    name: str = "grid",
) -> ScalarField:
    """Multilinear interpolant of nodal ``values`` on a tensor grid.

    For ``periodic=True`` the axes must be the nodes ``i/N, i = 1..N`` of the
    unit cell ``(0, 1]`` and evaluation wraps coordinates modulo 1.
    """
    values = np.asarray(values, dtype=float)
    axes = [np.asarray(a, dtype=float) for a in axes]
    n = values.ndim
    lip, c1, fd_scale = _grid_estimates(axes, values, periodic)
    if periodic:
        padded = values
        pad_axes = []
        for ax in range(n):
            last = np.take(padded, [-1], axis=ax)
            padded = np.concatenate([last, padded], axis=ax)
            N = values.shape[ax]
            pad_axes.append(np.arange(N + 1) / N)
        interp = RegularGridInterpolator(pad_axes, padded, method="linear")

        def func(x):
            x = np.asarray(x, dtype=float)
            return interp(np.mod(x, 1.0).reshape(-1, n)).reshape(x.shape[:-1])

        lo, hi = np.zeros(n), np.ones(n)
    else:
        interp = RegularGridInterpolator(axes, values, method="linear", bounds_error=False, fill_value=None)

        def func(x):
            x = np.asarray(x, dtype=float)
            return interp(x.reshape(-1, n)).reshape(x.shape[:-1])

        lo = np.array([a[0] for a in axes])
        hi = np.array([a[-1] for a in axes])
    return ScalarField(n, func, lip, c1, lo, hi, mode="grid", periodic=periodic, name=name, fd_scale=fd_scale)


def load_grid(path: str | Path, periodic: bool = False) -> ScalarField:
    """Load a grid exported as CSV with header ``index, x1..xn, u``."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader if row]
    except (OSError, StopIteration, ValueError) as exc:
        raise GridLoadError(f"cannot read grid {path}: {exc}") from exc
    if len(header) < 3 or header[0] != "index" or header[-1] != "u":
        raise GridLoadError(f"unexpected grid header {header}")
    data = np.array(rows)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise GridLoadError("ragged grid rows")
    n = len(header) - 2
    coords = data[:, 1 : 1 + n]
    axes = [np.unique(coords[:, i]) for i in range(n)]
    shape = tuple(len(a) for a in axes)
    if int(np.prod(shape)) != len(data):
        raise GridLoadError("grid is not a full tensor product")
    order = np.lexsort([coords[:, i] for i in reversed(range(n))])
    values = data[order, -1].reshape(shape)
    return grid_field(axes, values, periodic=periodic, name=f"grid({path.name})")


def save_grid(path: str | Path, axes: Sequence[np.ndarray], values: np.ndarray) -> None:
    """Write a grid as CSV ``index, x1..xn, u`` in C order."""
    from .export import write_csv

    n = len(axes)
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.reshape(-1) for m in mesh], axis=1)
    vals = np.asarray(values).reshape(-1)
    rows = [[i] + coords[i].tolist() + [vals[i]] for i in range(len(vals))]
    write_csv(path, ["index"] + [f"x{i + 1}" for i in range(n)] + ["u"], rows)


# ---------------------------------------------------------------------------
# Fixtures


def neg_abs_1d(box: tuple[float, float] = (-2.0, 2.0)) -> ScalarField:
    """``u(x) = -|x|`` in one dimension."""
    return ScalarField(
        1, lambda x: -np.abs(np.asarray(x)[..., 0]), 1.0, 0.0,
        np.array([box[0]]), np.array([box[1]]), name="neg_abs_1d",
    )


def two_source_eikonal(
    a: Sequence[float] = (-1.0, 0.0),
    b: Sequence[float] = (1.0, 0.0),
    box_lo: Sequence[float] = (-2.0, 0.5),
    box_hi: Sequence[float] = (2.0, 4.0),
) -> ScalarField:
    """Distance to the nearer of two sources, ``min(|x - a|, |x - b|)``.

    Semiconcave with constant ``1 / min distance to the sources`` over the box.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lo = np.asarray(box_lo, dtype=float)
    hi = np.asarray(box_hi, dtype=float)
    dmin = min(_box_distance(a, lo, hi), _box_distance(b, lo, hi))
    if dmin <= 0:
        raise ValueError("the fixture box must exclude both sources")

    def func(x):
        x = np.asarray(x, dtype=float)
        return np.minimum(np.linalg.norm(x - a, axis=-1), np.linalg.norm(x - b, axis=-1))

    return ScalarField(2, func, 1.0, 1.0 / dmin, lo, hi, name="two_source_eikonal")


def _box_distance(p: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    return float(np.linalg.norm(p - np.clip(p, lo, hi)))


def linear(a: Sequence[float], box: float = 2.0) -> ScalarField:
    """``u(x) = <a, x>``."""
    a = np.asarray(a, dtype=float)
    n = len(a)
    return ScalarField(
        n, lambda x: np.asarray(x, dtype=float) @ a, float(np.linalg.norm(a)), 0.0,
        -box * np.ones(n), box * np.ones(n), name="linear",
    )


FIXTURES = {
    "neg_abs_1d": "u(x) = -|x| on [-2, 2]; Lip 1, C1 0",
    "two_source_eikonal(a,b)": "u = min(|x-a|, |x-b|); Lip 1, C1 = 1/dist(sources, box); box [-2,2]x[0.5,4]",
    "linear(a)": "u(x) = <a, x>; Lip |a|, C1 0",
    "grid(path)": "CSV grid 'index,x1..xn,u' with multilinear interpolation",
}

_FIX_RE = re.compile(r"^\s*([a-z0-9_]+)\s*(?:\((.*)\))?\s*$", re.S)


def _floats(text: str) -> list[float]:
    return [float(v) for v in re.findall(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?", text)]


def fixture_field(fixture_id: str, **params) -> ScalarField:
    """Build a fixture by id, e.g. ``"two_source_eikonal((-1,0),(1,0))"`` or ``"grid(u.csv)"``.

    Keyword ``params`` (``a``, ``b``, ``box_lo``, ``box_hi``, ``path``,
    ``periodic``) take precedence over the inline arguments.
    """
    m = _FIX_RE.match(fixture_id)
    if not m:
        raise UnknownFixture(fixture_id)
    base, arg = m.group(1), (m.group(2) or "").strip()
    if base == "neg_abs_1d":
        return neg_abs_1d()
    if base == "two_source_eikonal":
        nums = _floats(arg)
        a = params.get("a", nums[0:2] if len(nums) >= 4 else (-1.0, 0.0))
        b = params.get("b", nums[2:4] if len(nums) >= 4 else (1.0, 0.0))
        kw = {k: params[k] for k in ("box_lo", "box_hi") if k in params}
        return two_source_eikonal(a, b, **kw)
    if base == "linear":
        a = params.get("a", _floats(arg))
        if not len(a):
            raise UnknownFixture("linear fixture needs a coefficient vector")
        return linear(a)
    if base == "grid":
        path = params.get("path", arg)
        if not path:
            raise UnknownFixture("grid fixture needs a path")
        return load_grid(path, periodic=bool(params.get("periodic", False)))
    raise UnknownFixture(fixture_id)


def list_fixtures() -> dict[str, str]:
    return dict(FIXTURES)
