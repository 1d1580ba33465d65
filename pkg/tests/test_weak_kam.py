from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hjsing.errors import NoConvergence
from hjsing.fields import ScalarField
from hjsing.models import get_model
from hjsing.weak_kam import (
    check_periodic,
    fundamental_solution_torus,
    to_fundamental_domain,
    torus_small_time,
    trace_arc_torus,
    weak_kam_solve,
    wrapped_distance,
)
from oracles import pendulum_branch_profile

PENDULUM = get_model("pendulum")


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_wrapped_distance_properties(x, y):
    d = wrapped_distance([x], [y])
    assert 0.0 <= d <= 0.5 + 1e-12
    assert d == pytest.approx(wrapped_distance([y], [x]), abs=1e-12)
    assert d == pytest.approx(wrapped_distance([x + 3.0], [y - 1.0]), abs=1e-9)
    r = to_fundamental_domain([x])[0]
    assert 0.0 < r <= 1.0


def test_periodicity_check():
    check_periodic(get_model("pendulum", dim=2))
    with pytest.raises(ValueError):
        check_periodic(get_model("harmonic"))


def test_free_particle_torus_value_uses_nearest_shift():
    fs = fundamental_solution_torus(get_model("free"), [0.1], [0.9], 0.1)
    assert fs.value == pytest.approx(0.2)
    assert fs.shift.tolist() == [-1]
    assert fs.nearest and fs.nearest_ok


def test_torus_small_time_pendulum():
    t0 = torus_small_time(PENDULUM)
    assert 0.09 < t0 < 0.11


def test_free_particle_critical_value_is_zero():
    res = weak_kam_solve(get_model("free"), 64)
    assert abs(res.c) < 1e-10
    assert np.ptp(res.u.values) < 1e-10


def test_pendulum_coarse(pendulum_kam_512):
    coarse = weak_kam_solve(PENDULUM, 128)
    assert coarse.c == pytest.approx(1.0, abs=1e-2)
    assert coarse.residual <= 1e-6
    assert coarse.u.values.min() == 0.0
    # refinement keeps c and moves the profile towards the oracle
    fine = pendulum_kam_512

    def err(res):
        d = res.u.values - pendulum_branch_profile(res.u.axes[0])
        return (d.max() - d.min()) / 2

    assert err(fine) <= err(coarse) + 1e-12
    assert fine.to_dict()["c"] == pytest.approx(fine.c)


def test_weak_kam_iteration_cap():
    with pytest.raises(NoConvergence):
        weak_kam_solve(PENDULUM, 64, max_iter=1)


def test_torus_grid_interpolant(pendulum_kam_512):
    grid = pendulum_kam_512.u
    assert grid(np.array([0.3])) == pytest.approx(grid(np.array([1.3])), abs=1e-14)
    assert len(grid.to_rows()) == 512
    assert grid.csv_header() == ["index", "x1", "u"]


def _product_field():
    def f(x):
        return (2 / math.pi) * (1 - np.abs(np.cos(math.pi * x)))

    return ScalarField(
        2,
        lambda x: np.sum(f(np.asarray(x, dtype=float)), axis=-1),
        2 * math.sqrt(2),
        2 * math.pi,
        np.zeros(2),
        np.ones(2),
        periodic=True,
        name="pendulum_product",
    )


def test_product_pendulum_arc_on_two_torus():
    # u = f(x1) + f(x2) solves the 2-D pendulum problem; from (1/2, 1/4) the
    # arc runs along the kink line x1 = 1/2 with y2' = 2 sin(pi y2)
    arc = trace_arc_torus(_product_field(), get_model("pendulum", dim=2), [0.5, 0.25], 0.1)
    assert arc.stopped_reason == "horizon"
    oracle = (2 / math.pi) * np.arctan(math.tan(math.pi / 8) * np.exp(2 * math.pi * arc.times))
    assert np.max(np.abs(arc.points[:, 0] - 0.5)) < 1e-8
    assert np.max(np.abs(arc.points[:, 1] - oracle)) < 1e-6


def test_pendulum_kink_is_strong_critical():
    from hjsing.singularity import classify_point

    u = ScalarField(1, lambda x: (2 / math.pi) * (1 - np.abs(np.cos(math.pi * np.asarray(x)[..., 0]))), 2.0, 2 * math.pi, np.zeros(1), np.ones(1), periodic=True)
    c = classify_point(u, PENDULUM, [0.5], 0.02)
    assert c.singular and c.critical and c.strong_critical
