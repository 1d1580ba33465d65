from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hjsing.errors import NotSingularSeed, StepFailure
from hjsing.fields import ScalarField, neg_abs_1d, two_source_eikonal
from hjsing.models import get_model
from hjsing.propagation import (
    TraceOptions,
    arc_from_points,
    certify_inclusion,
    energy_monitor,
    fd_velocities,
    initial_velocity,
    trace_arc,
)
from oracles import bisector_ode

EIK1 = get_model("mechanical(eikonal)", dim=1)
EIK2 = get_model("mechanical(eikonal)", dim=2)


@pytest.fixture(scope="module")
def short_two_source_arc():
    u = two_source_eikonal()
    return u, trace_arc(u, EIK2, [0.0, 1.0], 0.3)


def test_short_two_source_arc(short_two_source_arc):
    u, arc = short_two_source_arc
    assert arc.stopped_reason == "horizon"
    assert arc.times[-1] == pytest.approx(0.3)
    assert np.max(np.abs(arc.points[:, 0])) < 1e-8
    sol = bisector_ode(0.3)
    assert np.max(np.linalg.norm(arc.points - sol(arc.times).T, axis=1)) < 1e-2
    assert np.all(np.diff(arc.points[:, 1]) > 0)
    assert np.all(arc.singular_flags)
    assert arc.segment_starts()[0] == 0
    rows = arc.to_rows()
    assert len(rows) == len(arc.times)
    assert len(rows[0]) == len(arc.csv_header())


def test_energy_monitor_genuine_and_adversarial(short_two_source_arc):
    u, arc = short_two_source_arc
    genuine = energy_monitor(arc, u, EIK2)
    assert genuine.feasible
    assert genuine.required_c1 <= genuine.c1_cap
    assert genuine.c2 >= 0.0
    # the same arc against a rescaled field has covectors far from D+u
    adversarial = energy_monitor(arc, u.scaled(0.5), EIK2)
    assert not adversarial.feasible
    assert adversarial.required_c1 > 10.0


def test_neg_abs_arc_is_constant():
    arc = trace_arc(neg_abs_1d(), EIK1, [0.0], 0.2)
    assert np.max(np.abs(arc.points)) <= 1e-8
    assert certify_inclusion(arc, neg_abs_1d(), EIK1).passed


def test_regular_seed_is_rejected():
    with pytest.raises(NotSingularSeed):
        trace_arc(two_source_eikonal(), EIK2, [0.5, 1.0], 0.1)


def test_step_failure_carries_partial_arc():
    # u = |x| has two symmetric maximizers at every step from x = 0
    u = ScalarField(1, lambda x: np.abs(np.asarray(x)[..., 0]), 1.0, 0.0, np.array([-2.0]), np.array([2.0]), name="abs")
    with pytest.raises(StepFailure) as info:
        trace_arc(u, EIK1, [0.0], 0.2, TraceOptions(max_halvings=1))
    assert info.value.time_reached == 0.0
    assert info.value.arc is not None
    assert len(info.value.arc.times) == 1


def test_initial_velocity_two_source():
    v = initial_velocity(two_source_eikonal(), EIK2, [0.0, 1.0])
    np.testing.assert_allclose(v, [0.0, 1 / math.sqrt(2)], atol=1e-5)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_fd_velocities_exact_on_quadratics(a, b, c):
    times = np.array([0.0, 0.1, 0.25, 0.3, 0.6])
    pts = (a + b * times + c * times**2)[:, None]
    v = fd_velocities(times, pts)
    np.testing.assert_allclose(v[:, 0], b + 2 * c * times[1:-1], atol=1e-9)


def _quadratic_bowl():
    return ScalarField(
        2,
        lambda x: 0.5 * np.sum(np.asarray(x, dtype=float) ** 2, axis=-1),
        3.0,
        1.0,
        np.array([-2.0, -2.0]),
        np.array([2.0, 2.0]),
        name="bowl",
    )


def test_smooth_characteristic_certificate_converges_quadratically():
    # for u = |x|^2/2 and H = |p|^2/2 the characteristic is y = e^s y0
    u = _quadratic_bowl()
    model = get_model("free", dim=2)
    y0 = np.array([0.3, 0.2])
    res = []
    for m in (8, 16, 32):
        times = np.linspace(0.0, 0.5, m + 1)
        arc = arc_from_points(times, np.exp(times)[:, None] * y0)
        res.append(certify_inclusion(arc, u, model).max_residual)
    assert res[-1] < 1e-3
    assert res[0] / res[1] == pytest.approx(4.0, rel=0.2)
    assert res[1] / res[2] == pytest.approx(4.0, rel=0.2)


def test_perturbed_characteristic_fails_certificate():
    u = _quadratic_bowl()
    model = get_model("free", dim=2)
    times = np.linspace(0.0, 0.5, 33)
    pts = np.exp(times)[:, None] * np.array([0.3, 0.2])
    pts[:, 1] += 0.2 * np.sin(2 * math.pi * times)
    assert not certify_inclusion(arc_from_points(times, pts), u, model).passed


def test_arc_from_points_accepts_transposed_input():
    arc = arc_from_points([0.0, 0.5, 1.0], np.array([[0.0, 1.0, 2.0]]))
    assert arc.points.shape == (3, 1)
    with pytest.raises(ValueError):
        certify_inclusion(arc_from_points([0.0, 1.0], [[0.0], [1.0]]), neg_abs_1d(), EIK1)
