from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hjsing.errors import UniquenessViolation
from hjsing.fields import ScalarField, grid_field, linear, neg_abs_1d, two_source_eikonal
from hjsing.lax_oleinik import (
    barrier_phi,
    inf_convolution,
    intrinsic_step,
    search_radius,
    step_time,
    sup_convolution,
    torus_shifts,
    wrap_unit,
)
from hjsing.models import get_model

FREE2 = get_model("free", dim=2)
EIK1 = get_model("mechanical(eikonal)", dim=1)
EIK2 = get_model("mechanical(eikonal)", dim=2)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.05, 0.8))
def test_linear_field_closed_form(x1, x2, t):
    a = np.array([0.6, -0.3])
    u = linear(a)
    x = np.array([x1, x2])
    sup = sup_convolution(u, FREE2, x, t)
    np.testing.assert_allclose(sup.y, x + t * a, atol=1e-7)
    assert sup.value == pytest.approx(a @ x + 0.5 * t * a @ a, abs=1e-9)
    inf = inf_convolution(u, FREE2, x, t)
    np.testing.assert_allclose(inf.y, x - t * a, atol=1e-7)
    assert inf.value == pytest.approx(a @ x - 0.5 * t * a @ a, abs=1e-9)
    assert not sup.boundary_flag and not inf.boundary_flag


@given(st.floats(-1.5, 1.5), st.floats(0.05, 0.5))
def test_sup_dominates_barrier_samples(x, t):
    u = neg_abs_1d()
    res = sup_convolution(u, EIK1, [x], t)
    _, R = search_radius(u, EIK1, t)
    for y in np.linspace(x - R, x + R, 7):
        assert res.value >= barrier_phi(u, EIK1, [x], [y], t) - 1e-9
    assert res.value == pytest.approx(barrier_phi(u, EIK1, [x], res.y, t), abs=1e-9)


def test_neg_abs_sup_stays_at_kink():
    res = sup_convolution(neg_abs_1d(), EIK1, [0.0], 0.7)
    assert abs(res.y[0]) < 1e-8
    assert res.value == pytest.approx(-0.35, abs=1e-9)
    assert res.concavity_ok


def test_neg_abs_off_kink_moves_by_t():
    # maximizer of -|y| - (y - x)^2/(2t) is y = x - t sign(x) while |x| > t
    res = sup_convolution(neg_abs_1d(), EIK1, [1.0], 0.3)
    assert res.y[0] == pytest.approx(0.7, abs=1e-8)
    assert res.value == pytest.approx(-0.7 - 0.3, abs=1e-9)


def test_two_source_step_time_and_intrinsic_step():
    u = two_source_eikonal()
    t0 = step_time(u, EIK2, [0.0, 1.0])
    # convexity constant of the eikonal kernel is 1, C1 = 2
    assert t0 == pytest.approx(0.25, rel=1e-6)
    for s in (0.05, 0.1, 0.2):
        y = intrinsic_step(u, EIK2, [0.0, 1.0], s).y
        assert abs(y[0]) < 1e-8
        # the maximizer on the bisector solves eta - 1 = s eta / sqrt(1 + eta^2)
        eta = y[1]
        assert eta - 1 - s * eta / math.sqrt(1 + eta * eta) == pytest.approx(0.0, abs=1e-8)


def test_intrinsic_step_rejects_symmetric_maximizers():
    u = ScalarField(1, lambda x: np.abs(np.asarray(x)[..., 0]), 1.0, 0.0, np.array([-2.0]), np.array([2.0]), name="abs")
    with pytest.raises(UniquenessViolation):
        intrinsic_step(u, EIK1, [0.0], 0.3)


def test_search_radius():
    lam, R = search_radius(neg_abs_1d(), get_model("free"), 0.4)
    assert lam == pytest.approx(3.0)
    assert R == pytest.approx(1.2)


def test_periodic_field_translation_invariance():
    model = get_model("pendulum")
    axes = [np.arange(1, 129) / 128]
    u = grid_field(axes, 0.1 * np.sin(2 * np.pi * axes[0]), periodic=True)
    a = sup_convolution(u, model, [0.2], 0.05)
    b = sup_convolution(u, model, [1.2], 0.05)
    assert a.value == pytest.approx(b.value, abs=1e-9)


def test_torus_helpers():
    assert len(torus_shifts(2, 1)) == 9
    assert wrap_unit(np.array([1.25, -0.25]))[0] == pytest.approx(0.25)
    assert wrap_unit(np.array([1.25, -0.25]))[1] == pytest.approx(0.75)
