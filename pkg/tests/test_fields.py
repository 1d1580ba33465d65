from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hjsing.errors import GridLoadError, UnknownFixture
from hjsing.fields import (
    fixture_field,
    grid_field,
    linear,
    list_fixtures,
    load_grid,
    neg_abs_1d,
    save_grid,
    two_source_eikonal,
)


def test_fixture_values():
    assert neg_abs_1d()([0.5]) == pytest.approx(-0.5)
    u = two_source_eikonal()
    assert u([0.0, 1.0]) == pytest.approx(math.sqrt(2.0))
    assert u([1.0, 2.0]) == pytest.approx(2.0)
    assert u.lip_estimate == 1.0
    assert u.semiconcavity == pytest.approx(2.0)
    assert linear([3.0, 4.0]).lip_estimate == pytest.approx(5.0)


def test_fixture_ids():
    u = fixture_field("two_source_eikonal((-2,0),(2,0))")
    assert u([0.0, 1.0]) == pytest.approx(math.sqrt(5.0))
    assert fixture_field("linear(1, 2)")([1.0, 1.0]) == pytest.approx(3.0)
    assert "neg_abs_1d" in list_fixtures()
    with pytest.raises(UnknownFixture):
        fixture_field("nonsense")
    with pytest.raises(UnknownFixture):
        fixture_field("linear")


@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_grid_reproduces_bilinear_functions(x, y):
    axes = [np.linspace(-1, 1, 9), np.linspace(-1, 1, 5)]
    X, Y = np.meshgrid(*axes, indexing="ij")
    u = grid_field(axes, 1.0 + 2.0 * X - Y + 0.5 * X * Y)
    assert u([x, y]) == pytest.approx(1.0 + 2.0 * x - y + 0.5 * x * y, abs=1e-12)


def test_periodic_grid_wraps():
    axes = [np.arange(1, 65) / 64]
    u = grid_field(axes, np.sin(2 * np.pi * axes[0]), periodic=True)
    assert u([0.3]) == pytest.approx(u([1.3]), abs=1e-14)
    assert u([-0.7]) == pytest.approx(u([0.3]), abs=1e-14)
    assert u([0.25]) == pytest.approx(1.0, abs=2e-3)
    assert u.lip_estimate >= 2 * np.pi * 0.99


def test_grid_estimates_for_concave_data():
    axes = [np.linspace(-1, 1, 41)]
    u = grid_field(axes, -np.abs(axes[0]))
    assert u.lip_estimate == pytest.approx(1.1, rel=1e-9)
    assert u.semiconcavity <= 1e-12


def test_save_load_roundtrip(tmp_path):
    axes = [np.linspace(0, 1, 4), np.linspace(-1, 1, 3)]
    values = np.arange(12.0).reshape(4, 3)
    path = tmp_path / "g.csv"
    save_grid(path, axes, values)
    assert path.read_bytes().count(b"\r") == 0
    u = load_grid(path)
    assert u([1.0 / 3.0, 0.0]) == pytest.approx(values[1, 1])
    assert u.mode == "grid"


def test_load_grid_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("index,x1,u\n0,0.0,1.0\n1,abc,2.0\n")
    with pytest.raises(GridLoadError):
        load_grid(bad)
    with pytest.raises(GridLoadError):
        load_grid(tmp_path / "missing.csv")


def test_shift_and_scale():
    u = two_source_eikonal()
    assert u.shifted(1.0)([0.0, 1.0]) == pytest.approx(math.sqrt(2.0) + 1.0)
    v = u.scaled(0.5)
    assert v([0.0, 1.0]) == pytest.approx(math.sqrt(2.0) / 2)
    assert v.lip_estimate == pytest.approx(0.5)
    assert v.semiconcavity == pytest.approx(1.0)
