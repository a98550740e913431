from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grazing_optics.errors import NotOnBoundary
from grazing_optics.hamiltonian import (
    WAVE,
    CotangentPoint,
    classify_boundary_point,
    glancing_order,
    hamilton_field,
    integrate_batch,
    integrate_bichar,
    minkowski,
    wave_symbol,
)
from grazing_optics.obstacle import exp_flat, iso_power, parabola, radial


def test_hamilton_field_wave():
    pt = CotangentPoint(np.array([0.1, 0.2]), 0.3, np.array([0.6, 0.8]), -1.0)
    v = hamilton_field(pt)
    np.testing.assert_allclose(v.x, [1.2, 1.6])
    assert v.t == pytest.approx(2.0)
    np.testing.assert_allclose(v.xi, [0.0, 0.0])
    assert v.tau == 0.0


def test_wave_symbol_and_minkowski():
    assert wave_symbol([3.0, 4.0], 5.0) == pytest.approx(0.0)
    assert minkowski([1.0, 0.0, 1.0], [0.0, 1.0, -1.0]) == pytest.approx(1.0)


def test_straight_line_and_boundary_hit():
    # null ray heading towards the parabola x1 = 1 - x2^2 from x1 = 0.2
    ob = parabola(2.0)
    x0 = np.array([0.2, -0.5])
    d = np.array([1.0, 0.0])
    start = CotangentPoint(x0, 0.0, d, -1.0)
    b = integrate_bichar(start, 0.5, obstacle=ob)
    end = b.end()
    np.testing.assert_allclose(end.x, x0 + 2 * 0.5 * d, atol=1e-12)
    assert end.t == pytest.approx(1.0)
    assert len(b.boundary_hits) == 1
    s_hit, y = b.boundary_hits[0]
    np.testing.assert_allclose(y[:2], [0.75, -0.5], atol=1e-12)
    assert s_hit == pytest.approx(0.275, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 2.0))
def test_symbol_conserved(a, b, s_max):
    xi = np.array([a, b, 0.3])
    tau = -np.linalg.norm(xi)
    pt = CotangentPoint(np.zeros(3), 0.0, xi, tau)
    out = integrate_batch(pt.as_state()[None], s_max)
    assert abs(WAVE.value(out)[0] - WAVE.value(pt.as_state())) < 1e-12


def test_glancing_parabola():
    rep = glancing_order(parabola(), [1.0])
    assert rep.order == 2
    assert rep.type == "Diffractive"
    assert rep.derivatives[1] == pytest.approx(8.0, rel=1e-6)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_glancing_iso_power(k):
    assert glancing_order(iso_power(k, 3), [1.0, 0.0]).order == 2 * k


def test_glancing_exp_flat_infinite():
    rep = glancing_order(exp_flat(2), [1.0])
    assert rep.infinite
    assert rep.order_label == ">=12"


def test_glancing_radial():
    ob = radial([0.0, 0.0, 1.0], np.diag([1.0, 2.0]))
    assert glancing_order(ob, [1.0, 0.0]).order == 6


def test_glancing_not_on_boundary():
    with pytest.raises(NotOnBoundary):
        glancing_order(parabola(), [1.0], x0=[0.0], x1=0.5)


def test_glancing_hyperbolic_off_grazing():
    assert glancing_order(parabola(2.0), [1.0], x0=[-0.5]).order == 1


def test_classify_boundary_point():
    ob = parabola(2.0)
    assert classify_boundary_point(ob, [1.0], [0.0]) == "Glancing"
    assert classify_boundary_point(ob, [1.0], [-0.5]) == "Hyperbolic"
    # tangential speed above |tau| gives no real lift
    assert classify_boundary_point(ob, [1.0], [0.0], covector=[0.0, 2.0, -1.0]) == "Elliptic"


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 2 * np.pi))
def test_order_rotation_invariant(angle):
    th = [np.cos(angle), np.sin(angle)]
    assert glancing_order(iso_power(2, 3), th).order == 4
