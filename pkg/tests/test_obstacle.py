from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grazing_optics.errors import ChartAssumptionError, OutOfDomain
from grazing_optics.obstacle import (
    QUARTIC_VARIANTS,
    axis_power,
    build_grazing_chart,
    custom,
    eval_obstacle,
    exp_flat,
    f4_slope_oracle,
    iso_power,
    parabola,
    poly2d,
    quartic3d,
    radial,
    validate_strict_convexity,
)


def test_parabola_values():
    F, g, H = eval_obstacle(parabola(1.0), [0.5])
    assert F == pytest.approx(0.75)
    assert g[0] == pytest.approx(-1.0)
    assert H[0, 0] == pytest.approx(-2.0)


def test_expflat_flat_at_origin():
    F, g, H = eval_obstacle(exp_flat(2), [0.0])
    assert F == 1.0
    assert np.all(g == 0.0) and np.all(H == 0.0)


def test_radial_chain_rule():
    ob = radial([1.0], np.eye(2))
    F, g, _ = eval_obstacle(ob, [0.1, 0.0])
    assert F == pytest.approx(0.99, abs=1e-15)
    np.testing.assert_allclose(g, [-0.2, 0.0], atol=1e-15)


def test_normalization_enforced():
    with pytest.raises(ValueError):
        custom("2 - x2^2", 2)
    with pytest.raises(ValueError):
        custom("1 - x2", 2)


def test_radius_check():
    ob = parabola(1.0)
    with pytest.raises(OutOfDomain):
        ob.F([1.5], check=True)
    assert ob.F([1.5]) == pytest.approx(1 - 2.25)


def test_convexity_quadratic_definite():
    rep = validate_strict_convexity(iso_power(1, 3), samples=2000)
    assert rep.passed and rep.hessian_status == "definite"


def test_convexity_sextic_fails():
    rep = validate_strict_convexity(quartic3d("F6", r=0.8), samples=2000)
    assert not rep.passed


def test_convexity_quartic_semidefinite():
    rep = validate_strict_convexity(quartic3d("F1"), samples=2000)
    assert rep.passed
    assert rep.hessian_status in ("semidefinite", "definite")
    # the Hessian degenerates at the origin, so no uniform definiteness margin
    assert rep.max_hessian_eig > -1e-2


def test_f3_zero_line():
    th = np.array([1.0, 1.0]) / np.sqrt(2)
    ch = build_grazing_chart(quartic3d("F3"), th)
    assert ch.slope == pytest.approx(-1.0, abs=1e-12)
    t = np.linspace(-0.5, 0.5, 11)
    pts = np.stack([t, -t], axis=1)
    np.testing.assert_allclose(ch.grazing_function(pts), 0.0, atol=1e-14)


def test_f4_slope():
    ch = build_grazing_chart(quartic3d("F4"), [1.0, 0.0])
    c = f4_slope_oracle()
    assert 2.5 < c < 3.0
    assert abs(c ** 3 - 2 * c ** 2 - 4) < 1e-10
    assert ch.slope == pytest.approx(c, abs=1e-8)
    # the normal is orthogonal to the direction (1, c) of the line x3 = c x2
    assert abs(np.asarray(ch.line_normal) @ np.array([1.0, c])) < 1e-8
    t = np.linspace(-0.3, 0.3, 7)
    assert np.max(np.abs(ch.zeta(np.stack([t, c * t], axis=1)))) < 1e-8


def test_radial_zeta_is_x2():
    ch = build_grazing_chart(radial([1.0], np.diag([1.0, 2.0])), [1.0, 0.0])
    x = np.array([[0.3, -0.2], [-0.1, 0.4]])
    np.testing.assert_allclose(ch.zeta(x), x[:, 0])
    assert ch.regularity == "Smooth"


def test_two_dimensional_chart():
    ch = build_grazing_chart(parabola(), [1.0])
    assert ch.zeta(np.array([[0.25]]))[0] == 0.25
    assert ch.hp_zeta() != 0.0


def test_custom_three_dimensional_chart_unsupported():
    with pytest.raises(ChartAssumptionError):
        build_grazing_chart(custom("1 - x2^2 - x3^2 - x2^4", 3), [1.0, 0.0])


def test_degenerate_leading_hessian_rejected():
    with pytest.raises(ChartAssumptionError):
        build_grazing_chart(quartic3d("F1"), [1.0, 0.0])
    with pytest.raises(ChartAssumptionError):
        build_grazing_chart(axis_power(2, 3), [np.cos(0.3), np.sin(0.3)])
    ch = build_grazing_chart(axis_power(2, 3), [1.0, 0.0])
    assert ch.zeta(np.array([0.2, 0.5])) == 0.2


@pytest.mark.parametrize("ob", [quartic3d("F3"), quartic3d("F4"), quartic3d("F5"),
                                iso_power(1, 3), iso_power(2, 3), radial([1.0, 0.5], [[2.0, 0.3], [0.3, 1.0]]),
                                exp_flat(3, 0.7)])
@settings(max_examples=8, deadline=None)
@given(angle=st.floats(0.0, 2 * np.pi))
def test_zeta_cozero_with_grazing_function(ob, angle):
    """zeta and <grad F, theta> change sign together along transversal segments."""
    th = np.array([np.cos(angle), np.sin(angle)])
    ch = build_grazing_chart(ob, th)
    rng = np.random.default_rng(0)
    R = 0.8 * ob.r
    x = rng.uniform(-R, R, (400, 2))
    x = x[np.linalg.norm(x, axis=1) < R]
    z = ch.zeta(x)
    g = ch.grazing_function(x)
    sel = (np.abs(z) > 1e-10) & (np.abs(g) > 1e-10)
    prod = np.sign(z[sel] * g[sel])
    assert np.all(prod == prod[0])
    assert ch.hp_zeta() != 0.0
    assert ch.hp_zeta() == pytest.approx(2.0 * ch.zeta_grad(np.zeros(2)) @ ch.theta)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.6, 0.6), st.floats(-0.6, 0.6))
def test_custom_hessian_matches_fd(a, b):
    ob = custom("1 - x2^2 - x3^2 - x2^4 + 0.1 * x2 * x3^3 - exp(x2) + 1 + x2", 3)
    x = np.array([a, b])
    h = 1e-4
    H = ob.hess(x)
    fd = np.stack([(ob.grad(x + h * e) - ob.grad(x - h * e)) / (2 * h) for e in np.eye(2)], axis=-1)
    assert np.max(np.abs(H - fd)) <= 1e-6 * max(1.0, np.max(np.abs(H)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.1, 2.0), min_size=1, max_size=3), st.floats(-0.8, 0.8), st.floats(-0.8, 0.8))
def test_supporting_hyperplane_poly2d(coeffs, x, y):
    """F(y) - F(x) <= F'(x)(y - x) for convex even polynomial graphs."""
    cs = []
    for j, c in enumerate(coeffs):
        cs += [c, 0.0] if j < len(coeffs) - 1 else [c]
    ob = poly2d(cs, 1.0)
    lhs = ob.F([y]) - ob.F([x])
    rhs = ob.grad([x])[0] * (y - x)
    assert lhs <= rhs + 1e-12


def test_quartic_variants_have_expected_degrees():
    for name, terms in QUARTIC_VARIANTS.items():
        deg = {sum(k) for k in terms}
        assert len(deg) == 1, name
