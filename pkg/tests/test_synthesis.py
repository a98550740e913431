from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grazing_optics.errors import StencilUnresolved
from grazing_optics.obstacle import parabola
from grazing_optics.profiles import DataSpec, LinearProfiles, Scenario2D
from grazing_optics.synthesis import (
    AsymptoticField,
    box_fd,
    box_quadrature,
    grad_fd,
    oscillatory_norm_check,
    residual_scan,
    stencil_points,
)

DATA = DataSpec(center=(0.825, -1.1), width=(0.225, 0.15))


def _mean(m):
    return np.sin(m[:, 0]) * np.cos(m[:, 2]), np.zeros((len(m), 3))


def test_zero_profiles_give_mean_field():
    P = np.random.default_rng(0).uniform(0, 1, (20, 3))
    fld = AsymptoticField(None, 0.05, mean=_mean)
    np.testing.assert_array_equal(fld.evaluate(P), _mean(P)[0])


def test_superposition():
    sc = Scenario2D(parabola(2.0), T=0.5, data=DATA)
    lin = LinearProfiles(sc)
    P = np.random.default_rng(1).uniform((0.6, -1.0, -0.3), (1.2, -0.2, 0.5), (200, 3))
    full = AsymptoticField(lin, 0.05, mean=_mean).evaluate(P)
    parts = AsymptoticField(lin, 0.05).evaluate(P) + AsymptoticField(None, 0.05, mean=_mean).evaluate(P)
    np.testing.assert_allclose(full, parts, atol=1e-15)


def test_stencils_exact_on_quartics():
    # fourth-order stencils are exact on polynomials of degree <= 4 up to rounding
    P = np.array([[0.3, -0.2, 0.1]])
    h = 1e-2
    st_ = stencil_points(P, h)
    f = lambda m: m[..., 0] ** 4 + m[..., 1] ** 2 * m[..., 2] - m[..., 2] ** 3
    vals = f(st_)
    x1, x2, t = P[0]
    box = 12 * x1 ** 2 + 2 * t - (-6 * t)
    assert box_fd(vals, h)[0] == pytest.approx(box, rel=1e-9)
    np.testing.assert_allclose(grad_fd(vals, h)[0], [4 * x1 ** 3, 2 * x2 * t, x2 ** 2 - 3 * t ** 2], rtol=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.2, 2.0), st.floats(-1, 1))
def test_plane_wave_box_zero(k, c):
    # cos(k (x2 - t) + c) solves the wave equation
    P = np.random.default_rng(2).uniform(-1, 1, (10, 3))
    h = 1e-3
    st_ = stencil_points(P, h)
    vals = np.cos(k * (st_[..., 1] - st_[..., 2]) + c)
    assert np.max(np.abs(box_fd(vals, h))) < 1e-6


def test_single_phase_norm_limit():
    quad = box_quadrature((0.2, -0.3, -0.3), (0.8, 0.3, 0.3), 60)
    b = lambda x: np.exp(-np.sum((x - np.array([0.5, 0, 0])) ** 2, axis=-1) / 0.05)
    rep = oscillatory_norm_check(lambda x, th: b(x) * np.sin(th), lambda x: x[..., 1] - x[..., 2],
                                 [1 / 10, 1 / 20, 1 / 40, 1 / 80], quad)
    exact = np.sqrt(np.sum(quad[1] * b(quad[0]) ** 2) / 2)
    assert rep.limit == pytest.approx(exact, rel=1e-12)
    assert rep.passed


def test_residual_requires_resolution():
    sc = Scenario2D(parabola(2.0), T=0.5, data=DATA)
    with pytest.raises(StencilUnresolved):
        residual_scan(AsymptoticField(LinearProfiles(sc), 0.1), sc, h=0.02)


def test_residual_eikonal_and_dirichlet():
    sc = Scenario2D(parabola(2.0), T=0.5, data=DATA)
    rep = residual_scan(AsymptoticField(LinearProfiles(sc), 0.1), sc, count=400)
    assert rep.eikonal_max <= 1e-12
    assert rep.dirichlet_defect <= 1e-12
    assert rep.norms["total"] > 0
