from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grazing_optics.errors import LipschitzViolation, NonZeroMean, ResonantDivision
from grazing_optics.obstacle import parabola
from grazing_optics.phase import ReflectedFlow
from grazing_optics.transport import (
    ProfileGrid,
    SourceSpec,
    chi,
    corrector_coefficients,
    decompose_samples,
    decompose_source,
    modes_from_samples,
    samples_from_modes,
    smooth_step,
    theta_nodes,
    theta_primitive,
    transport_solve,
    truncate_along_flow,
)


def test_theta_primitive_cos_to_sin():
    # cos(theta) has modes +-1 equal to 1/2; its primitive is sin(theta)
    full = np.array([0.5, 0.0, 0.5], complex)
    prim = theta_primitive(full)
    th = np.linspace(0, 2 * np.pi, 9)
    n = np.array([-1, 0, 1])
    vals = np.real(np.sum(prim * np.exp(1j * n * th[:, None]), axis=1))
    np.testing.assert_allclose(vals, np.sin(th), atol=1e-15)


def test_theta_primitive_rejects_mean():
    with pytest.raises(NonZeroMean):
        theta_primitive(np.array([0.0, 1.0, 0.0], complex))


def test_modes_round_trip():
    q = 16
    th = theta_nodes(q)
    v = np.cos(th) - 0.3 * np.sin(2 * th)
    mean, modes = modes_from_samples(v, 4)
    assert abs(mean) < 1e-15
    np.testing.assert_allclose(samples_from_modes(modes, th), v, atol=1e-14)
    with pytest.raises(NonZeroMean):
        modes_from_samples(v + 1.0, 4, mean_tol=1e-12)


def test_transport_constant_coefficient():
    s = np.linspace(0.0, 1.0, 201)
    w = transport_solve(s, 2.0, np.array([1.0 + 0.5j]))
    np.testing.assert_allclose(w[:, 0], (1.0 + 0.5j) * np.exp(-2.0 * s), rtol=1e-4)


def _manufactured_error(k):
    # W' + c W = f with c = cos s, W = sin(3 s) + 1
    s = np.linspace(0.0, 1.0, k + 1)
    c = np.cos(s)
    exact = np.sin(3 * s) + 1.0
    f = 3 * np.cos(3 * s) + c * exact
    w = transport_solve(s, c, np.array(1.0), source=f)
    return float(np.max(np.abs(w - exact)))


def test_transport_second_order():
    e = [_manufactured_error(k) for k in (50, 100, 200)]
    for a, b in zip(e, e[1:]):
        assert a / b == pytest.approx(4.0, abs=0.5)


def test_sqrt_j_conservation():
    flow = ReflectedFlow(parabola(2.0), [1.0])
    s = np.arange(0.0, 0.5 + 1e-12, 1e-3)
    # feet outside the mu = 0.1 cutoff zone near grazing
    xb = np.linspace(-0.9, -0.25, 6)[:, None]
    c = 0.5 * flow.dlogj_ds(s[None, :], xb[:, None, :])
    w = transport_solve(s, c, np.ones(len(xb)), method="simpson")
    j = flow.jacobian_analytic(s[None, :], xb[:, None, :])
    inv = np.sqrt(j) * w
    assert np.max(np.abs(inv - inv[:, :1])) <= 1e-6 * np.max(np.abs(inv))


def test_source_lipschitz():
    sp = SourceSpec("sin_sum", 0.3)
    assert sp.check_lipschitz() <= 0.3 * (1 + 1e-6)
    assert SourceSpec("zero").lipschitz == 0.0
    with pytest.raises(ValueError):
        SourceSpec("cubic", 1.0)


def test_lipschitz_violation_detected():
    class Bad(SourceSpec):
        def __call__(self, u, q):
            return 2 * self.kappa * np.asarray(u, float)

    with pytest.raises(LipschitzViolation):
        Bad("sin_u", 0.5).check_lipschitz()


def test_decomposition_parts():
    q = 16
    th = theta_nodes(q)
    tr, ti = th[:, None], th[None, :]
    vals = (0.7 + np.cos(tr) + 0.5 * np.sin(2 * ti) + 0.25 * np.cos(tr + ti))[None]
    d = decompose_samples(vals, 4, 3)
    assert d.mean[0] == pytest.approx(0.7)
    assert d.char_r[0, 0] == pytest.approx(0.5)
    assert d.char_i[0, 1] == pytest.approx(-0.25j)
    ar, ai = d.alpha_index()
    assert d.nc[0][(ar == 1) & (ai == 1)][0] == pytest.approx(0.125)
    assert d.parseval_error < 1e-14
    rng = np.random.default_rng(0)
    a, b = rng.uniform(0, 2 * np.pi, 2)
    target = 0.7 + np.cos(a) + 0.5 * np.sin(2 * b) + 0.25 * np.cos(a + b)
    assert d.reconstruct(np.array([a]), np.array([b]))[0] == pytest.approx(target)


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_decompose_source_reconstructs(u, q2):
    sp = SourceSpec("sin_sum", 0.4)
    wr = np.array([[0.3j, 0.0]])
    wi = np.array([[-0.2j, 0.0]])
    gr = np.array([[1.0, 0.0, -1.0]])
    gi = np.array([[0.0, 1.0, -1.0]])
    d = decompose_source(sp, np.array([u]), np.array([[0.0, q2, 0.0]]), wr, wi, gr, gi, n_modes=15, M=15, q=32)
    a, b = 0.4, 1.3
    # dphi_r has no x2 component, so W_r drops out of q_x2
    Wi = samples_from_modes(wi[0], b)
    exact = 0.4 * np.sin(u + q2 + Wi)
    assert d.reconstruct(np.array([a]), np.array([b]))[0] == pytest.approx(exact, abs=1e-10)


def test_corrector_coefficients_solve_symbol():
    q = 16
    th = theta_nodes(q)
    vals = np.cos(th[:, None] + th[None, :])[None]
    d = decompose_samples(vals, 4, 2)
    gi = np.array([[0.0, 1.0, -1.0]])
    gr = np.array([[0.6, 0.8, -1.0]])
    tab = corrector_coefficients(d, gi, gr)
    # p(dphi_r + dphi_i) = 0.36 + 1.8^2 - 4 = -0.4
    ar, ai = np.meshgrid(np.arange(-2, 3), np.arange(-2, 3), indexing="ij")
    assert tab.U[0][(ar == 1) & (ai == 1)][0] == pytest.approx(-0.5 / -0.4)
    with pytest.raises(ResonantDivision):
        corrector_coefficients(d, gi, gi)


def test_cutoffs():
    assert chi(-1.0) == pytest.approx(1.0)
    assert chi(-0.5) == pytest.approx(0.0)
    z = np.linspace(-2, 1, 301)
    assert np.all(np.diff(chi(z)) <= 0)
    np.testing.assert_allclose(smooth_step(np.array([-1.0, 0.0, 0.5, 1.0, 2.0])), [0, 0, 0.5, 1, 1])


def test_truncate_along_flow_constant_on_rays():
    z1 = np.array([-0.3, -0.06, -0.02, 0.05])[:, None]
    W = ProfileGrid("Reflected", {"ray": np.arange(4.0), "s": np.linspace(0, 1, 5)},
                    np.ones((4, 5, 2), complex), z1=z1)
    out = truncate_along_flow(W, 0.1).values
    np.testing.assert_allclose(out[:, :, 0], out[:, :1, 0] * np.ones(5))
    assert out[0, 0, 0] == pytest.approx(1.0)
    assert out[2, 0, 0] == 0.0
    with pytest.raises(ValueError):
        truncate_along_flow(ProfileGrid("Reflected", {}, np.ones((2, 1))), 0.1)
