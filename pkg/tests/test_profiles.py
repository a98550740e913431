from __future__ import annotations

import numpy as np
import pytest

from grazing_optics.errors import WrongDimension
from grazing_optics.obstacle import iso_power, parabola
from grazing_optics.profiles import (
    DataSpec,
    LinearProfiles,
    MeanData,
    Scenario2D,
    as_profile_grids,
    bump,
    energy_diagnostic,
    picard_iterate,
    profile_rows,
)
from grazing_optics.transport import SourceSpec

DATA = DataSpec(center=(0.825, -1.1), width=(0.225, 0.15))
COARSE = dict(n_incoming=(11, 11, 21), n_reflected=(21, 17, 21), fd_h=0.05)


def test_bump():
    assert bump(0.0) == pytest.approx(1.0)
    assert bump(1.0) == 0.0
    assert bump(-1.2) == 0.0


def test_scenario_checks():
    with pytest.raises(WrongDimension):
        Scenario2D(iso_power(1, 3))
    with pytest.raises(ValueError):
        Scenario2D(parabola(2.0), theta=-1.0)


def test_linear_boundary_coupling():
    ob = parabola(2.0)
    lin = LinearProfiles(Scenario2D(ob, T=0.5, data=DATA))
    x2 = np.linspace(-0.9, -0.3, 13)
    t = np.linspace(-0.5, 0.5, 11)
    X2, T = np.meshgrid(x2, t)
    m = np.stack([ob.F(X2[..., None]), X2, T], axis=-1)
    wi = lin.incoming(m)
    wr, ph, _, ok = lin.reflected(m)
    assert np.max(np.abs(wi)) > 0.1
    assert np.max(np.abs(wr + wi)) <= 1e-12
    # the reflected phase matches the incoming one on the boundary
    assert np.max(np.abs(ph - lin.phase_i(m))[ok]) <= 1e-12


def test_linear_amplitude_law():
    # |W_r| sqrt(j) is constant along a reflected ray
    ob = parabola(2.0)
    lin = LinearProfiles(Scenario2D(ob, T=0.5, data=DATA))
    flow = lin.geo.flow
    xf = -0.5
    tp = -0.3
    s = np.linspace(0.0, 0.35, 8)
    x = flow.forward_space(s, np.full((8, 1), xf))
    m = np.concatenate([x, (tp + 2 * s)[:, None]], axis=1)
    wr, _, _, ok = lin.reflected(m)
    assert ok.all()
    inv = np.abs(wr[:, 0]) * np.sqrt(flow.jacobian_tan2a(s, np.full(8, xf)))
    np.testing.assert_allclose(inv, inv[0], rtol=1e-8)


def test_picard_coarse():
    T = 0.25
    sc = Scenario2D(parabola(2.0), T=T, data=DataSpec(center=(0.825, -0.6 - T), width=(0.225, 0.15)),
                    mean_data=MeanData(amplitude=0.5), source=SourceSpec("sin_sum", 0.1), **COARSE)
    r = picard_iterate(sc, max_iter=12, tol=1e-10)
    assert r.converged_iterate is not None
    assert r.contraction_ratio() < 0.5
    assert r.boundary_coupling() <= 1e-8
    gi, gr = as_profile_grids(r.solver, r.state)
    assert gi.kind == "Incoming" and gr.kind == "Reflected"
    assert len(profile_rows(gr)) == gr.values.size


def test_picard_linear_is_fixed_point():
    sc = Scenario2D(parabola(2.0), T=0.25, data=DATA, **COARSE)
    r = picard_iterate(sc, max_iter=3)
    assert r.trace[0]["diff"] == 0.0
    assert r.converged_iterate == 1


def test_energy_diagnostic_bounded():
    rep = energy_diagnostic(Scenario2D(parabola(2.0), T=0.5, data=DATA))
    assert 0 < rep.constant < 1.0
    assert max(rep.slice_energy) / min(rep.slice_energy) < 1.1
