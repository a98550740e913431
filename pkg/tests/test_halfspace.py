from __future__ import annotations

import numpy as np
import pytest

from grazing_optics.errors import CFLViolation, ResourceBudget
from grazing_optics.halfspace import (
    HalfSpaceGrid,
    apply_laplacian,
    halfspace_wave_solve,
    kreiss_study,
    make_grid,
)
from grazing_optics.obstacle import parabola


def _manufactured_error(h):
    # u = sin(pi x) sin(pi y) cos t solves Box u = (1 - 2 pi^2) u with u = 0 on the walls
    g = make_grid(1.0, (0.0, 1.0), (0.0, 1.0), h)
    X, Y = np.meshgrid(g.x, g.y, indexing="ij")
    S = np.sin(np.pi * X) * np.sin(np.pi * Y)
    sol = halfspace_wave_solve(g, lambda it, t: (1 - 2 * np.pi ** 2) * S * np.cos(t), u0=S)
    return float(np.max(np.abs(sol.u[-1] - S * np.cos(g.t[-1]))))


def test_leapfrog_second_order():
    e = [_manufactured_error(h) for h in (0.05, 0.025, 0.0125)]
    for a, b in zip(e, e[1:]):
        assert a / b == pytest.approx(4.0, abs=0.5)


def test_flattened_laplacian():
    # w = x1^2 + x1 x2^3 has Laplacian 2 + 6 x1 x2 in physical coordinates
    ob = parabola(2.0)
    errs = []
    for h in (0.02, 0.01):
        g = make_grid(0.5, (-0.8, 0.8), (0.0, 1.0), h, obstacle=ob)
        X1, X2 = g.physical()
        w = X1 ** 2 + X1 * X2 ** 3
        lap = apply_laplacian(g, w)[1:-1, 1:-1]
        errs.append(np.max(np.abs(lap - (2 + 6 * X1 * X2)[1:-1, 1:-1])))
    assert errs[1] < 1e-3
    assert errs[0] / errs[1] == pytest.approx(4.0, abs=0.5)


def test_cfl_violation():
    x = np.linspace(0, 1, 11)
    g = HalfSpaceGrid(x, x, np.linspace(0, 1, 3))
    with pytest.raises(CFLViolation):
        halfspace_wave_solve(g)


def test_resource_budget():
    with pytest.raises(ResourceBudget):
        make_grid(1.0, (0.0, 1.0), (0.0, 1.0), 1e-3, max_nodes=1e6)


def test_kreiss_ratio_shrinks_with_T():
    src = lambda x1, x2, t: np.exp(-((x1 - 0.5) ** 2 + x2 ** 2) / 0.02)
    rows = kreiss_study([0.5, 0.25, 0.125], src)
    ratios = [r["ratio"] for r in rows]
    assert ratios[0] > ratios[1] > ratios[2]


def test_sampling_and_norms():
    g = make_grid(1.0, (0.0, 1.0), (0.0, 0.2), 0.05)
    X, Y = np.meshgrid(g.x, g.y, indexing="ij")
    S = np.sin(np.pi * X) * np.sin(np.pi * Y)
    sol = halfspace_wave_solve(g, lambda it, t: (1 - 2 * np.pi ** 2) * S * np.cos(t), u0=S)
    assert sol.sample(0.5, 0.5, 0.0) == pytest.approx(1.0)
    assert sol.sample(5.0, 0.5, 0.0) == 0.0
    assert sol.h1_norm() > sol.l2_norm() > 0
