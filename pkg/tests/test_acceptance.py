"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; ``--skip-stretch`` skips
criterion 13 (reported as SKIPPED).
"""

from __future__ import annotations

import time

import numpy as np
import pytest
from scipy.optimize import bisect

from conftest import VERDICTS
from grazing_optics.hamiltonian import glancing_order
from grazing_optics.obstacle import (
    build_grazing_chart,
    exp_flat,
    iso_power,
    parabola,
    poly2d,
    quartic3d,
    radial,
)
from grazing_optics.phase import (
    ReflectedFlow,
    appendix_jacobian_leading,
    flow_map_oracle,
    illuminated_patch,
    injectivity_fuzz,
    jacobian_scaling_near_grazing,
    matrix_lemma_checks,
)
from grazing_optics.profiles import DataSpec, LinearProfiles, MeanData, Scenario2D, picard_iterate
from grazing_optics.synthesis import (
    AsymptoticField,
    box_quadrature,
    corrector_check,
    oscillatory_norm_check,
    reference_compare,
    residual_scan,
    shadow_silence,
)
from grazing_optics.transport import SourceSpec, transport_solve


def verdict(n: int, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


# 1 -----------------------------------------------------------------------------

def test_criterion_01_flow_map_oracle():
    cases = [("parabola", parabola(2.0), [1.0]), ("IsoPower k=2 n=2", iso_power(2, 2), [1.0]),
             ("IsoPower k=2 n=3", iso_power(2, 3), [0.6, 0.8])]
    parts, ok = [], True
    for name, ob, th in cases:
        t0 = time.perf_counter()
        rep = flow_map_oracle(ob, th, count=10000)
        dt = time.perf_counter() - t0
        ok &= rep.samples == 10000 and rep.max_error <= 1e-10 and dt < 10
        parts.append(f"{name} max|err|={rep.max_error:.2e} ({rep.samples} samples, {dt:.1f}s)")
    verdict(1, ok, "; ".join(parts))


# 2 -----------------------------------------------------------------------------

def test_criterion_02_jacobian_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    cases = [("n=2", parabola(2.0), [1.0]), ("n=3", iso_power(1, 3), [0.6, 0.8]),
             ("n=3 F3", quartic3d("F3"), [1.0, 0.0]), ("n=4", iso_power(1, 4), [0.0, 0.6, 0.8])]
    worst_rel, bound_ok, parts = 0.0, True, []
    for name, ob, th in cases:
        flow = ReflectedFlow(ob, th)
        xb = illuminated_patch(ob, th, 0.9 * ob.r, 6000, seed=2, grid=False)
        a = ob.grad(xb) @ flow.theta
        xb, a = xb[a > 0.05][:1000], a[a > 0.05][:1000]
        s = rng.uniform(0.0, 0.5, len(xb))
        ja = flow.jacobian_analytic(s, xb)
        jf = flow.jacobian_fd(s, xb)
        rel = float(np.max(np.abs(ja - jf) / np.abs(ja)))
        if ob.dim == 2:
            rel = max(rel, float(np.max(np.abs(flow.jacobian_tan2a(s, xb[:, 0]) - jf) / np.abs(ja))))
        worst_rel = max(worst_rel, rel)
        bound_ok &= bool(np.all(ja >= 2 * a - 1e-12))
        parts.append(f"{name} rel={rel:.1e}")
    dt = time.perf_counter() - t0
    verdict(2, worst_rel <= 1e-6 and bound_ok and dt < 30,
            f"{', '.join(parts)}; lower bound {'holds' if bound_ok else 'violated'} ({dt:.1f}s)")


# 3 -----------------------------------------------------------------------------

def test_criterion_03_matrix_lemmas():
    t0 = time.perf_counter()
    parts, ok = [], True
    for n in (3, 4, 5):
        ob = iso_power(1, n)
        th = np.zeros(n - 1)
        th[0] = 1.0
        xb = illuminated_patch(ob, th, 0.9, 4000, seed=n, grid=False)
        xb = xb[ob.grad(xb) @ th > 1e-3][:1000]
        worst = 0.0
        for g in ob.grad(xb):
            r = matrix_lemma_checks(g, th)
            scale = max(1.0, r.matrix_scale)
            worst = max(worst, abs(r.det_b - r.det_b_expected) / scale, r.cbt_error / scale)
        ok &= len(xb) == 1000 and worst <= 1e-12
        parts.append(f"n={n} worst={worst:.1e}")
    dt = time.perf_counter() - t0
    verdict(3, ok and dt < 5, f"{', '.join(parts)} over 1000 points each ({dt:.1f}s)")


# 4 -----------------------------------------------------------------------------

def test_criterion_04_order_classification():
    t0 = time.perf_counter()
    got, want = [], []
    for k in (1, 2, 3):
        for dim, th in ((2, [1.0]), (3, [0.6, 0.8])):
            got.append(glancing_order(iso_power(k, dim), th).order)
            want.append(2 * k)
    for dim, th in ((2, [1.0]), (3, [1.0, 0.0])):
        rep = glancing_order(exp_flat(dim), th)
        got.append(rep.order)
        want.append(None)
    # radial: h(s) = sum c_j s^(j+1), first nonzero c_i gives order 2 (i + 1)
    for h in ([1.0], [0.0, 1.0], [0.0, 0.0, 1.0], [0.0, 0.5, 0.3]):
        i = next(j for j, c in enumerate(h) if c != 0)
        got.append(glancing_order(radial(h, np.diag([1.0, 2.0])), [0.6, 0.8]).order)
        want.append(2 * (i + 1))
    dt = time.perf_counter() - t0
    verdict(4, got == want and dt < 5, f"orders {got} (expected {want}, None = >=12) ({dt:.1f}s)")


# 5 -----------------------------------------------------------------------------

def test_criterion_05_grazing_set_geometry():
    t0 = time.perf_counter()
    ch3 = build_grazing_chart(quartic3d("F3"), np.array([1.0, 1.0]) / np.sqrt(2))
    t = np.linspace(-0.5, 0.5, 101)
    on_line = float(np.max(np.abs(ch3.grazing_function(np.stack([t, -t], axis=1)))))
    c_root = bisect(lambda c: c ** 3 - 2 * c ** 2 - 4, 2.0, 4.0, xtol=1e-15)
    ch4 = build_grazing_chart(quartic3d("F4"), [1.0, 0.0])
    dt = time.perf_counter() - t0
    ok = (on_line <= 1e-14 and abs(ch3.slope + 1.0) <= 1e-12 and abs(ch4.slope - c_root) <= 1e-8
          and 2.5 < ch4.slope < 3.0 and dt < 5)
    verdict(5, ok, f"F3 max|G| on x2+x3=0 {on_line:.1e}; F4 slope {ch4.slope:.12f} vs bisection "
                   f"{c_root:.12f} ({dt:.1f}s)")


# 6 -----------------------------------------------------------------------------

def test_criterion_06_injectivity():
    t0 = time.perf_counter()
    cases = [("parabola", parabola(2.0), [1.0]), ("order-4", iso_power(2, 2), [1.0]),
             ("order-4 n=3", iso_power(2, 3), [0.6, 0.8]), ("ExpFlat", exp_flat(2), [1.0])]
    parts, ok = [], True
    for name, ob, th in cases:
        rep = injectivity_fuzz(ReflectedFlow(ob, th), 0.5, 0.9 * ob.r, pairs=100000)
        ok &= rep.collisions == 0 and rep.pairs == 100000
        parts.append(f"{name} {rep.collisions} collisions/{rep.pairs}")
    dt = time.perf_counter() - t0
    verdict(6, ok and dt < 60, f"{'; '.join(parts)} ({dt:.1f}s)")


# 7 -----------------------------------------------------------------------------

def test_criterion_07_scaling_near_grazing():
    t0 = time.perf_counter()
    exps = [jacobian_scaling_near_grazing(iso_power(k, 2)).exponent_j0 for k in (1, 2)]
    exp_ok = all(abs(e - (2 * k - 1)) <= 0.05 * (2 * k - 1) for k, e in zip((1, 2), exps))
    fit = appendix_jacobian_leading(parabola(2.0))
    a_s, a_y = fit.coefficients[-1]
    fit_ok = abs(a_s - 4 * fit.alpha) <= 0.02 * abs(4 * fit.alpha) and abs(a_y + 2.0) <= 0.04
    decay_ok = fit.residual_ratio < 0.5
    dt = time.perf_counter() - t0
    verdict(7, exp_ok and fit_ok and decay_ok and dt < 30,
            f"exponents {exps[0]:.4f}, {exps[1]:.4f}; fit ({a_s:.4f}, {a_y:.4f}) vs (4a={4 * fit.alpha:.4f}, -2); "
            f"residual ratio under halving {fit.residual_ratio:.3f} ({dt:.1f}s)")


# 8 -----------------------------------------------------------------------------

def test_criterion_08_transport():
    t0 = time.perf_counter()
    flow = ReflectedFlow(parabola(2.0), [1.0])
    # rays whose feet lie outside the mu = 0.1 cutoff around the grazing point
    xb = np.linspace(-0.9, -0.25, 14)[:, None]
    s = np.arange(0.0, 0.5 + 1e-12, 1e-3)
    c = 0.5 * flow.dlogj_ds(s[None, :], xb[:, None, :])
    w = transport_solve(s, c, np.ones(len(xb)), method="simpson")
    inv = np.sqrt(flow.jacobian_analytic(s[None, :], xb[:, None, :])) * w
    drift = float(np.max(np.abs(inv / inv[:, :1] - 1.0)))

    # manufactured W = 1 + sin 3s along real rays, source f = W' + c W
    def err(h):
        ss = np.arange(0.0, 0.5 + 1e-12, h)
        cc = 0.5 * flow.dlogj_ds(ss[None, :], xb[:, None, :])
        exact = 1.0 + np.sin(3 * ss)
        f = 3 * np.cos(3 * ss) + cc * exact
        ws = transport_solve(ss, cc, np.ones(len(xb)), source=f, method="trapezoid")
        return float(np.max(np.abs(ws - exact)))

    e = [err(h) for h in (4e-3, 2e-3, 1e-3)]
    ratios = [a / b for a, b in zip(e, e[1:])]
    dt = time.perf_counter() - t0
    ok = drift <= 1e-6 and all(abs(r - 4) <= 0.5 for r in ratios) and dt < 30
    verdict(8, ok, f"sqrt(j) W drift {drift:.1e}; manufactured error ratios "
                   f"{', '.join(f'{r:.3f}' for r in ratios)} ({dt:.1f}s)")


# 9 -----------------------------------------------------------------------------

def test_criterion_09_picard():
    t0 = time.perf_counter()
    out = {}
    for T in (0.5, 0.25):
        sc = Scenario2D(parabola(2.0), T=T, data=DataSpec(center=(0.825, -0.6 - T), width=(0.225, 0.15)),
                        mean_data=MeanData(amplitude=0.5), source=SourceSpec("sin_sum", 0.1))
        r = picard_iterate(sc, max_iter=12, tol=1e-10)
        out[T] = (r.contraction_ratio(), r.converged_iterate, r.boundary_coupling())
    dt = time.perf_counter() - t0
    (q1, it1, b1), (q2, it2, b2) = out[0.5], out[0.25]
    ok = q1 < 0.5 and q2 < q1 and it1 is not None and it2 is not None and max(b1, b2) <= 1e-8 and dt < 120
    verdict(9, ok, f"ratio T=0.5 {q1:.4f} (converged at {it1}), T=0.25 {q2:.4f} (at {it2}); "
                   f"boundary coupling {max(b1, b2):.1e} ({dt:.1f}s)")


# 10 ----------------------------------------------------------------------------

def test_criterion_10_residual_sweep():
    t0 = time.perf_counter()
    T = 0.5
    sc = Scenario2D(parabola(2.0), T=T, data=DataSpec(center=(0.825, -0.6 - T), width=(0.225, 0.15)))
    lin = LinearProfiles(sc)
    reps = [residual_scan(AsymptoticField(lin, e), sc, count=3000) for e in (1 / 10, 1 / 20, 1 / 40)]
    tot = [r.norms["total"] for r in reps]
    decreasing = all(b < a for a, b in zip(tot, tot[1:]))
    eik = max(r.eikonal_max for r in reps)
    smooth = Scenario2D(parabola(2.0), T=T, data=DataSpec(center=(0.825, -0.65 - T), width=(0.3, 0.35),
                                                          amplitude=1.0))
    cc = [corrector_check(smooth, SourceSpec("sin_sum", 0.5), e, h=e / 10, count=3000) for e in (1 / 40, 1 / 80)]
    on_off = [c["nc_on"] / c["nc_off"] for c in cc]
    dt = time.perf_counter() - t0
    ok = decreasing and eik <= 1e-12 and all(r < 1 for r in on_off) and dt < 300
    verdict(10, ok, f"residual L2 {', '.join(f'{v:.3f}' for v in tot)}; eikonal max {eik:.1e}; "
                    f"corrector on/off {', '.join(f'{r:.3f}' for r in on_off)} ({dt:.1f}s)")


# 11 ----------------------------------------------------------------------------

def test_criterion_11_shadow_silence():
    t0 = time.perf_counter()
    sc = Scenario2D(parabola(2.0), T=0.8, data=DataSpec(center=(1.08, -1.0), width=(0.3, 0.2)))
    rep = shadow_silence(sc, [1 / 10, 1 / 20, 1 / 40], shadow_box=((0.0, 1.0), (0.2, 0.9)),
                         lit_box=((1.0, 1.35), (0.2, 0.9)), margin=0.25)
    dt = time.perf_counter() - t0
    verdict(11, rep.passed and dt < 120,
            f"shadow energy {', '.join(f'{v:.2e}' for v in rep.shadow)}; lit {', '.join(f'{v:.2e}' for v in rep.illuminated)} "
            f"(max/min {rep.illuminated_ratio:.2f}) ({dt:.1f}s)")


# 12 ----------------------------------------------------------------------------

def test_criterion_12_oscillatory_norms():
    t0 = time.perf_counter()
    eps = [1 / 10, 1 / 20, 1 / 40, 1 / 80]
    quad = box_quadrature((0.2, -0.3, -0.3), (0.8, 0.3, 0.3), 160)
    b = lambda x: np.exp(-np.sum((x - np.array([0.5, 0, 0])) ** 2, axis=-1) / 0.05)
    r1 = oscillatory_norm_check(lambda x, th: b(x) * np.sin(th), lambda x: x[..., 1] - x[..., 2], eps, quad, tol=0.02)
    # closed-form limit ||b|| / sqrt 2 on the same quadrature
    lim1 = float(np.sqrt(np.sum(quad[1] * b(quad[0]) ** 2) / 2))
    sc = Scenario2D(parabola(2.0), T=2.0, data=DataSpec(center=(0.5, -3.0), width=(0.45, 0.15)))
    lin = LinearProfiles(sc)
    q2 = box_quadrature((1.05, -0.7), (1.45, -0.3), 200)
    lift = lambda x: np.concatenate([x, np.zeros(x.shape[:-1] + (1,))], axis=-1)
    b2 = lambda x: np.exp(-np.sum((x - np.array([1.25, -0.5])) ** 2, axis=-1) / 0.01)
    r2 = oscillatory_norm_check(lambda x, t1, t2: b2(x) * np.sin(t1) * np.sin(t2),
                                (lambda x: lin.reflected(lift(x))[1], lambda x: x[..., 1]), eps, q2, tol=0.03)
    lim2 = float(np.sqrt(np.sum(q2[1] * b2(q2[0]) ** 2) / 4))
    dt = time.perf_counter() - t0
    ok = (r1.passed and r2.passed and abs(r1.limit - lim1) <= 1e-12 * lim1
          and abs(r2.limit - lim2) <= 1e-12 * lim2 and dt < 60)
    verdict(12, ok, f"single phase rel err {', '.join(f'{v:.1e}' for v in r1.rel_errors)}; "
                    f"two-phase {', '.join(f'{v:.1e}' for v in r2.rel_errors)} at eps 1/10..1/80 ({dt:.1f}s)")


# 13 ----------------------------------------------------------------------------

@pytest.mark.stretch
@pytest.mark.slow
def test_criterion_13_reference_stretch(request):
    if request.config.getoption("--skip-stretch"):
        VERDICTS.append("SKIPPED criterion 13: stretch reference comparison skipped by --skip-stretch")
        pytest.skip("stretch criterion skipped by flag")
    t0 = time.perf_counter()
    sc = Scenario2D(poly2d([0.25], 3.0), T=1.0, data=DataSpec(center=(0.95, -1.95), width=(0.45, 0.45)))
    rep = reference_compare(sc, (0.1, 0.05), margin=0.2)
    dt = time.perf_counter() - t0
    rate = rep.observed_rate()
    strict = all(b < a for a, b in zip(rep.h1_error, rep.h1_error[1:]))
    verdict(13, strict and dt <= 1200,
            f"H1 error {', '.join(f'{v:.4f}' for v in rep.h1_error)} at eps 1/10, 1/20 "
            f"(observed rate {rate if rate is None else round(rate, 2)}, not claimed) ({dt:.0f}s)")
