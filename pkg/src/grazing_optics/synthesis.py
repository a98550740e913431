"""Asymptotic field synthesis and verification suites.

The assembled field is

    u_a = u + eps U_r(m, phi_r/eps) + eps U_i(m, phi_i/eps) [+ eps^2 U_nc],

with U_k the mean-zero theta-primitives of the profiles W_k.  The suites apply
the wave operator Box = d_x1^2 + d_x2^2 - d_t^2 with fourth-order stencils,
evaluate oscillatory L^2 norms by quadrature and compare against
finite-difference solutions of the exterior problem.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import ResourceBudget, StencilUnresolved
from .halfspace import MeanField, halfspace_wave_solve, make_grid
from .phase import ShadowBoundary, shadow_boundary
from .profiles import GRAD_I, Geometry2D, LinearProfiles, Scenario2D
from .transport import (
    SourceSpec,
    corrector_coefficients,
    decompose_source,
    primitive_modes,
    samples_from_modes,
    theta_nodes,
    wave_symbol,
)

# fourth-order central stencil for the second derivative
_D2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_OFFS = np.array([-2, -1, 0, 1, 2])


# -- assembly ---------------------------------------------------------------------

class Corrector:
    """eps^2 U_nc for a composed source, evaluated pointwise.

    ``profiles`` gives W_i, W_r and phi_r as in :class:`LinearProfiles`;
    the mean field is taken to be zero unless ``mean`` is supplied.
    """

    def __init__(self, profiles, source: SourceSpec, M: int = 3, q: int = 32, n_modes: int | None = None,
                 mean: Callable | None = None):
        self.profiles = profiles
        self.source = source
        self.M = M
        self.q = q
        self.n_modes = n_modes or (q - 1) // 2
        self.mean = mean

    def decompose(self, m):
        m = np.asarray(m, float).reshape(-1, 3)
        wi = self.profiles.incoming(m)
        wr, phi_r, grad_r, ok = self.profiles.reflected(m)
        if self.mean is None:
            u, gu = np.zeros(len(m)), np.zeros((len(m), 3))
        else:
            u, gu = self.mean(m)
        grad_i = np.broadcast_to(GRAD_I, gu.shape)
        d = decompose_source(self.source, u, gu, wr, wi, grad_r, grad_i, n_modes=self.n_modes, M=self.M, q=self.q)
        return d, phi_r, grad_r, grad_i

    def evaluate(self, m, eps: float) -> tuple[np.ndarray, np.ndarray]:
        """(eps^2 U_nc^M, f*_nc) at m; f*_nc keeps every noncharacteristic mode of the FFT table."""
        shp = np.asarray(m).shape[:-1]
        m = np.asarray(m, float).reshape(-1, 3)
        d, phi_r, grad_r, grad_i = self.decompose(m)
        tab = corrector_coefficients(d, grad_i, grad_r)
        tr, ti = phi_r / eps, self.profiles.phase_i(m) / eps
        corr = eps ** 2 * tab.evaluate(tr, ti)
        q = d.coefficients.shape[-1]
        freq = np.fft.fftfreq(q, 1.0 / q)
        ar, ai = np.meshgrid(freq, freq, indexing="ij")
        nc = (ar != 0) & (ai != 0)
        ph = np.exp(1j * (ar[None] * tr[:, None, None] + ai[None] * ti[:, None, None]))
        fnc = np.real(np.sum(np.where(nc, d.coefficients * ph, 0.0), axis=(1, 2)))
        return corr.reshape(shp), fnc.reshape(shp)


@dataclass
class AsymptoticField:
    """u + eps U_r + eps U_i (+ eps^2 U_nc) built from pointwise profile evaluators.

    Attributes:
        profiles: object with ``incoming(m)`` -> W_i modes, ``reflected(m)`` ->
            (W_r modes, phi_r, dphi_r, ok) and ``phase_i(m)``; None means W = 0.
        eps: wavelength parameter.
        mean: callable m -> (u, grad u), or None for u = 0.
        corrector: optional :class:`Corrector`.
    """

    profiles: object | None
    eps: float
    mean: Callable | None = None
    corrector: Corrector | None = None

    def components(self, m) -> dict:
        m = np.asarray(m, float)
        shp = m.shape[:-1]
        flat = m.reshape(-1, 3)
        P = len(flat)
        out = {"u": np.zeros(P), "grad_u": np.zeros((P, 3)), "U_i": np.zeros(P), "U_r": np.zeros(P),
               "W_i": np.zeros(P), "W_r": np.zeros(P), "phi_i": -flat[:, 2] + flat[:, 1],
               "phi_r": np.zeros(P), "dphi_r": np.zeros((P, 3)), "U_nc": np.zeros(P),
               "ref_ok": np.zeros(P, bool)}
        if self.mean is not None:
            out["u"], out["grad_u"] = self.mean(flat)
        if self.profiles is not None:
            wi = self.profiles.incoming(flat)
            wr, phi_r, grad_r, ok = self.profiles.reflected(flat)
            th_i = np.mod(out["phi_i"] / self.eps, 2 * np.pi)
            th_r = np.mod(phi_r / self.eps, 2 * np.pi)
            out["U_i"] = samples_from_modes(primitive_modes(wi), th_i)
            out["U_r"] = samples_from_modes(primitive_modes(wr), th_r)
            out["W_i"] = samples_from_modes(wi, th_i)
            out["W_r"] = samples_from_modes(wr, th_r)
            out["phi_r"], out["dphi_r"], out["ref_ok"] = phi_r, grad_r, ok
        if self.corrector is not None:
            out["U_nc"] = self.corrector.evaluate(flat, self.eps)[0] / self.eps ** 2
        return {k: v.reshape(shp + v.shape[1:]) for k, v in out.items()}

    def evaluate(self, m) -> np.ndarray:
        c = self.components(m)
        e = self.eps
        return c["u"] + e * c["U_r"] + e * c["U_i"] + e ** 2 * c["U_nc"]

    def gradient(self, m) -> np.ndarray:
        """Leading-order gradient grad u + W_r dphi_r + W_i dphi_i (d_theta U = W)."""
        c = self.components(m)
        return c["grad_u"] + c["W_r"][..., None] * c["dphi_r"] + c["W_i"][..., None] * GRAD_I


def assemble_field(components: AsymptoticField, eps: float, samples) -> tuple[np.ndarray, np.ndarray]:
    """Field values and leading-order gradients at the sample points."""
    fld = AsymptoticField(components.profiles, eps, components.mean, components.corrector)
    return fld.evaluate(samples), fld.gradient(samples)


# -- stencils -------------------------------------------------------------------

def stencil_points(m: np.ndarray, h: float) -> np.ndarray:
    """(P, 3, 5, 3) points m + k h e_j, k = -2..2, for each axis j."""
    m = np.asarray(m, float)
    e = np.eye(3)
    return m[:, None, None, :] + h * _OFFS[None, None, :, None] * e[None, :, None, :]


def box_fd(values: np.ndarray, h: float) -> np.ndarray:
    """Box from values on :func:`stencil_points` (P, 3, 5)."""
    d2 = values @ _D2 / h ** 2
    return d2[:, 0] + d2[:, 1] - d2[:, 2]


def grad_fd(values: np.ndarray, h: float) -> np.ndarray:
    return values @ _D1 / h


# -- residual scan ----------------------------------------------------------------

@dataclass
class Region:
    """Spacetime box with margins from the shadow boundary and the obstacle."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    sb_margin: float = 0.1
    wall_margin: float = 0.0

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))


def default_region(sc: Scenario2D) -> Region:
    (a1, b1), (a2, b2) = sc.data.support_box()
    T = sc.T
    return Region((a1 - 0.1, a2, -T), (b1 + 0.3, b2 + 2 * T + 0.1, T), sb_margin=sc.mu)


def sample_region(sc: Scenario2D, region: Region, count: int, h: float, seed: int = 0):
    """Uniform samples in the box; returns (points, keep mask, region labels)."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(region.lo, region.hi, size=(count, 3))
    geo = Geometry2D(sc.obstacle, sc.T)
    sb = shadow_boundary(sc.obstacle, [sc.theta])
    # stencil arms reach 2h in x1 and x2; keep the whole stencil in the exterior
    R = geo.R
    x2 = pts[:, 1]
    near = np.abs(x2) < R
    fmax = np.max(np.abs(sc.obstacle.grad(np.linspace(-R, R, 201)[:, None])))
    gap = pts[:, 0] - geo.F(np.clip(x2, -R, R))
    keep = ~near | (gap > 2 * h * (1 + fmax) + region.wall_margin)
    keep &= np.abs(x2) < R - 2 * h  # stay inside the chart
    keep &= pts[:, 2] - 2 * h >= -sc.T
    keep &= sb.distance(pts[:, :2], side="+") >= region.sb_margin
    shadow = sb.in_shadow(pts[:, :2])
    return pts, keep, shadow


@dataclass
class ResidualReport:
    eps: float
    h: float
    samples: int
    norms: dict
    eikonal_max: float
    dirichlet_defect: float
    nc_off: float | None = None
    nc_on: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def residual_scan(fld: AsymptoticField, sc: Scenario2D, source: SourceSpec | None = None,
                  region: Region | None = None, h: float | None = None, count: int = 4000,
                  seed: int = 0, n_boundary: int = 400) -> ResidualReport:
    """L^2 norms of Box u_a - f(u_a, grad u_a) over illuminated, overlap and shadow parts.

    The norms are Monte Carlo estimates with a fixed seeded point set, so
    runs at different eps share the same samples.
    """
    eps = fld.eps
    h = eps / 10 if h is None else h
    if h > eps / 10 * (1 + 1e-12):
        raise StencilUnresolved(f"h = {h:.3g} does not resolve eps = {eps:.3g} (need h <= eps/10)")
    region = region or default_region(sc)
    pts, keep, shadow = sample_region(sc, region, count, h, seed)
    P = pts[keep]
    st = stencil_points(P, h)
    vals = fld.evaluate(st.reshape(-1, 3)).reshape(st.shape[:-1])
    res = box_fd(vals, h)
    if source is not None and source.kind != "zero":
        u0 = vals[:, 0, 2]
        res = res - source(u0, grad_fd(vals, h))
    comp = fld.components(P)
    ref_ok = comp["ref_ok"]
    labels = {"illuminated": ~shadow[keep] & ~ref_ok, "overlap": ~shadow[keep] & ref_ok,
              "shadow": shadow[keep]}
    norms = {}
    for k, msk in labels.items():
        norms[k] = float(np.sqrt(region.volume * np.sum(res[msk] ** 2) / count))
    norms["total"] = float(np.sqrt(region.volume * np.sum(res ** 2) / count))
    # eps^-1 coefficient p(dphi_k) at every sample
    p_i = abs(float(wave_symbol(GRAD_I[:2], GRAD_I[2])))
    dr = comp["dphi_r"][ref_ok]
    p_r = float(np.max(np.abs(wave_symbol(dr[:, :2], dr[:, 2])), initial=0.0))
    # Dirichlet trace on the boundary
    geo = Geometry2D(sc.obstacle, sc.T)
    rng = np.random.default_rng(seed + 1)
    yb = rng.uniform(region.lo[1], region.hi[1], n_boundary)
    yb = np.clip(yb, -geo.R, geo.R)
    tb = rng.uniform(max(region.lo[2], -sc.T), region.hi[2], n_boundary)
    mb = np.stack([geo.F(yb), yb, tb], axis=-1)
    defect = float(np.max(np.abs(fld.evaluate(mb))))
    return ResidualReport(eps, h, int(keep.sum()), norms, max(p_i, p_r), defect)


def corrector_check(sc: Scenario2D, source: SourceSpec, eps: float, M: int = 3, h: float | None = None,
                    region: Region | None = None, count: int = 1500, seed: int = 0, q: int = 32) -> dict:
    """Noncharacteristic residual with and without eps^2 U_nc.

    Off: ||f*_nc||; on: ||Box(eps^2 U_nc^M) - f*_nc|| over overlap samples.
    """
    h = eps / 20 if h is None else h
    lin = LinearProfiles(sc)
    corr = Corrector(lin, source, M=M, q=q)
    region = region or default_region(sc)
    pts, keep, shadow = sample_region(sc, region, count, h, seed)
    P = pts[keep & ~shadow]
    _, _, _, ok = lin.reflected(P)
    P = P[ok]
    st = stencil_points(P, h)
    cval, _ = corr.evaluate(st.reshape(-1, 3), eps)
    cval = cval.reshape(st.shape[:-1])
    _, fnc = corr.evaluate(P, eps)
    on = box_fd(cval, h) - fnc
    w = region.volume / count
    d, *_ = corr.decompose(P)
    return {"eps": eps, "M": M, "samples": len(P), "nc_off": float(np.sqrt(w * np.sum(fnc ** 2))),
            "nc_on": float(np.sqrt(w * np.sum(on ** 2))),
            "tail": float(np.sqrt(w * np.sum(d.nc_tail() ** 2)))}


# -- oscillatory norms ------------------------------------------------------------

def box_quadrature(lo, hi, n) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint tensor rule on a box: (points (P, d), weights (P,))."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    n = np.broadcast_to(np.asarray(n, int), lo.shape)
    axes = [a + (b - a) * (np.arange(k) + 0.5) / k for a, b, k in zip(lo, hi, n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=-1)
    w = np.full(len(pts), np.prod((hi - lo) / n))
    return pts, w


@dataclass
class OscillatoryReport:
    eps: list
    norms: list
    limit: float
    rel_errors: list
    monotone: bool
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def oscillatory_norm_check(a: Callable, phases: Callable | tuple, eps_list, quadrature, tol: float = 0.02,
                           noise: float = 0.01, q: int = 64) -> OscillatoryReport:
    """||a(., phi/eps)||_{L^2(omega)} against the theta-averaged limit.

    ``a(points, theta)`` for one phase or ``a(points, theta_1, theta_2)`` for a
    pair; ``phases`` is a callable or a tuple of callables on the points.
    """
    pts, w = quadrature
    phs = phases if isinstance(phases, tuple) else (phases,)
    vals = [np.asarray(p(pts), float) for p in phs]
    th = theta_nodes(q)
    if len(vals) == 1:
        avg = np.mean(a(pts[:, None], th[None, :]) ** 2, axis=1)
    else:
        avg = np.mean(a(pts[:, None, None], th[None, :, None], th[None, None, :]) ** 2, axis=(1, 2))
    limit = float(np.sqrt(np.sum(w * avg)))
    norms = []
    for e in eps_list:
        v = a(pts, *[p / e for p in vals])
        norms.append(float(np.sqrt(np.sum(w * v ** 2))))
    err = [abs(n - limit) / limit if limit > 0 else abs(n) for n in norms]
    mono = all(err[k + 1] <= err[k] + noise for k in range(len(err) - 1))
    return OscillatoryReport(list(map(float, eps_list)), norms, limit, err, mono, bool(err[-1] <= tol))


# -- finite-difference exact solutions ------------------------------------------

@dataclass
class ExactSolve:
    """FD solution of the exterior problem with incoming asymptotic data."""

    sol: MeanField
    eps: float
    h: float
    window: tuple[float, float]

    @property
    def grid(self):
        return self.sol.grid


def exact_solution(sc: Scenario2D, eps: float, ppw: float = 12.0, window: float = 0.3,
                   x_max: float | None = None, y_range: tuple[float, float] | None = None,
                   store_every: int | None = 1, max_nodes: float = 4e8, cfl: float = 0.9) -> ExactSolve:
    """Leapfrog solve of Box u = 0 outside the obstacle, u = 0 on its boundary.

    Data: u = eps U_i(m, phi_i/eps) on the first two time levels (untruncated
    incoming wave).  Levels with t >= T - window are stored.  Flattening maps
    a reflected wavevector xi/eps to (xi1, xi1 F' + xi2)/eps, so ``ppw`` is
    counted against the largest flattened wavenumber over the lit feet.
    ``store_every=None`` keeps about 32 levels per temporal period.
    """
    (a1, b1), (a2, b2) = sc.data.support_box()
    T = sc.T
    ob = sc.obstacle
    lin = LinearProfiles(sc)
    feet = np.linspace(lin.x2_range[0], 0.0, 201)[:, None]
    stretch = 1.0 + float(np.max(np.abs(ob.grad(feet))))
    h = 2 * np.pi * eps / (ppw * stretch)
    if y_range is None:
        y_range = (a2 - 0.15, b2 + 2 * T + 0.3)
    if x_max is None:
        fy = ob.F(np.clip(np.array([[y_range[0]], [y_range[1]]]), -0.999 * ob.r, 0.999 * ob.r))
        x_max = float(b1 - np.min(fy)) + 0.4
    grid = make_grid(x_max, y_range, (-T, T), h, obstacle=ob, cfl=cfl, max_nodes=max_nodes)
    X1, X2 = grid.physical()
    c = sc.data.mode_array(sc.n_modes)

    def level(t):
        x2p = X2 - (t + T)
        w = sc.data.envelope(X1, x2p)[..., None] * primitive_modes(c)
        return eps * samples_from_modes(w, (X2 - t) / eps)

    if store_every is None:
        store_every = max(1, int(2 * np.pi * eps / 32 / grid.dt))
    u0, u1 = level(grid.t[0]), level(grid.t[1])
    sol = halfspace_wave_solve(grid, None, u0=u0, u1=u1, store_every=store_every, cfl=cfl,
                               store_from=T - window)
    return ExactSolve(sol, eps, h, (T - window, T))


def _node_points(grid, t: float):
    X1, X2 = grid.physical()
    return np.stack([X1, X2, np.full_like(X1, t)], axis=-1)


@dataclass
class ShadowReport:
    eps: list
    shadow: list
    illuminated: list

    @property
    def shadow_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.shadow, self.shadow[1:]))

    @property
    def illuminated_ratio(self) -> float:
        return float(max(self.illuminated) / min(self.illuminated)) if min(self.illuminated) > 0 else np.inf

    @property
    def passed(self) -> bool:
        return self.shadow_decreasing and self.illuminated_ratio <= 2.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(shadow_decreasing=self.shadow_decreasing, illuminated_ratio=self.illuminated_ratio,
                 passed=self.passed)
        return d


def window_masks(sc: Scenario2D, grid, sb: ShadowBoundary, shadow_box, lit_box, margin: float = 0.1,
                 wall: float = 0.02):
    """Node masks of the shadow and illuminated windows (boxes in x1, x2)."""
    X1, X2 = grid.physical()
    xy = np.stack([X1.ravel(), X2.ravel()], axis=-1)
    shadow = sb.in_shadow(xy).reshape(X1.shape)
    far = (sb.distance(xy, side="+") >= margin).reshape(X1.shape)
    off_wall = (X1 - grid.Fy[None, :]) >= wall

    def inbox(b):
        (p, q), (r, s) = b
        return (X1 >= p) & (X1 <= q) & (X2 >= r) & (X2 <= s)

    return inbox(shadow_box) & shadow & far & off_wall, inbox(lit_box) & ~shadow & far & off_wall


def shadow_silence(sc: Scenario2D, eps_list, shadow_box=((0.0, 1.0), (0.15, 0.8)),
                   lit_box=((1.0, 1.3), (0.15, 0.8)), margin: float = 0.1, ppw: float = 12.0,
                   window: float = 0.3, **solve_kw) -> ShadowReport:
    """Windowed H^1 energy of the exact solution in shadow and illuminated windows per eps."""
    sb = shadow_boundary(sc.obstacle, [sc.theta])
    es, sh, il = [], [], []
    for e in eps_list:
        ex = exact_solution(sc, e, ppw=ppw, window=window, **solve_kw)
        ms, ml = window_masks(sc, ex.grid, sb, shadow_box, lit_box, margin)
        es.append(float(e))
        sh.append(ex.sol.h1_norm(mask=ms[None]) ** 2)
        il.append(ex.sol.h1_norm(mask=ml[None]) ** 2)
    return ShadowReport(es, sh, il)


# -- reference comparison (stretch) --------------------------------------------

@dataclass
class ReferenceReport:
    eps: list
    h1_error: list
    h1_reference: list
    tolerance: float = 0.1

    @property
    def decreasing(self) -> bool:
        """Each error below the previous one up to the relative tolerance."""
        e = self.h1_error
        return all(b < a * (1 + self.tolerance) for a, b in zip(e, e[1:]))

    def observed_rate(self) -> float | None:
        if len(self.eps) < 2 or min(self.h1_error) <= 0:
            return None
        return float(np.polyfit(np.log(self.eps), np.log(self.h1_error), 1)[0])

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(decreasing=self.decreasing, observed_rate=self.observed_rate())
        return d


def comparison_mask(sc: Scenario2D, pts: np.ndarray, lin: LinearProfiles, margin: float) -> np.ndarray:
    """Points whose incoming and reflected rays stay at least ``margin`` from grazing."""
    geo = lin.geo
    x1p, _, _ = geo.incoming_coords(pts)
    lit = geo.lit(pts)
    # all illuminated feet, including the truncated ones near grazing
    tp, z, s, ok = geo.reflected_coords(pts, (lin.x2_range[0], 0.0))
    sb = shadow_boundary(sc.obstacle, [sc.theta])
    shadow = sb.in_shadow(pts.reshape(-1, 3)[:, :2]).reshape(pts.shape[:-1])
    good = ~shadow & (~lit | (np.abs(x1p - 1.0) >= margin))
    good &= ~ok | (geo.F(z) - 1.0 <= -margin)
    return good


def reference_compare(sc: Scenario2D, eps_list=(0.1, 0.05), ppw: float = 24.0, window: float = 0.2,
                      store_every: int | None = None, margin: float | None = None, max_nodes: float = 4e8,
                      **solve_kw) -> ReferenceReport:
    """H^1 distance between the FD exact solution and eps U_r + eps U_i away from grazing."""
    if ppw < 20:
        raise ResourceBudget("the reference solver needs at least 20 points per wavelength")
    margin = sc.mu if margin is None else margin
    lin = LinearProfiles(sc)
    errs, refs = [], []
    for e in eps_list:
        ex = exact_solution(sc, e, ppw=ppw, window=window, store_every=store_every, max_nodes=max_nodes,
                            **solve_kw)
        g = ex.grid
        fld = AsymptoticField(lin, e)
        asym = np.array([fld.evaluate(_node_points(g, t)) for t in ex.sol.t])
        mask = np.array([comparison_mask(sc, _node_points(g, t), lin, margin) for t in ex.sol.t])
        diff = MeanField(g, ex.sol.u - asym, ex.sol.t)
        errs.append(diff.h1_norm(mask=mask))
        refs.append(ex.sol.h1_norm(mask=mask))
    return ReferenceReport(list(map(float, eps_list)), errs, refs)
