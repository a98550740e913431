"""Two-dimensional profile pipeline: ray grids, linear profiles, Picard iteration.

Setting: a graph obstacle {x1 < F(x2)} with F concave, incidence theta = +1,
incoming phase phi_i = -t + x2, time window [-T, T].  Incoming data
W_i = g(x1', x2', theta) is prescribed on t = -T.

Incoming rays are labelled by their start point (x1', x2'); the ray reaches
(x1', x2' + t + T) at time t and hits the boundary at the foot x2f < 0 with
F(x2f) = x1' when x1' < 1.  Reflected rays are labelled by (t', x2f) and
parametrized by s >= 0 through Z_r.  The generator coordinate
z1 = x1' - 1 of the incoming ray (z1 = F(x2f) - 1 for a reflected ray) is the
signed offset from the shadow boundary; cutoffs depend on z1 only and are
therefore constant along rays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import NoContraction, WrongDimension
from .halfspace import HalfSpaceGrid, MeanField, halfspace_wave_solve, make_grid
from .obstacle import GraphObstacle
from .phase import ReflectedFlow, invert_reflected_2d, reflected_covector
from .transport import (
    ProfileGrid,
    SourceSpec,
    chi_incoming,
    chi_reflected,
    decompose_source,
    primitive_modes,
    samples_from_modes,
    transport_solve,
)

GRAD_I = np.array([0.0, 1.0, -1.0])


def bump(u) -> np.ndarray:
    """C-infinity bump exp(1 - 1/(1 - u^2)) on |u| < 1 (peak 1)."""
    u = np.asarray(u, float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
    return out


@dataclass(frozen=True)
class DataSpec:
    """g(x1', x2', theta) = amplitude * bump envelope * sum_n 2 Re(c_n e^{i n theta})."""

    center: tuple[float, float] = (0.75, -1.0)
    width: tuple[float, float] = (0.3, 0.3)
    amplitude: float = 0.5
    modes: tuple = (-0.5j,)

    def envelope(self, x1p, x2p) -> np.ndarray:
        return self.amplitude * bump((np.asarray(x1p) - self.center[0]) / self.width[0]) \
            * bump((np.asarray(x2p) - self.center[1]) / self.width[1])

    def mode_array(self, n_modes: int) -> np.ndarray:
        c = np.zeros(n_modes, complex)
        k = min(n_modes, len(self.modes))
        c[:k] = np.asarray(self.modes, complex)[:k]
        return c

    def modes_at(self, x1p, x2p, n_modes: int) -> np.ndarray:
        return self.envelope(x1p, x2p)[..., None] * self.mode_array(n_modes)

    def support_box(self) -> tuple[tuple[float, float], tuple[float, float]]:
        c, w = self.center, self.width
        return (c[0] - w[0], c[0] + w[0]), (c[1] - w[1], c[1] + w[1])


@dataclass(frozen=True)
class MeanData:
    """u(-T) = amplitude * bump((x1 - c1)/w, (x2 - c2)/w), u_t(-T) = 0."""

    center: tuple[float, float] = (1.1, -0.6)
    width: float = 0.3
    amplitude: float = 0.0

    def __call__(self, x1, x2) -> np.ndarray:
        return self.amplitude * bump((np.asarray(x1) - self.center[0]) / self.width) \
            * bump((np.asarray(x2) - self.center[1]) / self.width)


@dataclass
class Scenario2D:
    """Two-dimensional scenario for the profile pipeline."""

    obstacle: GraphObstacle
    T: float = 0.5
    data: DataSpec = field(default_factory=DataSpec)
    mean_data: MeanData = field(default_factory=MeanData)
    mu: float = 0.1
    n_modes: int = 4
    source: SourceSpec = field(default_factory=SourceSpec)
    theta: float = 1.0
    # discretization
    n_incoming: tuple[int, int, int] = (21, 21, 41)     # x1', x2', t
    n_reflected: tuple[int, int, int] = (41, 31, 41)    # t', x2f, s
    fd_h: float = 0.03
    x_max: float = 1.2
    y_range: tuple[float, float] = (-2.0, 1.0)
    q_theta: int = 12
    source_time_stride: int = 4

    def __post_init__(self):
        if self.obstacle.dim != 2:
            raise WrongDimension("the profile pipeline is two-dimensional")
        if self.theta != 1.0:
            raise ValueError("the profile pipeline is implemented for theta = +1")


# -- geometry helpers -----------------------------------------------------------

def _bisect(fun, lo, hi, shape, iters: int = 80):
    a = np.full(shape, lo, float)
    b = np.full(shape, hi, float)
    fa = fun(a)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        fm = fun(mid)
        left = fa * fm <= 0
        b = np.where(left, mid, b)
        a = np.where(left, a, mid)
        fa = np.where(left, fa, fm)
    return 0.5 * (a + b)


class Geometry2D:
    """Foot points, blocking and exterior tests for theta = +1."""

    def __init__(self, ob: GraphObstacle, T: float):
        self.ob = ob
        self.T = T
        self.R = 0.999 * ob.r
        self.flow = ReflectedFlow(ob, [1.0])

    def F(self, x2) -> np.ndarray:
        return self.ob.F(np.asarray(x2, float)[..., None])

    def foot(self, x1p) -> np.ndarray:
        """Illuminated-side root x2f < 0 of F(x2f) = x1' (NaN when none)."""
        x1p = np.asarray(x1p, float)
        ok = (x1p <= 1.0) & (x1p >= self.F(-self.R))
        z = _bisect(lambda z: self.F(z) - np.where(ok, x1p, 0.5 * (1 + self.F(-self.R))), -self.R, 0.0, x1p.shape)
        return np.where(ok, z, np.nan)

    def x2_cut(self, mu: float) -> float:
        """Foot where the reflected cutoff switches off: F(x2c) = 1 - mu/2."""
        return float(self.foot(np.array(1.0 - mu / 2.0)))

    def exterior(self, x1, x2, tol: float = 1e-12) -> np.ndarray:
        x2 = np.asarray(x2, float)
        inside_patch = np.abs(x2) < self.R
        return ~inside_patch | (np.asarray(x1, float) >= self.F(np.clip(x2, -self.R, self.R)) - tol)

    def incoming_coords(self, m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        m = np.asarray(m, float)
        return m[..., 0], m[..., 1] - (m[..., 2] + self.T), m[..., 2]

    def blocked(self, m, tol: float = 1e-9) -> np.ndarray:
        """True where the incoming ray through m met the obstacle before reaching m."""
        x1p, x2p, _ = self.incoming_coords(m)
        xf = self.foot(x1p)
        x2 = np.asarray(m, float)[..., 1]
        with np.errstate(invalid="ignore"):
            return np.isfinite(xf) & (xf >= x2p - tol) & (xf < x2 - tol)

    def lit(self, m) -> np.ndarray:
        """Exterior points reached by their incoming ray."""
        m = np.asarray(m, float)
        return self.exterior(m[..., 0], m[..., 1]) & ~self.blocked(m)

    def reflected_coords(self, m, x2_range):
        """(t', x2f, s, ok) of reflected rays through m with feet in x2_range."""
        m = np.asarray(m, float)
        shp = m.shape[:-1]
        flat = m.reshape(-1, 3)
        z, s, ok = invert_reflected_2d(self.ob, 1.0, flat[:, 0], flat[:, 1], x2_range)
        ok &= self.exterior(flat[:, 0], flat[:, 1])
        tp = flat[:, 2] - 2.0 * s
        ok &= tp >= -self.T - 1e-12
        return tp.reshape(shp), z.reshape(shp), s.reshape(shp), ok.reshape(shp)

    def reflected_gradient(self, x2f) -> np.ndarray:
        x2f = np.asarray(x2f, float)
        xi1, xib = reflected_covector(self.ob, [1.0], np.minimum(x2f, 0.0)[..., None], tol=np.inf)
        return np.stack([xi1, xib[..., 0], -np.ones_like(xi1)], axis=-1)


# -- linear profiles (exact ray evaluators) -------------------------------------

class LinearProfiles:
    """Solutions of the source-free truncated transport problem, evaluated pointwise.

    W_i = chi_i(z1) g(x1', x2') on lit points; W_r = -chi_r(z1) g sqrt(j(0)/j(s)).
    """

    def __init__(self, sc: Scenario2D):
        self.sc = sc
        self.geo = Geometry2D(sc.obstacle, sc.T)
        (a1, _), _ = sc.data.support_box()
        lo = self.geo.foot(np.array(max(a1, float(self.geo.F(-self.geo.R)))))
        self.x2_range = (float(lo) - 0.05 if np.isfinite(lo) else -self.geo.R, self.geo.x2_cut(sc.mu))

    def incoming(self, m) -> np.ndarray:
        """W_i modes (..., N)."""
        m = np.asarray(m, float)
        x1p, x2p, _ = self.geo.incoming_coords(m)
        w = self.sc.data.modes_at(x1p, x2p, self.sc.n_modes)
        cut = chi_incoming(x1p - 1.0, self.sc.mu) * self.geo.lit(m)
        return w * cut[..., None]

    def reflected(self, m):
        """(W_r modes, phi_r, dphi_r, ok) at m."""
        m = np.asarray(m, float)
        tp, z, s, ok = self.geo.reflected_coords(m, self.x2_range)
        x1p = self.geo.F(z)
        x2p = z - (tp + self.sc.T)
        j0 = self.geo.flow.jacobian_tan2a(np.zeros_like(s), z)
        js = self.geo.flow.jacobian_tan2a(s, z)
        amp = -chi_reflected(x1p - 1.0, self.sc.mu) * np.sqrt(np.where(ok, j0 / np.where(ok, js, 1.0), 0.0))
        w = self.sc.data.modes_at(x1p, x2p, self.sc.n_modes) * (amp * ok)[..., None]
        phi = np.where(ok, -tp + z, 0.0)
        grad = self.geo.reflected_gradient(np.where(ok, z, 0.0))
        return w, phi, grad, ok

    def phase_i(self, m) -> np.ndarray:
        m = np.asarray(m, float)
        return -m[..., 2] + m[..., 1]


# -- Picard iteration -------------------------------------------------------------

class _PointCache:
    """Precomputed ray coordinates of a fixed point set."""

    def __init__(self, geo: Geometry2D, pts: np.ndarray, x2_range):
        self.pts = pts
        x1p, x2p, t = geo.incoming_coords(pts)
        self.inc = np.stack([x1p, x2p, t], axis=-1)
        self.lit = geo.lit(pts)
        tp, z, s, ok = geo.reflected_coords(pts, x2_range)
        self.ref = np.stack([tp, z, s], axis=-1)
        self.ref_ok = ok
        self.grad_r = geo.reflected_gradient(np.where(ok, z, x2_range[0]))


def _interp(axes, values, method: str = "linear"):
    """Complex-valued regular-grid interpolator with zero fill."""
    stacked = np.concatenate([values.real, values.imag], axis=-1)
    f = RegularGridInterpolator(axes, stacked, method=method, bounds_error=False, fill_value=0.0)
    n = values.shape[-1]

    def ev(x):
        v = f(x)
        return v[..., :n] + 1j * v[..., n:]

    return ev


@dataclass
class PicardState:
    u: MeanField
    wi: np.ndarray     # (n1, n2, nt, N)
    wr: np.ndarray     # (ntp, nf, ns, N)


@dataclass
class PicardResult:
    state: PicardState
    trace: list[dict]
    converged_iterate: int | None
    solver: "PicardSolver"

    def contraction_ratio(self) -> float:
        """Geometric mean of successive difference ratios over the recorded trace."""
        d = [r["diff"] for r in self.trace if r["diff"] > 0]
        if len(d) < 2:
            return 0.0
        return float(np.exp(np.mean(np.log(np.array(d[1:]) / np.array(d[:-1])))))

    def boundary_coupling(self) -> float:
        return self.solver.boundary_coupling(self.state)


class PicardSolver:
    """Picard iteration for the coupled mean-field/profile system of one scenario."""

    def __init__(self, sc: Scenario2D):
        self.sc = sc
        geo = self.geo = Geometry2D(sc.obstacle, sc.T)
        T = sc.T
        (a1, b1), (a2, b2) = sc.data.support_box()
        n1, n2, nt = sc.n_incoming
        self.x1p = np.linspace(a1, b1, n1)
        self.x2p = np.linspace(a2, b2, n2)
        self.t = np.linspace(-T, T, nt)
        self.s_i = (self.t + T) / 2.0
        lin = LinearProfiles(sc)
        self.x2_range = lin.x2_range
        ntp, nf, ns = sc.n_reflected
        self.tp = np.linspace(-T, T, ntp)
        self.x2f = np.linspace(self.x2_range[0], self.x2_range[1], nf)
        self.s_r = np.linspace(0.0, T, ns)
        # incoming nodes
        X1, X2, TT = np.meshgrid(self.x1p, self.x2p, self.t, indexing="ij")
        self.inc_pts = np.stack([X1, X2 + TT + T, TT], axis=-1)
        self.inc_cut = chi_incoming(self.x1p - 1.0, sc.mu)[:, None, None]
        self.g0 = sc.data.modes_at(X1[..., 0], X2[..., 0], sc.n_modes) * self.inc_cut[..., 0, None]
        self.inc_cache = _PointCache(geo, self.inc_pts, self.x2_range)
        # reflected nodes
        TP, XF, S = np.meshgrid(self.tp, self.x2f, self.s_r, indexing="ij")
        x = geo.flow.forward_space(S, XF[..., None])
        self.ref_pts = np.concatenate([x, (TP + 2 * S)[..., None]], axis=-1)
        self.ref_in_window = self.ref_pts[..., 2] <= T + 1e-12
        self.ref_cut = chi_reflected(geo.F(self.x2f) - 1.0, sc.mu)[None, :, None]
        self.coef_r = 0.5 * geo.flow.dlogj_ds(S, XF[..., None])
        self.ref_cache = _PointCache(geo, self.ref_pts, self.x2_range)
        # reflected rays know their own parameters exactly
        self.ref_cache.ref = np.stack([TP, XF, S], axis=-1)
        self.ref_cache.ref_ok = self.ref_in_window.copy()
        self.ref_cache.grad_r = geo.reflected_gradient(XF)
        self.foot_inc = np.stack([geo.F(self.x2f)[None, :].repeat(ntp, 0),
                                  self.x2f[None, :] - (self.tp[:, None] + T),
                                  self.tp[:, None].repeat(nf, 1)], axis=-1)
        # mean-field grid and source sample levels
        self.grid = make_grid(sc.x_max, sc.y_range, (-T, T), sc.fd_h, sc.obstacle)
        X1g, X2g = self.grid.physical()
        self.u0 = sc.mean_data(X1g, X2g)
        self.levels = np.unique(np.r_[np.arange(0, len(self.grid.t), sc.source_time_stride), len(self.grid.t) - 1])
        pts = np.stack([np.broadcast_to(X1g, (len(self.levels),) + X1g.shape),
                        np.broadcast_to(X2g, (len(self.levels),) + X1g.shape),
                        np.broadcast_to(self.grid.t[self.levels][:, None, None], (len(self.levels),) + X1g.shape)],
                       axis=-1)
        self.fd_pts = pts
        self.fd_cache = _PointCache(geo, pts, self.x2_range)

    # evaluation of a state at cached points
    def _fields(self, state: PicardState, cache: _PointCache):
        pts = cache.pts
        u = state.u.sample(pts[..., 0], pts[..., 1], pts[..., 2])
        q = np.stack([state.u.sample(pts[..., 0], pts[..., 1], pts[..., 2], w) for w in ("ux1", "ux2", "ut")], -1)
        fi = _interp((self.x1p, self.x2p, self.t), state.wi)
        fr = _interp((self.tp, self.x2f, self.s_r), state.wr)
        wi = fi(cache.inc) * cache.lit[..., None]
        wr = fr(cache.ref) * cache.ref_ok[..., None]
        return u, q, wi, wr

    def _split(self, state: PicardState, cache: _PointCache):
        """(mean, char_r, char_i) of the composed source at cached points."""
        sc = self.sc
        u, q, wi, wr = self._fields(state, cache)
        shp = u.shape
        N = sc.n_modes
        mean = sc.source(u, q).reshape(-1)
        cr = np.zeros((mean.size, N), complex)
        ci = np.zeros((mean.size, N), complex)
        active = ((np.max(np.abs(wi), axis=-1) > 0) | (np.max(np.abs(wr), axis=-1) > 0)).reshape(-1)
        if sc.source.kind != "zero" and np.any(active):
            d = decompose_source(sc.source, u.reshape(-1)[active], q.reshape(-1, 3)[active],
                                 wr.reshape(-1, N)[active], wi.reshape(-1, N)[active],
                                 cache.grad_r.reshape(-1, 3)[active],
                                 np.broadcast_to(GRAD_I, (int(active.sum()), 3)),
                                 n_modes=N, M=1, q=sc.q_theta)
            mean[active] = d.mean
            cr[active] = d.char_r
            ci[active] = d.char_i
        if sc.source.kind == "zero":
            mean[:] = 0.0
        return mean.reshape(shp), cr.reshape(shp + (N,)), ci.reshape(shp + (N,))

    def _solve_u(self, fbar_levels: np.ndarray) -> MeanField:
        tl = self.grid.t[self.levels]

        def src(it, t):
            k = np.searchsorted(tl, t, side="right") - 1
            k = min(max(k, 0), len(tl) - 2)
            w = (t - tl[k]) / (tl[k + 1] - tl[k])
            return (1 - w) * fbar_levels[k] + w * fbar_levels[k + 1]

        return halfspace_wave_solve(self.grid, src if np.any(fbar_levels) else None, u0=self.u0)

    def _transport_i(self, src_i) -> np.ndarray:
        src = None if src_i is None else src_i * self.inc_cut[..., None] * self.inc_cache.lit[..., None]
        return transport_solve(self.s_i, np.zeros(len(self.s_i)), self.g0, source=src)

    def _transport_r(self, wi: np.ndarray, src_r) -> np.ndarray:
        fi = _interp((self.x1p, self.x2p, self.t), wi, "cubic")
        w0 = -fi(self.foot_inc)
        src = None if src_r is None else src_r * self.ref_cut[..., None] * self.ref_in_window[..., None]
        return transport_solve(self.s_r, self.coef_r, w0, source=src)

    def linear_state(self) -> PicardState:
        u = self._solve_u(np.zeros((len(self.levels),) + self.u0.shape))
        wi = self._transport_i(None)
        return PicardState(u, wi, self._transport_r(wi, None))

    def step(self, state: PicardState) -> PicardState:
        fbar, _, _ = self._split(state, self.fd_cache)
        _, _, ci = self._split(state, self.inc_cache)
        _, cr, _ = self._split(state, self.ref_cache)
        u = self._solve_u(fbar)
        wi = self._transport_i(ci)
        wr = self._transport_r(wi, cr)
        return PicardState(u, wi, wr)

    def _norms(self, a: PicardState, b: PicardState) -> tuple[float, float, float]:
        g = self.grid
        du = float(np.sqrt(np.sum((a.u.u - b.u.u) ** 2) * g.hx * g.hy * g.dt))
        vi = (self.x1p[1] - self.x1p[0]) * (self.x2p[1] - self.x2p[0]) * (self.t[1] - self.t[0])
        vr = (self.tp[1] - self.tp[0]) * (self.x2f[1] - self.x2f[0]) * (self.s_r[1] - self.s_r[0])
        lit = self.inc_cache.lit[..., None]
        di = float(np.sqrt(2 * np.sum(np.abs((a.wi - b.wi) * lit) ** 2) * vi))
        win = self.ref_in_window[..., None]
        dr = float(np.sqrt(2 * np.sum(np.abs((a.wr - b.wr) * win) ** 2) * vr))
        return du, di, dr

    def boundary_coupling(self, state: PicardState) -> float:
        """max |W_r + W_i| over reflected feet, W_i read at the physical boundary point."""
        geo = self.geo
        pts = np.stack([geo.F(self.x2f)[None, :].repeat(len(self.tp), 0),
                        self.x2f[None, :].repeat(len(self.tp), 0),
                        self.tp[:, None].repeat(len(self.x2f), 1)], axis=-1)
        fi = _interp((self.x1p, self.x2p, self.t), state.wi, "cubic")
        x1p, x2p, t = geo.incoming_coords(pts)
        wi = fi(np.stack([x1p, x2p, t], axis=-1))
        return float(np.max(np.abs(state.wr[:, :, 0, :] + wi)))

    def exit_types(self, tol: float = 1e-6) -> np.ndarray:
        """Per incoming ray: 'boundary', 'time', 'pass', 'inside' or 'ambiguous'."""
        X1, X2 = np.meshgrid(self.x1p, self.x2p, indexing="ij")
        xf = self.geo.foot(X1)
        t_hit = -self.sc.T + (xf - X2)
        out = np.full(X1.shape, "pass", dtype=object)
        hit = np.isfinite(xf) & (xf >= X2)
        out[hit & (t_hit < self.sc.T)] = "boundary"
        out[hit & (t_hit >= self.sc.T)] = "time"
        amb = hit & ((np.abs(t_hit - self.sc.T) < tol) | (np.abs(X1 - 1.0) < tol))
        out[amb] = "ambiguous"
        out[~self.geo.exterior(X1, X2)] = "inside"
        return out


def picard_iterate(sc: Scenario2D, max_iter: int = 12, tol: float = 1e-10, solver: PicardSolver | None = None,
                   min_iter: int = 1) -> PicardResult:
    """Iterate X^{n+1} = Phi(X^n) from the linear solution X^0.

    Stops at the first n with ||X^n - X^{n-1}|| <= tol (reported as
    ``converged_iterate``).  Raises NoContraction if the differences fail
    to decrease over five consecutive iterations.
    """
    solver = solver or PicardSolver(sc)
    state = solver.linear_state()
    trace = []
    converged = None
    for it in range(1, max_iter + 1):
        new = solver.step(state)
        du, di, dr = solver._norms(new, state)
        diff = float(np.sqrt(du ** 2 + di ** 2 + dr ** 2))
        prev = trace[-1]["diff"] if trace else None
        trace.append({"iter": it, "diff": diff, "diff_u": du, "diff_wi": di, "diff_wr": dr,
                      "ratio": (diff / prev) if prev else None})
        state = new
        if diff <= tol and it >= min_iter:
            converged = it
            break
        if len(trace) >= 6:
            window = [r["diff"] for r in trace[-6:]]
            if all(window[k + 1] >= window[k] for k in range(5)):
                raise NoContraction(f"differences failed to decrease over five iterations: {window}")
    return PicardResult(state, trace, converged, solver)


# -- energy diagnostic --------------------------------------------------------------

@dataclass
class EnergyReport:
    times: list[float]
    slice_energy: list[float]       # <W_r, W_r>_t + <W_i, W_i>_t
    boundary_term: float            # int |d_x phi_i| |W_i|^2 over the boundary
    data_norm: float                # <g, g>_{-T}
    source_norm: float
    constant: float                 # max_t slice / (data + boundary + source)
    bad_term: float                 # int |Box phi_r| |W_r|^2 over the truncated region

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def energy_diagnostic(sc: Scenario2D, n_space: int = 61, n_time: int = 9, n_bdry: int = 201) -> EnergyReport:
    """Evaluate the terms of the transport energy estimate for the linear profiles."""
    lin = LinearProfiles(sc)
    geo = lin.geo
    T = sc.T
    (a1, b1), (a2, b2) = sc.data.support_box()
    x1 = np.linspace(min(a1, 0.0), b1 + 2 * T, n_space)
    x2 = np.linspace(a2, b2 + 2 * T + 0.5, n_space)
    dA = (x1[1] - x1[0]) * (x2[1] - x2[0])
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    times = np.linspace(-T, T, n_time)
    slices = []
    for t in times:
        m = np.stack([X1, X2, np.full_like(X1, t)], axis=-1)
        wi = lin.incoming(m)
        wr, _, _, _ = lin.reflected(m)
        slices.append(float(2 * (np.sum(np.abs(wi) ** 2) + np.sum(np.abs(wr) ** 2)) * dA))
    # data on t = -T
    g = sc.data.modes_at(X1, X2, sc.n_modes)
    data = float(2 * np.sum(np.abs(g) ** 2) * dA)
    # boundary term on x1 = F(x2), incoming trace
    xb = np.linspace(lin.x2_range[0], 0.0, n_bdry)
    tb = np.linspace(-T, T, n_bdry)
    XB, TB = np.meshgrid(xb, tb, indexing="ij")
    fp = geo.ob.grad(XB[..., None])[..., 0]
    mb = np.stack([geo.F(XB), XB, TB], axis=-1)
    x1p, x2p, _ = geo.incoming_coords(mb)
    wib = sc.data.modes_at(x1p, x2p, sc.n_modes) * chi_incoming(x1p - 1.0, sc.mu)[..., None]
    bterm = float(np.sum(np.abs(fp) * 2 * np.sum(np.abs(wib) ** 2, axis=-1)) * (xb[1] - xb[0]) * (tb[1] - tb[0]))
    # bad term over the reflected chart: |Box phi_r| |W_r|^2 j ds dx2f dt'
    tp = np.linspace(-T, T, 41)
    xf = np.linspace(lin.x2_range[0], lin.x2_range[1], 81)
    s = np.linspace(0.0, T, 41)
    TP, XF, S = np.meshgrid(tp, xf, s, indexing="ij")
    ok = TP + 2 * S <= T
    j0 = geo.flow.jacobian_tan2a(np.zeros_like(S), XF)
    js = geo.flow.jacobian_tan2a(S, XF)
    box = 0.5 * geo.flow.dlogj_ds(S, XF[..., None])
    g0 = sc.data.modes_at(geo.F(XF), XF - (TP + T), sc.n_modes)
    w2 = 2 * np.sum(np.abs(g0) ** 2, axis=-1) * chi_reflected(geo.F(XF) - 1.0, sc.mu) ** 2 * j0 / js
    bad = float(np.sum(np.abs(box) * w2 * js * ok) * (tp[1] - tp[0]) * (xf[1] - xf[0]) * (s[1] - s[0]))
    rhs = data + bterm
    return EnergyReport([float(t) for t in times], slices, bterm, data, 0.0,
                        max(slices) / rhs if rhs > 0 else 0.0, bad)


def profile_rows(grid: ProfileGrid) -> list[tuple]:
    """Textual dump rows (ray id, sample index, mode, re, im)."""
    v = grid.values
    shp = v.shape[:-1]
    rays = int(np.prod(shp[:-1])) if len(shp) > 1 else 1
    flat = v.reshape(rays, shp[-1], v.shape[-1])
    rows = []
    for r in range(rays):
        for k in range(flat.shape[1]):
            for n in range(flat.shape[2]):
                c = flat[r, k, n]
                rows.append((r, k, n + 1, float(c.real), float(c.imag)))
    return rows


def as_profile_grids(solver: PicardSolver, state: PicardState) -> tuple[ProfileGrid, ProfileGrid]:
    gi = ProfileGrid("Incoming", {"x1p": solver.x1p, "x2p": solver.x2p, "t": solver.t}, state.wi,
                     z1=(solver.x1p - 1.0)[:, None, None])
    gr = ProfileGrid("Reflected", {"tp": solver.tp, "x2f": solver.x2f, "s": solver.s_r}, state.wr,
                     z1=(solver.geo.F(solver.x2f) - 1.0)[None, :, None])
    return gi, gr


__all__ = [
    "DataSpec", "MeanData", "Scenario2D", "Geometry2D", "LinearProfiles", "PicardSolver",
    "PicardResult", "picard_iterate", "energy_diagnostic", "EnergyReport", "bump",
    "samples_from_modes", "primitive_modes", "as_profile_grids", "profile_rows", "HalfSpaceGrid",
]
