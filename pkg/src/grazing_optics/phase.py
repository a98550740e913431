"""Incoming and reflected phases, the reflected flow map and its Jacobian.

Notation: boundary parameters xbar have m = n - 1 components, the incoming
phase is phi_i = -t + <theta, xbar> and the reflected covector at the foot
point (F(xbar), xbar) is (xi1, xibar, -1) with

    xi1   = 2 <theta, grad F> / (1 + |grad F|^2),
    xibar = theta - xi1 grad F.

The reflected flow map is Z_r(s, xbar, t') = (F + 2 s xi1, xbar + 2 s xibar, t' + 2 s).
Spacetime points are arrays ``(..., n + 1)`` ordered (x1, xbar, t).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    GrazingDegenerate,
    NearShadowBoundary,
    NotInImage,
    OutOfChart,
    ShadowSide,
    WrongDimension,
    WrongOrder,
)
from .hamiltonian import glancing_order, minkowski, wave_symbol
from .obstacle import GraphObstacle, GrazingSetChart, build_grazing_chart


def _unit(theta) -> np.ndarray:
    th = np.atleast_1d(np.asarray(theta, float))
    return th / np.linalg.norm(th)


@dataclass(frozen=True)
class PlanePhase:
    """phi_i = -t + <theta, xbar>."""

    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", _unit(self.theta))

    def value(self, m) -> np.ndarray:
        m = np.asarray(m, float)
        k = len(self.theta)
        return -m[..., -1] + m[..., 1:1 + k] @ self.theta

    def grad(self, m) -> np.ndarray:
        m = np.asarray(m, float)
        g = np.zeros(m.shape)
        g[..., 1:-1] = self.theta
        g[..., -1] = -1.0
        return g

    def box(self, m) -> np.ndarray:
        return np.zeros(np.asarray(m, float).shape[:-1])


def reflected_covector(ob: GraphObstacle, theta, xb, tol: float = 1e-12):
    """(xi1, xibar) of the reflected covector; tau is always -1."""
    th = _unit(theta)
    g = ob.grad(xb)
    a = g @ th
    if np.any(a < -tol):
        raise ShadowSide("<theta, grad F> < 0: foot point lies on the shadow side")
    a = np.maximum(a, 0.0)
    xi1 = 2.0 * a / (1.0 + np.sum(g * g, axis=-1))
    xib = th - xi1[..., None] * g
    return xi1, xib


def equal_angle_check(ob: GraphObstacle, theta, xb) -> float:
    """Equal-angle and coplanarity residual of the reflection at one foot point."""
    th = _unit(theta)
    xb = np.atleast_1d(np.asarray(xb, float))
    g = ob.grad(xb)
    xi1, xib = reflected_covector(ob, th, xb)
    nrm = np.concatenate([[1.0], -g])
    inc = np.concatenate([[0.0], th])
    ref = np.concatenate([[float(xi1)], xib])
    res = abs(float(-inc @ nrm - ref @ nrm))
    # the tangential components agree: ref - inc is parallel to the normal
    d = ref - inc
    tang = d - (d @ nrm) / (nrm @ nrm) * nrm
    res = max(res, float(np.max(np.abs(tang))))
    if len(xb) >= 2:
        # coplanarity: ref lies in span{inc, normal}
        basis = np.stack([inc, nrm / np.linalg.norm(nrm)], axis=1)
        q, _ = np.linalg.qr(basis)
        res = max(res, float(np.linalg.norm(ref - q @ (q.T @ ref))))
    return res


class ReflectedFlow:
    """Closed-form reflected flow map for a plane wave and a graph obstacle."""

    def __init__(self, ob: GraphObstacle, theta):
        self.ob = ob
        self.theta = _unit(theta)
        if len(self.theta) != ob.m:
            raise ValueError("theta has the wrong dimension")
        self.n = ob.dim

    # geometry at the foot point
    def foot_data(self, xb):
        xb = np.asarray(xb, float)
        g = self.ob.grad(xb)
        H = self.ob.hess(xb)
        a = g @ self.theta
        den = 1.0 + np.sum(g * g, axis=-1)
        xi1 = 2.0 * np.maximum(a, 0.0) / den
        xib = self.theta - xi1[..., None] * g
        return g, H, a, den, xi1, xib

    def illuminated(self, xb, tol: float = 0.0) -> np.ndarray:
        return self.ob.grad(xb) @ self.theta >= -tol

    def forward_space(self, s, xb) -> np.ndarray:
        xb = np.asarray(xb, float)
        s = np.asarray(s, float)
        xi1, xib = reflected_covector(self.ob, self.theta, xb)
        x1 = self.ob.F(xb) + 2.0 * s * xi1
        xr = xb + 2.0 * s[..., None] * xib
        return np.concatenate([x1[..., None], xr], axis=-1)

    def forward(self, s, xb, tp=0.0) -> np.ndarray:
        """Spacetime point Z_r(s, xb, t')."""
        x = self.forward_space(s, xb)
        t = np.asarray(tp, float) + 2.0 * np.asarray(s, float)
        t = np.broadcast_to(t, x.shape[:-1])
        return np.concatenate([x, t[..., None]], axis=-1)

    def spatial_jacobian(self, s, xb) -> np.ndarray:
        """d x / d(s, xb) as (..., n, n); columns ordered (s, xb)."""
        s = np.asarray(s, float)
        g, H, a, den, xi1, xib = self.foot_data(xb)
        m = self.ob.m
        dxi1 = (2.0 / den)[..., None] * np.einsum("...ij,...j->...i", H, xib)
        dxib = -g[..., :, None] * dxi1[..., None, :] - xi1[..., None, None] * H
        shape = np.broadcast_shapes(s.shape, xi1.shape)
        M = np.zeros(shape + (m + 1, m + 1))
        M[..., 0, 0] = 2.0 * xi1
        M[..., 1:, 0] = 2.0 * xib
        M[..., 0, 1:] = g + 2.0 * s[..., None] * dxi1
        M[..., 1:, 1:] = np.eye(m) + 2.0 * s[..., None, None] * dxib
        return M

    def jacobian_direct(self, s, xb) -> np.ndarray:
        return np.linalg.det(self.spatial_jacobian(s, xb))

    def jacobian_analytic(self, s, xb, grazing_tol: float = 1e-12) -> np.ndarray:
        """j = 2 xi1 det(B - 2 s C Hess F); direct determinant where xi1 ~ 0."""
        s = np.asarray(s, float)
        xb = np.asarray(xb, float)
        g, H, a, den, xi1, xib = self.foot_data(xb)
        if np.any(a < -1e-12):
            raise ShadowSide("Jacobian requested on the shadow side")
        m = self.ob.m
        safe = xi1 > grazing_tol
        xi1s = np.where(safe, xi1, 1.0)
        as_ = np.where(safe, a, 1.0)
        eye = np.eye(m)
        B = eye - xib[..., :, None] * g[..., None, :] / xi1s[..., None, None]
        C = xi1s[..., None, None] * eye + self.theta[:, None] * xib[..., None, :] / as_[..., None, None]
        A = B - 2.0 * s[..., None, None] * (C @ H)
        j = 2.0 * xi1s * np.linalg.det(A)
        if not np.all(safe):
            j = np.where(safe, j, self.jacobian_direct(s, xb))
        return j

    def jacobian_fd(self, s, xb, h: float = 1e-6) -> np.ndarray:
        """Central finite-difference Jacobian determinant of forward_space."""
        s = np.asarray(s, float)
        xb = np.asarray(xb, float)
        m = self.ob.m
        cols = [(self.forward_space(s + h, xb) - self.forward_space(s - h, xb)) / (2 * h)]
        for k in range(m):
            e = np.zeros(m)
            e[k] = h
            cols.append((self.forward_space(s, xb + e) - self.forward_space(s, xb - e)) / (2 * h))
        return np.linalg.det(np.stack(cols, axis=-1))

    def dlogj_ds(self, s, xb) -> np.ndarray:
        """d/ds log j = tr(M^{-1} dM/ds) (M is affine in s)."""
        M = self.spatial_jacobian(s, xb)
        M1 = (self.spatial_jacobian(np.asarray(s, float) + 1.0, xb) - M)
        return np.trace(np.linalg.solve(M, M1), axis1=-2, axis2=-1)

    def jacobian_tan2a(self, s, x2) -> np.ndarray:
        """Two-dimensional closed form 2 theta F' - 8 s F'' / (1 + F'^2)."""
        if self.n != 2:
            raise WrongDimension("tan2a formula is two-dimensional")
        x2 = np.asarray(x2, float)
        fp = self.ob.grad(x2[..., None])[..., 0]
        fpp = self.ob.hess(x2[..., None])[..., 0, 0]
        return 2.0 * self.theta[0] * fp - 8.0 * np.asarray(s, float) * fpp / (1.0 + fp ** 2)

    def forward_2d_closed(self, s, x2) -> np.ndarray:
        """Two-dimensional closed form of the spatial flow map."""
        x2 = np.asarray(x2, float)
        s = np.asarray(s, float)
        th = self.theta[0]
        F = self.ob.F(x2[..., None])
        fp = self.ob.grad(x2[..., None])[..., 0]
        den = 1.0 + fp ** 2
        return np.stack([F + 4.0 * th * fp * s / den, x2 + 2.0 * th * (1.0 - fp ** 2) * s / den], axis=-1)

    def reflection_angle(self, x2) -> np.ndarray:
        """alpha with (xi1, xi2) = (sin alpha, theta cos alpha), 2D only."""
        xi1, xib = reflected_covector(self.ob, self.theta, np.asarray(x2, float)[..., None])
        return np.arctan2(xi1, self.theta[0] * xib[..., 0])


class IncomingFlow:
    """Affine incoming flow Z_i(s, x') = (x1', xbar' + 2 s theta, t' + 2 s)."""

    def __init__(self, theta):
        self.theta = _unit(theta)

    def forward(self, s, x0) -> np.ndarray:
        x0 = np.asarray(x0, float)
        s = np.asarray(s, float)
        out = x0.copy() if x0.ndim else x0
        out = np.array(np.broadcast_to(out, np.broadcast_shapes(x0.shape, s.shape + (x0.shape[-1],))))
        out[..., 1:-1] += 2.0 * s[..., None] * self.theta
        out[..., -1] += 2.0 * s
        return out

    def backward_to_time(self, m, t0: float):
        """Start point on t = t0 of the incoming ray through m, with its parameter s."""
        m = np.asarray(m, float)
        s = (m[..., -1] - t0) / 2.0
        x0 = m.copy()
        x0[..., 1:-1] -= 2.0 * s[..., None] * self.theta
        x0[..., -1] = t0
        return x0, s


# -- sampled chart with Newton inverse ----------------------------------------

@dataclass
class FlowChart:
    """Sampled reflected flow map over (s, xbar); t' enters by translation.

    Attributes:
        flow: the closed-form map.
        s: (K,) ray parameters; params: (P, m) foot points (illuminated).
        images: (K, P, n) spatial images; j: (K, P) Jacobians.
        covectors: (P, n) reflected spatial covectors (constant along rays).
    """

    flow: ReflectedFlow
    s: np.ndarray
    params: np.ndarray
    images: np.ndarray
    j: np.ndarray
    covectors: np.ndarray
    j_min: float = 1e-6
    spacing: float = 0.0
    _tree: cKDTree | None = field(default=None, repr=False)
    kind: str = "Reflected"

    @property
    def s0(self) -> float:
        return float(self.s[-1])

    def rows(self) -> list[list[float]]:
        out = []
        for k, sv in enumerate(self.s):
            for p, xb in enumerate(self.params):
                out.append([float(sv), *map(float, xb), *map(float, self.images[k, p]),
                            *map(float, self.covectors[p]), float(self.j[k, p])])
        return out

    def _seed(self, x: np.ndarray):
        d, idx = self._tree.query(x)
        k, p = np.unravel_index(idx, self.images.shape[:2])
        return d, self.s[k], self.params[p]

    def invert_space(self, x, tol: float = 1e-12, max_iter: int = 20, errors: str = "raise"):
        """Solve forward_space(s, xb) = x.

        Returns (s, xb, ok, jac) arrays; with ``errors="raise"`` a failure at
        any point raises NearShadowBoundary or NotInImage, otherwise ``ok``
        flags the successful points.
        """
        x = np.atleast_2d(np.asarray(x, float))
        dist, s, xb = self._seed(x)
        s = s.astype(float).copy()
        xb = xb.astype(float).copy()
        seeded = dist <= 3.0 * self.spacing
        m = self.flow.ob.m
        r = self.flow.ob.r
        res = np.full(len(x), np.inf)
        active = seeded.copy()
        for _ in range(max_iter):
            if not np.any(active):
                break
            ia = np.flatnonzero(active)
            cur = self.flow.forward_space(s[ia], _clip_ball(xb[ia], r))
            F = cur - x[ia]
            res[ia] = np.linalg.norm(F, axis=1)
            done = res[ia] <= tol * (1.0 + np.linalg.norm(x[ia], axis=1))
            active[ia[done]] = False
            ia = ia[~done]
            if len(ia) == 0:
                break
            M = self.flow.spatial_jacobian(s[ia], _clip_ball(xb[ia], r))
            try:
                step = np.linalg.solve(M, (x[ia] - self.flow.forward_space(s[ia], _clip_ball(xb[ia], r)))[..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(M[0], np.zeros(m + 1), rcond=None)[0][None] * 0
            # damping: halve until the residual decreases
            lam = np.ones(len(ia))
            base = np.linalg.norm(x[ia] - self.flow.forward_space(s[ia], _clip_ball(xb[ia], r)), axis=1)
            for _h in range(12):
                ts = s[ia] + lam * step[:, 0]
                txb = _clip_ball(xb[ia] + lam[:, None] * step[:, 1:], r)
                try:
                    new = np.linalg.norm(x[ia] - self.flow.forward_space(ts, txb), axis=1)
                except ShadowSide:
                    new = np.full(len(ia), np.inf)
                    ok_side = self.flow.illuminated(txb, 1e-12)
                    if np.any(ok_side):
                        sub = np.flatnonzero(ok_side)
                        new[sub] = np.linalg.norm(x[ia[sub]] - self.flow.forward_space(ts[sub], txb[sub]), axis=1)
                worse = ~(new < base) & (new > 0)
                if not np.any(worse):
                    break
                lam[worse] *= 0.5
            s[ia] = s[ia] + lam * step[:, 0]
            xb[ia] = _clip_ball(xb[ia] + lam[:, None] * step[:, 1:], r)
        ok = seeded & np.isfinite(res)
        ok &= res <= 1e3 * tol * (1.0 + np.linalg.norm(x, axis=1))
        # final residual on the converged points
        jac = np.full(len(x), np.nan)
        inside = np.linalg.norm(xb, axis=1) < r
        illum = self.flow.ob.grad(xb) @ self.flow.theta >= -1e-12
        valid = ok & inside & illum & (s >= -1e-10)
        if np.any(valid):
            jac[valid] = self.flow.jacobian_direct(s[valid], xb[valid])
        near_sb = valid & (np.abs(jac) < self.j_min)
        good = valid & ~near_sb
        if errors == "raise":
            if np.any(~seeded):
                raise NotInImage("point is not covered by the chart image")
            if np.any(near_sb) or np.any(seeded & ~ok & (np.abs(np.nan_to_num(jac, nan=0.0)) < self.j_min)):
                raise NearShadowBoundary("inverse degenerates: chart Jacobian below j_min")
            if np.any(~good):
                raise NotInImage("Newton iteration did not reach a chart parameter")
        return s, xb, good, jac

    def invert(self, m, tol: float = 1e-12, errors: str = "raise"):
        """Z_r^{-1}: returns (s, xb, t', ok)."""
        m = np.atleast_2d(np.asarray(m, float))
        s, xb, ok, _ = self.invert_space(m[:, :-1], tol=tol, errors=errors)
        return s, xb, m[:, -1] - 2.0 * s, ok


def _clip_ball(xb, r):
    nrm = np.linalg.norm(xb, axis=-1, keepdims=True)
    lim = 0.999999 * r
    return np.where(nrm > lim, xb * lim / np.maximum(nrm, 1e-300), xb)


def illuminated_patch(ob: GraphObstacle, theta, patch: float, count: int, seed: int = 0,
                      grid: bool = True) -> np.ndarray:
    """Foot points in B(0, patch) with <theta, grad F> >= 0."""
    th = _unit(theta)
    m = ob.m
    if m == 1:
        x = np.linspace(-patch, patch, count)[:, None]
    elif grid:
        k = max(3, int(round(count ** (1.0 / m))))
        x = np.array(list(product(np.linspace(-patch, patch, k), repeat=m)))
        x = x[np.linalg.norm(x, axis=1) <= patch]
    else:
        rng = np.random.default_rng(seed)
        v = rng.normal(size=(count, m))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        x = v * (patch * rng.uniform(size=count) ** (1.0 / m))[:, None]
    return x[ob.grad(x) @ th >= 0.0]


def build_flow_chart(ob: GraphObstacle, theta, s0: float = 0.5, patch: float | None = None,
                     n_s: int = 41, n_params: int = 201, j_min: float = 1e-6) -> FlowChart:
    flow = ReflectedFlow(ob, theta)
    patch = 0.9 * ob.r if patch is None else patch
    params = illuminated_patch(ob, theta, patch, n_params)
    s = np.linspace(0.0, s0, n_s)
    images = flow.forward_space(s[:, None], params[None, :, :])
    j = flow.jacobian_direct(s[:, None], params[None, :, :])
    xi1, xib = reflected_covector(ob, theta, params)
    cov = np.concatenate([xi1[:, None], xib], axis=1)
    flat = images.reshape(-1, ob.dim)
    tree = cKDTree(flat)
    dd, _ = tree.query(flat, k=2)
    spacing = float(np.max(dd[:, 1]))
    return FlowChart(flow, s, params, images, j, cov, j_min, spacing, tree)


def zr_invert(chart: FlowChart, m, tol: float = 1e-12):
    """Inverse of the reflected flow map at one spacetime point: (s, xb, t')."""
    s, xb, tp, _ = chart.invert(np.asarray(m, float)[None], tol=tol)
    return float(s[0]), xb[0], float(tp[0])


@dataclass
class ReflectedPhaseField:
    """phi_r(m) = phi_i(foot point of the reflected ray through m)."""

    chart: FlowChart

    @property
    def theta(self) -> np.ndarray:
        return self.chart.flow.theta

    def evaluate(self, m, errors: str = "raise"):
        """Returns (value, gradient, ok) for points m of shape (P, n+1)."""
        m = np.atleast_2d(np.asarray(m, float))
        s, xb, tp, ok = self.chart.invert(m, errors=errors)
        val = -tp + xb @ self.theta
        xi1, xib = reflected_covector(self.chart.flow.ob, self.theta, np.where(ok[:, None], xb, 0.0))
        grad = np.concatenate([xi1[:, None], xib, -np.ones((len(m), 1))], axis=1)
        val = np.where(ok, val, np.nan)
        grad[~ok] = np.nan
        return val, grad, ok

    def box(self, m, errors: str = "raise"):
        """Box phi_r via the Liouville identity: (1/2) d/ds log j at the ray parameter."""
        m = np.atleast_2d(np.asarray(m, float))
        s, xb, _, ok = self.chart.invert(m, errors=errors)
        out = np.full(len(m), np.nan)
        if np.any(ok):
            out[ok] = 0.5 * self.chart.flow.dlogj_ds(s[ok], xb[ok])
        return out

    def box_fd(self, m, h: float = 1e-4) -> np.ndarray:
        """Box phi_r = div_x (spatial covector) by central differences (phi_t = -1)."""
        m = np.atleast_2d(np.asarray(m, float))
        n = m.shape[1] - 1
        total = np.zeros(len(m))
        for k in range(n):
            e = np.zeros(n + 1)
            e[k] = h
            _, gp, _ = self.evaluate(m + e)
            _, gm, _ = self.evaluate(m - e)
            total += (gp[:, k] - gm[:, k]) / (2 * h)
        return total


def phi_r(field_r: ReflectedPhaseField, m):
    val, grad, _ = field_r.evaluate(np.asarray(m, float)[None])
    return float(val[0]), grad[0]


# -- shadow boundary ----------------------------------------------------------

@dataclass
class ShadowBoundary:
    """SB+ and SB- as straight flowouts of sampled grazing points.

    ``feet`` are grazing points xbar_g; generators are the lines
    sigma -> (F(xbar_g), xbar_g + sigma theta) in space (time is free).
    """

    obstacle: GraphObstacle
    theta: np.ndarray
    feet: np.ndarray
    t_window: tuple[float, float]

    @property
    def bases(self) -> np.ndarray:
        F = self.obstacle.F(self.feet)
        return np.concatenate([np.atleast_1d(F)[:, None], self.feet], axis=1)

    @property
    def direction(self) -> np.ndarray:
        return np.concatenate([[0.0], self.theta])

    def sample(self, s_values, t0_values, side: str = "+") -> np.ndarray:
        """Spacetime points (F(xg), xg + 2 s theta, t0 + 2 s) of SB+ (or SB- with s <= 0)."""
        out = []
        sgn = 1.0 if side == "+" else -1.0
        for b in self.bases:
            for s in np.asarray(s_values, float):
                for t0 in np.asarray(t0_values, float):
                    x = b + 2.0 * sgn * s * self.direction
                    out.append(np.concatenate([x, [t0 + 2.0 * sgn * s]]))
        return np.array(out)

    def distance(self, x, side: str = "both") -> np.ndarray:
        """Spatial distance from points x (P, n) to SB+, SB- or both."""
        x = np.atleast_2d(np.asarray(x, float))
        d = self.direction
        best = np.full(len(x), np.inf)
        for b in self.bases:
            rel = x - b
            sig = rel @ d
            if side == "+":
                sig = np.maximum(sig, 0.0)
            elif side == "-":
                sig = np.minimum(sig, 0.0)
            best = np.minimum(best, np.linalg.norm(rel - sig[:, None] * d, axis=1))
        return best

    def in_shadow(self, x, samples: int = 400) -> np.ndarray:
        """True where the backward incoming ray meets the obstacle (x outside it)."""
        x = np.atleast_2d(np.asarray(x, float))
        reach = 2.0 * self.obstacle.r
        sig = np.linspace(0.0, reach, samples)
        xb = x[:, None, 1:] - sig[None, :, None] * self.theta
        nrm = np.linalg.norm(xb, axis=2)
        inside = nrm < self.obstacle.r
        F = np.where(inside, self.obstacle.F(np.where(inside[..., None], xb, 0.0)), -np.inf)
        blocked = np.any(F > x[:, None, 0], axis=1)
        outside_obstacle = x[:, 0] >= np.where(np.linalg.norm(x[:, 1:], axis=1) < self.obstacle.r,
                                               self.obstacle.F(_clip_ball(x[:, 1:], self.obstacle.r)), -np.inf)
        return blocked & outside_obstacle


def shadow_boundary(ob: GraphObstacle, theta, t_window=(-1.0, 1.0), chart: GrazingSetChart | None = None,
                    count: int = 64) -> ShadowBoundary:
    chart = chart or build_grazing_chart(ob, theta)
    feet = chart.grazing_samples(count)
    return ShadowBoundary(ob, chart.theta, feet, tuple(t_window))


# -- diagnostics ----------------------------------------------------------------

@dataclass
class InjectivityReport:
    pairs: int
    collisions: int
    min_ratio: float
    worst_pair: tuple
    defocusing_ok: bool | None
    max_alpha_prime: float | None
    seed: int

    def to_dict(self) -> dict:
        return {"pairs": self.pairs, "collisions": self.collisions, "min_ratio": self.min_ratio,
                "worst_pair": [list(map(float, v)) for v in self.worst_pair],
                "defocusing_ok": self.defocusing_ok, "max_alpha_prime": self.max_alpha_prime,
                "seed": self.seed}


def injectivity_fuzz(flow: ReflectedFlow, s0: float, patch: float, pairs: int = 100000, seed: int = 0,
                     t_range: float = 1.0, image_tol: float = 1e-9, param_tol: float = 1e-7,
                     min_illumination: float = 0.0) -> InjectivityReport:
    """Random pairs in the open chart; counts image coincidences of distinct parameters.

    Half of the pairs are independent draws, the rest are local perturbations
    at scales 1e-1 ... 1e-6 so that nearly coincident parameters are probed.
    """
    rng = np.random.default_rng(seed)
    ob = flow.ob
    m = ob.m

    def draw(count):
        pts = np.zeros((0, m))
        while len(pts) < count:
            cand = illuminated_patch(ob, flow.theta, patch, 4 * count, seed=int(rng.integers(2 ** 31)), grid=False)
            a = ob.grad(cand) @ flow.theta
            cand = cand[a > min_illumination]
            pts = np.concatenate([pts, cand])
        return pts[:count]

    def batch(count):
        half = count // 2
        p_xb = draw(count)
        p_s = rng.uniform(0.0, s0, count)
        p_t = rng.uniform(-t_range, t_range, count)
        q_xb = draw(count)
        q_s = rng.uniform(0.0, s0, count)
        q_t = rng.uniform(-t_range, t_range, count)
        scales = 10.0 ** -rng.integers(1, 7, count - half)
        dq = rng.normal(size=(count - half, m + 2)) * scales[:, None]
        q_xb[half:] = p_xb[half:] + dq[:, :m]
        q_s[half:] = np.clip(p_s[half:] + dq[:, m], 0.0, s0)
        q_t[half:] = p_t[half:] + dq[:, m + 1]
        keep = (np.linalg.norm(q_xb, axis=1) < patch) & (ob.grad(q_xb) @ flow.theta > min_illumination)
        return [v[keep] for v in (p_xb, p_s, p_t, q_xb, q_s, q_t)]

    # perturbed partners leaving the chart are dropped; top up to the requested count
    parts = batch(pairs)
    while len(parts[0]) < pairs:
        more = batch(max(1000, 2 * (pairs - len(parts[0]))))
        parts = [np.concatenate([a, b]) for a, b in zip(parts, more)]
    p_xb, p_s, p_t, q_xb, q_s, q_t = (v[:pairs] for v in parts)
    zp = flow.forward(p_s, p_xb, p_t)
    zq = flow.forward(q_s, q_xb, q_t)
    dz = np.linalg.norm(zp - zq, axis=1)
    dp = np.linalg.norm(np.concatenate([p_xb - q_xb, (p_s - q_s)[:, None], (p_t - q_t)[:, None]], 1), axis=1)
    coll = (dz <= image_tol) & (dp > param_tol)
    ratio = np.where(dp > 0, dz / np.maximum(dp, 1e-300), np.inf)
    w = int(np.argmin(ratio))
    defocus = None
    amax = None
    if m == 1:
        x2 = np.linspace(-patch, 0.0, 2001)
        x2 = x2[ob.grad(x2[:, None])[:, 0] * flow.theta[0] >= 0]
        fp = ob.grad(x2[:, None])[:, 0]
        fpp = ob.hess(x2[:, None])[:, 0, 0]
        aprime = 2.0 * flow.theta[0] * fpp / (1.0 + fp ** 2)
        amax = float(np.max(aprime))
        defocus = bool(amax <= 1e-12)
    return InjectivityReport(int(len(dz)), int(np.sum(coll)), float(ratio[w]),
                             (np.concatenate([[p_s[w]], p_xb[w], [p_t[w]]]),
                              np.concatenate([[q_s[w]], q_xb[w], [q_t[w]]])),
                             defocus, amax, seed)


def nonresonance_scan(phase_i: PlanePhase, field_r: ReflectedPhaseField, points, k_max: int = 5):
    """min over points and 1 <= |k_i|, |k_r| <= k_max of |p(k_i dphi_i + k_r dphi_r)|."""
    pts = np.atleast_2d(np.asarray(points, float))
    _, gr, ok = field_r.evaluate(pts, errors="ignore")
    gi = phase_i.grad(pts)
    gr, gi = gr[ok], gi[ok]
    best = np.inf
    ks = [k for k in range(-k_max, k_max + 1) if k != 0]
    for ki in ks:
        for kr in ks:
            cov = ki * gi + kr * gr
            val = np.abs(wave_symbol(cov[:, :-1], cov[:, -1]))
            if len(val):
                best = min(best, float(np.min(val)))
    return best, int(np.sum(ok))


def pair_symbol(grad_i, grad_r, ki: float, kr: float) -> np.ndarray:
    """p(ki dphi_i + kr dphi_r) and its expansion 2 ki kr B(dphi_i, dphi_r)."""
    cov = ki * np.asarray(grad_i) + kr * np.asarray(grad_r)
    return wave_symbol(cov[..., :-1], cov[..., -1]), 2.0 * ki * kr * minkowski(grad_i, grad_r)


@dataclass
class LeadingJacobianFit:
    alpha: float
    windows: list[float]
    coefficients: list[tuple[float, float]]   # fitted (a_s, a_y) per window
    residuals: list[float]                   # max |j - (4 alpha s - 2 y1)| per window
    residual_ratio: float

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "windows": self.windows,
                "coefficients": [list(c) for c in self.coefficients],
                "residuals": self.residuals, "residual_ratio": self.residual_ratio}


def appendix_jacobian_leading(ob: GraphObstacle, theta=(1.0,), windows=(1e-2, 5e-3), n: int = 41) -> LeadingJacobianFit:
    """Fit j(s, y) ~ a_s s + a_y y1 near the grazing point of a 2D obstacle.

    The boundary coordinate is y1 = -<theta, grad F(xbar)> (so y1 <= 0 on
    the illuminated side and j(0, y) = -2 y1 exactly) and alpha is
    H_p^2 beta / 2 at the base point.
    """
    if ob.dim != 2:
        raise WrongDimension("leading-Jacobian fit implemented for n = 2")
    th = _unit(theta)
    rep = glancing_order(ob, th)
    if rep.order != 2:
        raise WrongOrder(f"base point has glancing order {rep.order_label}, expected 2")
    alpha = rep.derivatives[1] / 2.0
    flow = ReflectedFlow(ob, th)
    x2_of_y = _invert_y1(ob, th)
    coefs, resid = [], []
    for w in windows:
        s = np.linspace(0.0, w, n)
        y1 = np.linspace(-w, 0.0, n)
        S, Y = np.meshgrid(s, y1, indexing="ij")
        X2 = x2_of_y(Y.ravel()).reshape(Y.shape)
        J = flow.jacobian_analytic(S, X2[..., None])
        A = np.stack([S.ravel(), Y.ravel()], axis=1)
        c, *_ = np.linalg.lstsq(A, J.ravel(), rcond=None)
        coefs.append((float(c[0]), float(c[1])))
        resid.append(float(np.max(np.abs(J - (4.0 * alpha * S - 2.0 * Y)))))
    return LeadingJacobianFit(float(alpha), list(windows), coefs, resid, resid[-1] / resid[0])


def _invert_y1(ob: GraphObstacle, th):
    """x2 as a function of y1 = -theta F'(x2) on the illuminated side (monotone)."""
    lim = 0.9 * ob.r
    x2 = np.linspace(-lim, lim, 20001) * (-np.sign(th[0]))
    x2 = np.sort(x2)
    y = -th[0] * ob.grad(x2[:, None])[:, 0]
    sel = y <= 0
    xs, ys = x2[sel], y[sel]
    order = np.argsort(ys)
    xs, ys = xs[order], ys[order]
    from scipy.optimize import brentq

    def inv(yv):
        out = np.empty_like(np.asarray(yv, float))
        for i, v in enumerate(np.asarray(yv, float)):
            if v == 0.0:
                out[i] = 0.0
                continue
            k = np.searchsorted(ys, v)
            a, b = xs[max(k - 1, 0)], xs[min(k, len(xs) - 1)]
            f = lambda z: -th[0] * float(ob.grad(np.array([[z]]))[0, 0]) - v
            if f(a) * f(b) > 0:
                a, b = xs[0], 0.0
            out[i] = brentq(f, min(a, b), max(a, b), xtol=1e-16, rtol=1e-15)
        return out

    return inv


@dataclass
class ScalingFit:
    exponent_j0: float
    exponent_ds: float | None
    flat_ratios: list[float] | None

    def to_dict(self) -> dict:
        return {"exponent_j0": self.exponent_j0, "exponent_ds": self.exponent_ds,
                "flat_ratios": self.flat_ratios}


def jacobian_scaling_near_grazing(ob: GraphObstacle, theta=(1.0,), x_range=(1e-3, 1e-2), n: int = 25,
                                  flat_power: int = 10) -> ScalingFit:
    """Log-log fits of j(0, x2) and d j / d s against |x2| on the illuminated side."""
    if ob.dim != 2:
        raise WrongDimension("scaling fit is two-dimensional")
    th = _unit(theta)
    flow = ReflectedFlow(ob, th)
    ax = np.geomspace(x_range[0], x_range[1], n)
    x2 = -np.sign(th[0]) * ax
    j0 = flow.jacobian_analytic(np.zeros_like(x2), x2[:, None])
    j1 = flow.jacobian_analytic(np.ones_like(x2), x2[:, None]) - j0
    if ob.family == "ExpFlat":
        ratios = [float(v) for v in j0 / ax ** flat_power]
        return ScalingFit(float("inf"), None, ratios)
    e0 = np.polyfit(np.log(ax), np.log(np.abs(j0)), 1)[0]
    e1 = np.polyfit(np.log(ax), np.log(np.abs(j1)), 1)[0]
    return ScalingFit(float(e0), float(e1), None)


def invert_reflected_2d(ob: GraphObstacle, theta: float, x1, x2, x2_range: tuple[float, float],
                        samples: int = 64, iters: int = 60):
    """Bracketed inverse of the 2D reflected flow map (vectorized).

    Finds the foot x2f in ``x2_range`` whose reflected ray passes through
    (x1, x2) with s >= 0, as a root of the cross product
    (x - foot) x xi(x2f).  Returns (x2f, s, ok).
    """
    x1 = np.atleast_1d(np.asarray(x1, float))
    x2 = np.atleast_1d(np.asarray(x2, float))
    th = np.array([float(np.sign(theta) or 1.0)])
    lo, hi = x2_range

    def parts(z):
        xi1, xib = reflected_covector(ob, th, z[..., None], tol=np.inf)
        F = ob.F(z[..., None])
        dx1 = x1r - F
        dx2 = x2r - z
        return dx1 * xib[..., 0] - dx2 * xi1, (dx1 * xi1 + dx2 * xib[..., 0]) / 2.0

    grid = np.linspace(lo, hi, samples)
    x1r = x1[:, None]
    x2r = x2[:, None]
    g, s = parts(np.broadcast_to(grid, (len(x1), samples)))
    cand = (g[:, :-1] * g[:, 1:] <= 0) & (np.maximum(s[:, :-1], s[:, 1:]) >= -1e-12)
    x1r = x1
    x2r = x2
    z = np.full(len(x1), np.nan)
    sz = np.full(len(x1), -1.0)
    ok = np.zeros(len(x1), bool)
    # try brackets in order until one yields s >= 0
    for _ in range(4):
        todo = ~ok & np.any(cand, axis=1)
        if not np.any(todo):
            break
        k = np.argmax(cand, axis=1)
        a = grid[k].copy()
        b = grid[np.minimum(k + 1, samples - 1)].copy()
        ga, _ = parts(a)
        for _it in range(iters):
            mid = 0.5 * (a + b)
            gm, _ = parts(mid)
            left = ga * gm <= 0
            b = np.where(left, mid, b)
            a = np.where(left, a, mid)
            ga = np.where(left, ga, gm)
        zc = 0.5 * (a + b)
        _, sc_ = parts(zc)
        good = todo & (sc_ >= -1e-10)
        z = np.where(good, zc, z)
        sz = np.where(good, sc_, sz)
        ok |= good
        cand[np.arange(len(x1)), k] = False
    s = sz
    return np.where(ok, z, lo), np.where(ok, np.maximum(s, 0.0), 0.0), ok


def zr_forward(flow: ReflectedFlow, s, xb, tp=0.0, s0: float | None = None) -> np.ndarray:
    """Z_r(s, xb, t') with chart checks (0 <= s < s0, illuminated foot, |xb| < r)."""
    s_arr = np.asarray(s, float)
    xb = np.asarray(xb, float)
    if np.any(s_arr < 0) or (s0 is not None and np.any(s_arr >= s0)):
        raise OutOfChart("ray parameter outside [0, s0)")
    if np.any(np.linalg.norm(np.atleast_1d(xb)[..., :], axis=-1) >= flow.ob.r):
        raise OutOfChart("foot point outside B(0, r)")
    return flow.forward(s_arr, xb, tp)


@dataclass
class MatrixLemmaReport:
    xi1: float
    det_b: float
    det_b_expected: float
    cbt_error: float            # max abs entry of C B^T - ((xi1)^2 I + xib xib^T)/xi1
    cbt_asymmetry: float
    cbt_min_eig: float
    matrix_scale: float

    @property
    def passed(self) -> bool:
        tol = 1e-12 * max(1.0, self.matrix_scale)
        return (abs(self.det_b - self.det_b_expected) <= tol and self.cbt_error <= tol
                and self.cbt_min_eig >= self.xi1 - tol)

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()} | {"passed": self.passed}


def assemble_bc(grad_f, theta):
    """B and C at a foot point with the given gradient of F."""
    g = np.asarray(grad_f, float)
    th = _unit(theta)
    a = float(g @ th)
    xi1 = 2.0 * a / (1.0 + g @ g)
    xib = th - xi1 * g
    m = len(g)
    B = np.eye(m) - np.outer(xib, g) / xi1
    C = xi1 * np.eye(m) + np.outer(th, xib) / a
    return B, C, xi1, xib


def matrix_lemma_checks(grad_f, theta, tol: float = 1e-12) -> MatrixLemmaReport:
    """det B = (1 + |grad F|^2)/2 and C B^T = (xi1^2 I + xib xib^T)/xi1."""
    g = np.asarray(grad_f, float)
    th = _unit(theta)
    a = float(g @ th)
    xi1 = 2.0 * a / (1.0 + g @ g)
    if xi1 <= tol:
        raise GrazingDegenerate("xi1 vanishes: the matrix identities need a strictly illuminated point")
    B, C, xi1, xib = assemble_bc(g, th)
    CBt = C @ B.T
    target = (xi1 ** 2 * np.eye(len(g)) + np.outer(xib, xib)) / xi1
    sym = 0.5 * (CBt + CBt.T)
    scale = float(max(np.max(np.abs(B)), np.max(np.abs(C)), np.max(np.abs(target))))
    return MatrixLemmaReport(xi1, float(np.linalg.det(B)), (1.0 + g @ g) / 2.0,
                             float(np.max(np.abs(CBt - target))), float(np.max(np.abs(CBt - CBt.T))),
                             float(np.min(np.linalg.eigvalsh(sym))), scale)


def rank_one_det_check(a, b) -> float:
    """|det(I + a b^T) - (1 + <a, b>)|."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return abs(float(np.linalg.det(np.eye(len(a)) + np.outer(a, b)) - (1.0 + a @ b)))


def xi1_gradient_check(ob: GraphObstacle, theta, xb, h: float = 1e-6) -> float:
    """Relative gap between grad xi1 = 2 Hess(F) xib / (1 + |grad F|^2) and central differences."""
    th = _unit(theta)
    xb = np.asarray(xb, float)
    g = ob.grad(xb)
    H = ob.hess(xb)
    _, xib = reflected_covector(ob, th, xb)
    exact = 2.0 * H @ xib / (1.0 + g @ g)
    fd = np.zeros_like(xb)
    for k in range(len(xb)):
        e = np.zeros_like(xb)
        e[k] = h
        fd[k] = (reflected_covector(ob, th, xb + e)[0] - reflected_covector(ob, th, xb - e)[0]) / (2 * h)
    return float(np.max(np.abs(fd - exact)) / max(1.0, np.max(np.abs(exact))))


@dataclass
class FlowOracleReport:
    samples: int
    max_error: float
    s_max: float

    def to_dict(self) -> dict:
        return {"samples": self.samples, "max_error": self.max_error, "s_max": self.s_max}


def flow_map_oracle(ob: GraphObstacle, theta, count: int = 10000, s_max: float = 0.5,
                    patch: float | None = None, seed: int = 0, tol: float = 1e-13) -> FlowOracleReport:
    """Closed-form Z_r against numerically integrated reflected bicharacteristics.

    Starts sit on the boundary with the reflected covector and tau = -1; each
    row is integrated to its own random s in [0, s_max].
    """
    from .hamiltonian import integrate_batch

    flow = ReflectedFlow(ob, theta)
    patch = 0.9 * ob.r if patch is None else patch
    rng = np.random.default_rng(seed)
    xb = illuminated_patch(ob, theta, patch, 3 * count, seed=seed, grid=False)[:count]
    xi1, xib = reflected_covector(ob, flow.theta, xb)
    P = len(xb)
    tp = rng.uniform(-1.0, 1.0, size=P)
    s = rng.uniform(0.0, s_max, size=P)
    states = np.concatenate([ob.F(xb)[:, None], xb, tp[:, None], xi1[:, None], xib,
                             -np.ones((P, 1))], axis=1)
    out = integrate_batch(states, s, tol=tol)
    n = ob.m + 1
    num = np.concatenate([out[:, :n], out[:, n:n + 1]], axis=1)
    exact = flow.forward(s, xb, tp)
    return FlowOracleReport(P, float(np.max(np.abs(num - exact))), s_max)
