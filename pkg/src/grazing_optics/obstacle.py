"""Convex obstacles given as graphs x1 = F(xbar) and their grazing sets.

All families are stored through the depth function D = 1 - F, which is
what the flow and order computations actually need: D(0) = 0, grad D(0) = 0
and D >= 0 near the origin for a convex cap.  Working with D avoids the
cancellation in 1 - F for very flat boundaries.

Arrays of boundary parameters have shape ``(..., m)`` with ``m = dim - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from . import expr
from .errors import (
    ChartAssumptionError,
    DegenerateLeadingForm,
    MultipleZeroLines,
    NonFinite,
    OutOfDomain,
)

FAMILIES = ("Poly2D", "IsoPower", "AxisPower", "ExpFlat", "Quartic3D", "Radial", "Custom")

# depth polynomials of the three-dimensional examples, as {(a, b): coeff}
# meaning coeff * x2^a * x3^b
QUARTIC_VARIANTS = {
    "F1": {(4, 0): 1.0, (0, 4): 1.0},
    "F3": {(4, 0): 1.0, (2, 2): 1.0, (0, 4): 1.0},
    "F4": {(4, 0): 1.0, (2, 2): 1.0, (0, 4): 1.0, (1, 3): -1.0},
    "F5": {(6, 0): 1.0, (2, 4): 1.0, (4, 2): 1.0, (0, 6): 1.0},
    # not concave: used as a negative control for convexity validation
    "F6": {(6, 0): 1.0, (3, 3): 1.0, (0, 6): 1.0},
}


class _Polynomial:
    """Sparse multivariate polynomial with analytic derivatives."""

    def __init__(self, terms: dict[tuple[int, ...], float]):
        self.terms = {tuple(int(e) for e in k): float(v) for k, v in terms.items() if v != 0.0}
        self.nvar = len(next(iter(self.terms))) if self.terms else 1

    @property
    def min_degree(self) -> int:
        return min(sum(k) for k in self.terms)

    def homogeneous_part(self, degree: int) -> "_Polynomial":
        return _Polynomial({k: v for k, v in self.terms.items() if sum(k) == degree} or {(0,) * self.nvar: 0.0})

    def __call__(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(x.shape[:-1])
        for k, c in self.terms.items():
            mono = np.ones(x.shape[:-1])
            for j, e in enumerate(k):
                if e:
                    mono = mono * x[..., j] ** e
            out = out + c * mono
        return out

    def derivative(self, j: int) -> "_Polynomial":
        terms: dict[tuple[int, ...], float] = {}
        for k, c in self.terms.items():
            if k[j] == 0:
                continue
            nk = list(k)
            nk[j] -= 1
            terms[tuple(nk)] = terms.get(tuple(nk), 0.0) + c * k[j]
        if not terms:
            terms = {(0,) * self.nvar: 0.0}
        return _Polynomial(terms)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return np.stack([self.derivative(j)(x) for j in range(self.nvar)], axis=-1)

    def hessian(self, x: np.ndarray) -> np.ndarray:
        rows = []
        for i in range(self.nvar):
            di = self.derivative(i)
            rows.append(np.stack([di.derivative(j)(x) for j in range(self.nvar)], axis=-1))
        return np.stack(rows, axis=-2)


@dataclass(frozen=True)
class GraphObstacle:
    """Obstacle {x1 < F(xbar)} near the point (1, 0).

    Attributes:
        family: one of ``FAMILIES``.
        params: family parameters (see the ``poly2d``/``iso_power``/... builders).
        r: validity radius of the xbar-domain.
        dim: ambient space dimension n >= 2.
    """

    family: str
    params: tuple
    r: float
    dim: int
    _impl: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown obstacle family {self.family!r}")
        if self.dim < 2:
            raise ValueError("dim must be at least 2")
        if not self.r > 0:
            raise ValueError("r must be positive")
        object.__setattr__(self, "_impl", _build_impl(self))
        self._check_normalization()

    @property
    def m(self) -> int:
        return self.dim - 1

    def _check_normalization(self):
        zero = np.zeros(self.m)
        d0 = float(self._impl.depth(zero))
        g0 = np.asarray(self._impl.grad(zero))
        if abs(d0) > 1e-12 or np.max(np.abs(g0)) > 1e-10:
            raise ValueError("obstacle must satisfy F(0) = 1 and grad F(0) = 0")

    def _prep(self, xb, check: bool = True) -> np.ndarray:
        x = np.asarray(xb, dtype=float)
        if x.ndim == 0:
            x = x[None]
        if x.shape[-1] != self.m:
            raise ValueError(f"expected boundary points with {self.m} components, got shape {x.shape}")
        if check and np.any(np.linalg.norm(x, axis=-1) >= self.r):
            raise OutOfDomain(f"|xbar| >= r = {self.r}")
        return x

    # Depth D = 1 - F and its derivatives.  These skip the radius check so
    # that flows may probe slightly outside B(0, r) when they need to.
    def depth(self, xb, check: bool = False) -> np.ndarray:
        return self._finite(self._impl.depth(self._prep(xb, check)))

    def depth_grad(self, xb, check: bool = False) -> np.ndarray:
        return self._finite(self._impl.grad(self._prep(xb, check)))

    def depth_hess(self, xb, check: bool = False) -> np.ndarray:
        return self._finite(self._impl.hess(self._prep(xb, check)))

    def F(self, xb, check: bool = False) -> np.ndarray:
        return 1.0 - self.depth(xb, check)

    def grad(self, xb, check: bool = False) -> np.ndarray:
        return -self.depth_grad(xb, check)

    def hess(self, xb, check: bool = False) -> np.ndarray:
        return -self.depth_hess(xb, check)

    @staticmethod
    def _finite(v):
        v = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(v)):
            raise NonFinite("obstacle evaluation produced a non-finite value")
        return v

    def depth_highprec(self, xb: Sequence[float], digits: int = 60):
        """Depth at a single point in mpmath arithmetic (used for order detection)."""
        return self._impl.depth_mp(list(xb), digits)

    def describe(self) -> str:
        return f"{self.family}{self.params} (n={self.dim}, r={self.r})"


def eval_obstacle(ob: GraphObstacle, xb) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (F, grad F, Hessian F) at ``xb``; raises OutOfDomain for |xb| >= r."""
    x = ob._prep(xb, check=True)
    return ob.F(x), ob.grad(x), ob.hess(x)


# -- family implementations ---------------------------------------------------

class _PolyImpl:
    def __init__(self, poly: _Polynomial):
        self.poly = poly

    def depth(self, x):
        return self.poly(x)

    def grad(self, x):
        return self.poly.gradient(x)

    def hess(self, x):
        return self.poly.hessian(x)

    def depth_mp(self, x, digits):
        import mpmath

        with mpmath.workdps(digits):
            total = mpmath.mpf(0)
            for k, c in self.poly.terms.items():
                mono = mpmath.mpf(c)
                for j, e in enumerate(k):
                    mono *= mpmath.mpf(x[j]) ** e
                total += mono
            return total


class _RadialImpl:
    """D = h(<L x, x>) for symmetric positive definite L.

    ``h`` is given by callables for h, h', h'' (vectorized) and an mpmath
    version for high precision evaluation.
    """

    def __init__(self, lam: np.ndarray, h: Callable, dh: Callable, d2h: Callable, h_mp: Callable):
        self.lam = lam
        self.h, self.dh, self.d2h, self.h_mp = h, dh, d2h, h_mp

    def _q(self, x):
        lx = x @ self.lam.T
        return np.sum(lx * x, axis=-1), lx

    def depth(self, x):
        q, _ = self._q(x)
        return self.h(q)

    def grad(self, x):
        q, lx = self._q(x)
        return 2.0 * self.dh(q)[..., None] * lx

    def hess(self, x):
        q, lx = self._q(x)
        return (2.0 * self.dh(q)[..., None, None] * self.lam
                + 4.0 * self.d2h(q)[..., None, None] * lx[..., :, None] * lx[..., None, :])

    def depth_mp(self, x, digits):
        import mpmath

        with mpmath.workdps(digits):
            xv = [mpmath.mpf(v) for v in x]
            q = mpmath.mpf(0)
            for i in range(len(xv)):
                for j in range(len(xv)):
                    q += mpmath.mpf(self.lam[i, j]) * xv[i] * xv[j]
            return self.h_mp(q)


def _series_h(coeffs: Sequence[float]):
    """h(s) = sum_{j>=1} a_j s^j with a_1 = coeffs[0]."""
    a = np.asarray(coeffs, dtype=float)

    def h(s):
        return sum(a[j] * s ** (j + 1) for j in range(len(a)))

    def dh(s):
        return sum((j + 1) * a[j] * s ** j for j in range(len(a)))

    def d2h(s):
        out = np.zeros_like(np.asarray(s, dtype=float))
        for j in range(1, len(a)):
            out = out + (j + 1) * j * a[j] * s ** (j - 1)
        return out

    def h_mp(s):
        return sum(a[j] * s ** (j + 1) for j in range(len(a)))

    return h, dh, d2h, h_mp


def _flat_h():
    """h(s) = exp(-1/s), h(0) = 0 (all derivatives vanish at 0)."""

    def _safe(s):
        s = np.asarray(s, dtype=float)
        ok = s > 1e-3
        return s, ok, np.where(ok, s, 1.0)

    def h(s):
        s, ok, ss = _safe(s)
        return np.where(ok, np.exp(-1.0 / ss), 0.0)

    def dh(s):
        s, ok, ss = _safe(s)
        return np.where(ok, np.exp(-1.0 / ss) / ss ** 2, 0.0)

    def d2h(s):
        s, ok, ss = _safe(s)
        return np.where(ok, np.exp(-1.0 / ss) * (1.0 - 2.0 * ss) / ss ** 4, 0.0)

    def h_mp(s):
        import mpmath

        return mpmath.mpf(0) if s == 0 else mpmath.exp(-1 / s)

    return h, dh, d2h, h_mp


class _CustomImpl:
    def __init__(self, text: str, dim: int):
        self.text = text
        self.tree = expr.parse(text, dim)
        self.nvar = dim - 1
        self.gtree = [expr.diff(self.tree, i) for i in range(self.nvar)]
        self.htree = [[expr.diff(g, j) for j in range(self.nvar)] for g in self.gtree]

    def _vars(self, x):
        return [x[..., i] for i in range(self.nvar)]

    def _ev(self, tree, x):
        with np.errstate(all="ignore"):
            v = expr.evaluate(tree, self._vars(x))
        return np.broadcast_to(np.asarray(v, dtype=float), x.shape[:-1]).copy()

    def depth(self, x):
        return 1.0 - self._ev(self.tree, x)

    def grad(self, x):
        return -np.stack([self._ev(g, x) for g in self.gtree], axis=-1)

    def hess(self, x):
        h = -np.stack([np.stack([self._ev(t, x) for t in row], axis=-1) for row in self.htree], axis=-2)
        if np.all(np.isfinite(h)):
            return 0.5 * (h + np.swapaxes(h, -1, -2))
        # finite-difference fallback on the analytic gradient
        step = 1e-5
        cols = []
        for j in range(self.nvar):
            e = np.zeros(self.nvar)
            e[j] = step
            cols.append((self.grad(x + e) - self.grad(x - e)) / (2 * step))
        h = np.stack(cols, axis=-1)
        return 0.5 * (h + np.swapaxes(h, -1, -2))

    def depth_mp(self, x, digits):
        import mpmath

        with mpmath.workdps(digits):
            return 1 - expr.evaluate(self.tree, [mpmath.mpf(v) for v in x], mpmath)


def _build_impl(ob: GraphObstacle):
    fam, p, m = ob.family, ob.params, ob.dim - 1
    if fam == "Poly2D":
        if ob.dim != 2:
            raise ValueError("Poly2D requires dim = 2")
        coeffs = p[0]
        terms = {(j + 2,): float(c) for j, c in enumerate(coeffs)}
        return _PolyImpl(_Polynomial(terms))
    if fam == "IsoPower":
        k = int(p[0])
        return _RadialImpl(np.eye(m), *_series_h([0.0] * (k - 1) + [1.0]))
    if fam == "AxisPower":
        k = int(p[0])
        terms = {}
        for j in range(m):
            e = [0] * m
            e[j] = 2 * k
            terms[tuple(e)] = 1.0
        return _PolyImpl(_Polynomial(terms))
    if fam == "ExpFlat":
        return _RadialImpl(np.eye(m), *_flat_h())
    if fam == "Quartic3D":
        if ob.dim != 3:
            raise ValueError("Quartic3D requires dim = 3")
        variant, remainder = p[0], float(p[1]) if len(p) > 1 else 0.0
        if variant not in QUARTIC_VARIANTS:
            raise ValueError(f"unknown Quartic3D variant {variant!r}")
        terms = dict(QUARTIC_VARIANTS[variant])
        if remainder:
            # one degree above the leading form, along x2
            top = max(sum(k) for k in terms) + 1
            terms[(top, 0)] = terms.get((top, 0), 0.0) - remainder
        return _PolyImpl(_Polynomial(terms))
    if fam == "Radial":
        coeffs, lam = p[0], np.asarray(p[1], dtype=float)
        if lam.shape != (m, m) or not np.allclose(lam, lam.T):
            raise ValueError("Radial matrix must be symmetric of size dim-1")
        if np.min(np.linalg.eigvalsh(lam)) <= 0:
            raise ValueError("Radial matrix must be positive definite")
        return _RadialImpl(lam, *_series_h(coeffs))
    if fam == "Custom":
        return _CustomImpl(p[0], ob.dim)
    raise ValueError(fam)


# convenience builders

def poly2d(coefficients: Sequence[float], r: float = 1.0) -> GraphObstacle:
    """F(x2) = 1 - sum_j c_j x2^(j+2) with ``coefficients = (c_0, c_1, ...)``."""
    return GraphObstacle("Poly2D", (tuple(float(c) for c in coefficients),), r, 2)


def parabola(r: float = 1.0) -> GraphObstacle:
    return poly2d([1.0], r)


def iso_power(k: int, dim: int = 2, r: float = 1.0) -> GraphObstacle:
    return GraphObstacle("IsoPower", (int(k),), r, dim)


def axis_power(k: int, dim: int = 3, r: float = 1.0) -> GraphObstacle:
    return GraphObstacle("AxisPower", (int(k),), r, dim)


def exp_flat(dim: int = 2, r: float = 0.7) -> GraphObstacle:
    return GraphObstacle("ExpFlat", (), r, dim)


def quartic3d(variant: str, remainder: float = 0.0, r: float = 0.8) -> GraphObstacle:
    return GraphObstacle("Quartic3D", (variant, float(remainder)), r, 3)


def radial(h_coefficients: Sequence[float], lam, r: float = 1.0) -> GraphObstacle:
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    return GraphObstacle("Radial", (tuple(float(c) for c in h_coefficients),
                                    tuple(tuple(row) for row in lam)), r, lam.shape[0] + 1)


def custom(expression: str, dim: int, r: float = 1.0) -> GraphObstacle:
    return GraphObstacle("Custom", (expression,), r, dim)


# -- convexity validation -----------------------------------------------------

@dataclass
class ConvexityReport:
    passed: bool
    worst_gap: float
    worst_pair: tuple[list[float], list[float]]
    hessian_status: str  # "definite", "semidefinite" or "indefinite"
    max_hessian_eig: float
    samples: int
    grid_pairs: int
    seed: int

    @property
    def strictly_convex(self) -> bool:
        return self.passed

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "worst_gap": self.worst_gap,
            "worst_pair": self.worst_pair,
            "hessian_status": self.hessian_status,
            "max_hessian_eig": self.max_hessian_eig,
            "samples": self.samples,
            "grid_pairs": self.grid_pairs,
            "seed": self.seed,
        }


def _ball_samples(rng: np.random.Generator, count: int, m: int, radius: float) -> np.ndarray:
    v = rng.normal(size=(count, m))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    rad = radius * rng.uniform(size=count) ** (1.0 / m)
    return v * rad[:, None]


def validate_strict_convexity(ob: GraphObstacle, samples: int = 4000, seed: int = 0,
                              radius_fraction: float = 0.95, tol: float = 1e-13) -> ConvexityReport:
    """Check the supporting-hyperplane inequality on random and grid pairs.

    The gap ``<grad F(x), y - x> - (F(y) - F(x))`` must be positive for
    every pair with y != x.  Pairs are drawn uniformly from the ball of
    radius ``radius_fraction * r``; a deterministic grid adds local pairs at
    displacement r/20 in every coordinate direction.
    """
    if samples < 2:
        raise ValueError("samples must be at least 2")
    rng = np.random.default_rng(seed)
    m = ob.m
    rad = radius_fraction * ob.r
    x = _ball_samples(rng, samples, m, rad)
    y = _ball_samples(rng, samples, m, rad)

    per_axis = 9 if m <= 2 else 5
    axis = np.linspace(-rad, rad, per_axis)
    grid = np.array(list(product(axis, repeat=m)))
    grid = grid[np.linalg.norm(grid, axis=1) < rad]
    delta = ob.r / 20.0
    gx, gy = [], []
    for j in range(m):
        for sgn in (1.0, -1.0):
            e = np.zeros(m)
            e[j] = sgn * delta
            shifted = grid + e
            ok = np.linalg.norm(shifted, axis=1) < rad
            gx.append(grid[ok])
            gy.append(shifted[ok])
    gx = np.concatenate(gx) if gx else np.zeros((0, m))
    gy = np.concatenate(gy) if gy else np.zeros((0, m))
    X = np.concatenate([x, gx])
    Y = np.concatenate([y, gy])

    gap = np.sum(ob.grad(X) * (Y - X), axis=1) - (ob.F(Y) - ob.F(X))
    sep = np.linalg.norm(Y - X, axis=1)
    scale = np.maximum(1.0, np.abs(ob.F(Y)) + np.abs(ob.F(X)))
    # a pair violates strictness if it is separated but the gap is not positive
    bad = (gap <= tol * scale) & (sep > 1e-6)
    i = int(np.argmin(gap - np.where(sep > 1e-6, 0.0, np.inf)))
    passed = not bool(np.any(bad))

    # Hessian definiteness away from the origin
    hx = _ball_samples(rng, max(200, samples // 10), m, rad)
    hx = hx[np.linalg.norm(hx, axis=1) > 0.05 * ob.r]
    eig = np.linalg.eigvalsh(ob.hess(hx)).max(axis=1)
    top = float(eig.max())
    if top < -1e-12:
        status = "definite"
    elif top <= 1e-12:
        status = "semidefinite"
    else:
        status = "indefinite"
    return ConvexityReport(passed, float(gap[i]), (X[i].tolist(), Y[i].tolist()), status, top,
                           samples, int(len(gx)), seed)


# -- grazing set chart --------------------------------------------------------

@dataclass
class GrazingSetChart:
    """Defining function zeta of the grazing set {<grad F, theta> = 0}.

    Attributes:
        zeta: callable on arrays of boundary points.
        zeta_grad: gradient of zeta (finite differences where no closed form).
        line_normal: for the three-dimensional polynomial case, the normal
            (1, -c) (or (0, 1) for the x3 = 0 axis) of the zero line of the
            leading grazing form.  For Radial it is Lambda theta.
        line_direction: unit vector along the zero line (3D) or None.
        slope: x3/x2 along the zero line, None for the vertical line.
        regularity: "Smooth" or "C1Only".
        guard_constant: min of |G| on the unit circle (polynomial case).
    """

    obstacle: GraphObstacle
    theta: np.ndarray
    kind: str
    zeta: Callable[[np.ndarray], np.ndarray]
    zeta_grad: Callable[[np.ndarray], np.ndarray]
    regularity: str
    line_normal: np.ndarray | None = None
    line_direction: np.ndarray | None = None
    slope: float | None = None
    guard_constant: float | None = None
    order: int | None = None
    _G: Callable | None = field(default=None, repr=False)

    def grazing_function(self, xb) -> np.ndarray:
        """<grad F(xb), theta>; positive on the illuminated side."""
        return self.obstacle.grad(xb) @ self.theta

    def hp_zeta(self, xb=None) -> float:
        """H_p zeta at the base point (covector (0, theta, -1)): 2 <grad zeta, theta>."""
        x = np.zeros(self.obstacle.m) if xb is None else np.asarray(xb, float)
        return float(2.0 * self.zeta_grad(x) @ self.theta)

    def guard_violations(self, xb) -> np.ndarray:
        """Points where |G(x)| < C |x|^(2k-2) (polynomial case only)."""
        x = np.atleast_2d(np.asarray(xb, float))
        if self._G is None:
            return np.zeros(len(x), bool)
        rho = np.linalg.norm(x, axis=1)
        return np.abs(self._G(x)) < (1 - 1e-9) * self.guard_constant * rho ** (2 * self.order - 2)

    def grazing_samples(self, count: int = 64, radius_fraction: float = 0.9) -> np.ndarray:
        """Points of the grazing set inside B(0, radius_fraction * r)."""
        ob = self.obstacle
        R = radius_fraction * ob.r
        if ob.m == 1:
            return np.zeros((1, 1))
        if self.kind == "radial" or ob.m > 2:
            # hyperplane orthogonal to line_normal, sampled in a grid
            nrm = self.line_normal / np.linalg.norm(self.line_normal)
            basis = np.linalg.svd(nrm[None, :])[2][1:]
            k = max(2, int(round(count ** (1.0 / basis.shape[0]))))
            coords = np.array(list(product(np.linspace(-R, R, k), repeat=basis.shape[0])))
            pts = coords @ basis
            if self.kind == "radial":
                return pts[np.linalg.norm(pts, axis=1) <= R]
            return np.array([p for p in pts if np.linalg.norm(p) <= R])
        # 3D polynomial case: solve zeta = 0 across the line
        d = self.line_direction
        nrm = np.array([-d[1], d[0]])
        out = []
        for rho in np.linspace(-R, R, count):
            if abs(rho) < 1e-12:
                out.append(np.zeros(2))
                continue
            w = 0.5 * abs(rho)
            f = lambda sig: float(self.grazing_function((rho * d + sig * nrm)[None])[0])
            fa, fb = f(-w), f(w)
            if fa * fb > 0:
                continue
            sig = brentq(f, -w, w, xtol=1e-15)
            p = rho * d + sig * nrm
            if np.linalg.norm(p) <= R:
                out.append(p)
        return np.array(out)


def _fd_grad(fun, x, h=1e-6):
    x = np.atleast_2d(np.asarray(x, float))
    cols = []
    for j in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[j] = h
        cols.append((fun(x + e) - fun(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def _circle_roots(fun: Callable[[np.ndarray], np.ndarray], samples: int = 1440) -> list[float]:
    """Angles a in [0, pi) where fun(cos a, sin a) changes sign."""
    a = np.linspace(0.0, np.pi, samples + 1)
    pts = np.stack([np.cos(a), np.sin(a)], axis=1)
    v = fun(pts)
    scale = np.max(np.abs(v))
    if scale == 0:
        return []
    roots = []
    f = lambda t: float(fun(np.array([[np.cos(t), np.sin(t)]]))[0])
    for i in range(samples):
        if v[i] == 0.0:
            roots.append(a[i])
        elif v[i] * v[i + 1] < 0:
            roots.append(brentq(f, a[i], a[i + 1], xtol=1e-16, rtol=4 * np.finfo(float).eps))
    # merge the antipodal duplicate at a = pi
    out = []
    for t in roots:
        t = t % np.pi
        if all(min(abs(t - u), np.pi - abs(t - u)) > 1e-9 for u in out):
            out.append(t)
    return out


def build_grazing_chart(ob: GraphObstacle, theta) -> GrazingSetChart:
    """Construct zeta with {zeta = 0} = {<grad F, theta> = 0} near 0."""
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    if th.shape != (ob.m,):
        raise ValueError(f"theta must have {ob.m} components")
    th = th / np.linalg.norm(th)

    if ob.dim == 2:
        z = lambda x: np.asarray(x, float)[..., 0]
        zg = lambda x: np.ones_like(np.asarray(x, float))
        return GrazingSetChart(ob, th, "planar", z, zg, "Smooth", line_normal=np.ones(1))

    if ob.family in ("Radial", "IsoPower", "ExpFlat"):
        lam = ob._impl.lam
        z = lambda x: np.asarray(x, float) @ (lam @ th)
        zg = lambda x: np.broadcast_to(lam @ th, np.asarray(x, float).shape).copy()
        return GrazingSetChart(ob, th, "radial", z, zg, "Smooth", line_normal=lam @ th)

    if ob.family == "AxisPower":
        hits = np.flatnonzero(np.abs(np.abs(th) - 1.0) < 1e-14)
        if len(hits) == 1:
            j = int(hits[0])
            z = lambda x, j=j: np.asarray(x, float)[..., j]

            def zg(x, j=j):
                g = np.zeros_like(np.asarray(x, float))
                g[..., j] = 1.0
                return g

            nrm = np.zeros(ob.m)
            nrm[j] = 1.0
            return GrazingSetChart(ob, th, "axis", z, zg, "Smooth", line_normal=nrm)
        if ob.dim != 3:
            raise ChartAssumptionError("AxisPower charts need an axis direction unless n = 3")

    if ob.dim != 3 or not isinstance(ob._impl, _PolyImpl):
        raise ChartAssumptionError(
            f"no grazing chart construction for family {ob.family} in dimension {ob.dim}")
    return _polynomial_chart(ob, th)


def _polynomial_chart(ob: GraphObstacle, th: np.ndarray) -> GrazingSetChart:
    poly = ob._impl.poly
    deg = poly.min_degree
    if deg % 2 or deg < 2:
        raise ChartAssumptionError("leading form of the depth must have even degree")
    k = deg // 2
    lead = poly.homogeneous_part(deg)
    # g_{2k,theta} = <grad F_{2k}, theta> = -<grad D_{2k}, theta>
    g = lambda x: -(lead.gradient(np.asarray(x, float)) @ th)
    probe = np.stack([np.cos(np.linspace(0, np.pi, 64)), np.sin(np.linspace(0, np.pi, 64))], 1)
    if np.max(np.abs(g(probe))) < 1e-14:
        raise DegenerateLeadingForm("leading grazing form vanishes identically")
    # Assumption: Hessian of F_{2k} negative definite off the origin
    circ = np.stack([np.cos(np.linspace(0, 2 * np.pi, 361)), np.sin(np.linspace(0, 2 * np.pi, 361))], 1)
    if np.max(np.linalg.eigvalsh(-lead.hessian(circ))) >= 0:
        raise ChartAssumptionError("Hessian of the leading form is not negative definite off 0")
    roots = _circle_roots(g)
    if len(roots) != 1:
        raise MultipleZeroLines(f"leading grazing form has {len(roots)} zero lines")
    a = roots[0]
    d = np.array([np.cos(a), np.sin(a)])
    if d[0] < 0 or (d[0] == 0 and d[1] < 0):
        d = -d
    ell = np.array([-d[1], d[0]])
    if abs(ell[0]) > 1e-12:
        ell = ell / ell[0]          # (1, -c): line x2 - c x3 = 0
    else:
        ell = np.array([0.0, 1.0])  # the axis x3 = 0
    slope = None if abs(d[0]) < 1e-15 else float(d[1] / d[0])

    def G(x):
        x = np.atleast_2d(np.asarray(x, float))
        lin = x @ ell
        on_line = np.abs(lin) <= 1e-12 * np.maximum(np.linalg.norm(x, axis=1), 1e-300)
        safe = np.where(on_line, 1.0, lin)
        val = g(x) / safe
        if np.any(on_line):
            # derivative of g along ell on the line: grad g . ell = |ell|^2 G
            gradg = _fd_grad(g, x[on_line], h=1e-6 * max(1.0, float(np.max(np.abs(x)))))
            val[on_line] = gradg @ ell / (ell @ ell)
        return val

    Gc = G(circ)
    if np.min(Gc) * np.max(Gc) <= 0:
        raise MultipleZeroLines("cofactor G changes sign on the unit circle")
    C = float(np.min(np.abs(Gc)))

    def zeta(x):
        x = np.asarray(x, float)
        shp = x.shape[:-1]
        x2 = x.reshape(-1, 2)
        rho = np.linalg.norm(x2, axis=1)
        out = np.zeros(len(x2))
        nz = rho > 0
        if np.any(nz):
            gf = -(ob._impl.grad(x2[nz]) @ th)
            out[nz] = gf / G(x2[nz])
        return out.reshape(shp)

    def zeta_grad(x):
        x = np.asarray(x, float)
        shp = x.shape
        x2 = x.reshape(-1, 2)
        out = _fd_grad(zeta, x2, h=1e-7)
        at0 = np.linalg.norm(x2, axis=1) == 0
        out[at0] = ell
        return out.reshape(shp)

    return GrazingSetChart(ob, th, "polynomial", zeta, zeta_grad, "C1Only" if k > 1 else "Smooth",
                           line_normal=ell, line_direction=d, slope=slope, guard_constant=C,
                           order=k, _G=G)


def f4_slope_oracle() -> float:
    """Real root of c^3 - 2c^2 - 4 = 0 by bisection (slope of the F4 zero line)."""
    lo, hi = 2.0, 4.0
    f = lambda c: c ** 3 - 2 * c ** 2 - 4
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(lo) * f(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


__all__ = [
    "GraphObstacle", "GrazingSetChart", "ConvexityReport", "eval_obstacle",
    "validate_strict_convexity", "build_grazing_chart", "poly2d", "parabola", "iso_power",
    "axis_power", "exp_flat", "quartic3d", "radial", "custom", "f4_slope_oracle", "FAMILIES",
]
