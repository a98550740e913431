"""Wave symbol, Hamilton field, bicharacteristic integration and glancing orders.

Phase-space states are flat arrays ``[x (n), t, xi (n), tau]``.  The
integrator is generic over a :class:`Symbol`; only the constant-coefficient
wave symbol p = |xi|^2 - tau^2 is implemented.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import AmbiguousOrder, NotOnBoundary, StepFailure
from .obstacle import GraphObstacle


@dataclass(frozen=True)
class CotangentPoint:
    x: np.ndarray
    t: float
    xi: np.ndarray
    tau: float

    @property
    def n(self) -> int:
        return len(self.x)

    def as_state(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.x, float), [self.t], np.asarray(self.xi, float), [self.tau]])

    @classmethod
    def from_state(cls, y: np.ndarray) -> "CotangentPoint":
        n = (len(y) - 2) // 2
        return cls(np.array(y[:n]), float(y[n]), np.array(y[n + 1:2 * n + 1]), float(y[2 * n + 1]))


class Symbol:
    """Principal symbol p(x, t, xi, tau) acting on batches of states."""

    def value(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def field(self, y: np.ndarray) -> np.ndarray:
        """Hamilton field (p_xi, p_tau, -p_x, -p_t) for states of shape (..., 2n+2)."""
        raise NotImplementedError


class WaveSymbol(Symbol):
    """p = |xi|^2 - tau^2."""

    def value(self, y):
        y = np.asarray(y, float)
        n = (y.shape[-1] - 2) // 2
        xi = y[..., n + 1:2 * n + 1]
        tau = y[..., 2 * n + 1]
        return np.sum(xi * xi, axis=-1) - tau * tau

    def field(self, y):
        y = np.asarray(y, float)
        n = (y.shape[-1] - 2) // 2
        out = np.zeros_like(y)
        out[..., :n] = 2.0 * y[..., n + 1:2 * n + 1]
        out[..., n] = -2.0 * y[..., 2 * n + 1]
        return out


WAVE = WaveSymbol()


def wave_symbol(xi, tau) -> np.ndarray:
    xi = np.asarray(xi, float)
    return np.sum(xi * xi, axis=-1) - np.asarray(tau, float) ** 2


def minkowski(a, b) -> np.ndarray:
    """Bilinear form of p on spacetime covectors (xi, tau): <xi, xi'> - tau tau'."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return np.sum(a[..., :-1] * b[..., :-1], axis=-1) - a[..., -1] * b[..., -1]


def hamilton_field(pt: CotangentPoint, symbol: Symbol = WAVE) -> CotangentPoint:
    """Tangent vector (xdot, tdot, xidot, taudot) packed as a CotangentPoint."""
    return CotangentPoint.from_state(symbol.field(pt.as_state()))


# -- Dormand-Prince 5(4) ------------------------------------------------------

_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def _dopri_step(f, y, h):
    k = []
    for i in range(7):
        yi = y.copy()
        for j, a in enumerate(_A[i]):
            if a:
                yi = yi + h * a * k[j]
        k.append(f(yi))
    y5 = y + h * sum(b * kk for b, kk in zip(_B5, k) if b)
    y4 = y + h * sum(b * kk for b, kk in zip(_B4, k) if b)
    return y5, y5 - y4, k[0], k[6]


@dataclass
class Bicharacteristic:
    s: np.ndarray
    states: np.ndarray
    accepted: int
    rejected: int
    boundary_hits: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return (self.states.shape[1] - 2) // 2

    def point(self, i: int) -> CotangentPoint:
        return CotangentPoint.from_state(self.states[i])

    def end(self) -> CotangentPoint:
        return self.point(-1)

    def rows(self) -> list[list[float]]:
        return [[float(s)] + [float(v) for v in y] for s, y in zip(self.s, self.states)]


def _hermite(y0, f0, y1, f1, h, u):
    h00 = 2 * u ** 3 - 3 * u ** 2 + 1
    h10 = u ** 3 - 2 * u ** 2 + u
    h01 = -2 * u ** 3 + 3 * u ** 2
    h11 = u ** 3 - u ** 2
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


def boundary_function(ob: GraphObstacle, x: np.ndarray) -> np.ndarray:
    """beta = x1 - F(xbar)."""
    x = np.asarray(x, float)
    return x[..., 0] - ob.F(x[..., 1:])


def integrate_bichar(start: CotangentPoint, s_max: float, tol: float = 1e-12,
                     symbol: Symbol = WAVE, obstacle: GraphObstacle | None = None,
                     max_step: float | None = None, min_step: float = 1e-14) -> Bicharacteristic:
    """Adaptive Dormand-Prince integration of the Hamilton equations.

    Steps are capped at ``max_step`` (default s_max/64) so that sign changes
    of beta = x1 - F(xbar) are not skipped; each crossing is refined on the
    cubic Hermite interpolant of the step and stored in ``boundary_hits`` as
    ``(s, state)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    y = start.as_state()
    n = start.n
    f = symbol.field
    s = 0.0
    h = max_step or s_max / 64.0
    hmax = max_step or s_max / 64.0
    ss, ys = [0.0], [y.copy()]
    acc = rej = 0
    hits = []
    beta_prev = float(boundary_function(obstacle, y[:n])) if obstacle is not None else None
    while s < s_max - 1e-15 * max(1.0, s_max):
        h = min(h, s_max - s, hmax)
        if h < min_step:
            raise StepFailure(f"step size underflow at s = {s}")
        y_new, err_vec, f0, f1 = _dopri_step(f, y, h)
        scale = tol * (1.0 + np.maximum(np.abs(y), np.abs(y_new)))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        if err <= 1.0:
            acc += 1
            if obstacle is not None:
                beta_new = float(boundary_function(obstacle, y_new[:n]))
                if beta_prev * beta_new < 0 or beta_new == 0.0:
                    g = lambda u: float(boundary_function(obstacle, _hermite(y, f0, y_new, f1, h, u)[:n]))
                    u = 1.0 if beta_new == 0.0 else brentq(g, 0.0, 1.0, xtol=1e-15)
                    hits.append((s + u * h, _hermite(y, f0, y_new, f1, h, u)))
                beta_prev = beta_new
            s += h
            y = y_new
            ss.append(s)
            ys.append(y.copy())
            fac = 5.0 if err == 0 else min(5.0, 0.9 * err ** -0.2)
            h *= fac
        else:
            rej += 1
            h *= max(0.1, 0.9 * err ** -0.25)
    return Bicharacteristic(np.array(ss), np.array(ys), acc, rej, hits)


def integrate_batch(states: np.ndarray, s_end, tol: float = 1e-13, symbol: Symbol = WAVE,
                    steps_min: int = 4) -> np.ndarray:
    """Integrate many starts at once; returns the states at s = s_end.

    Each row is rescaled to unit parameter length so a single adaptive step
    sequence serves the whole batch.
    """
    y = np.array(states, float)
    L = np.broadcast_to(np.asarray(s_end, float), (len(y),))[:, None]
    f = lambda z: L * symbol.field(z)
    s, h = 0.0, 1.0 / steps_min
    while s < 1.0 - 1e-15:
        h = min(h, 1.0 - s)
        y_new, err_vec, _, _ = _dopri_step(f, y, h)
        scale = tol * (1.0 + np.maximum(np.abs(y), np.abs(y_new)))
        err = float(np.max(np.abs(err_vec) / scale))
        if err <= 1.0:
            s += h
            y = y_new
            h *= 5.0 if err == 0 else min(5.0, 0.9 * err ** -0.2)
            h = min(h, 1.0 / steps_min)
        else:
            h *= max(0.1, 0.9 * err ** -0.25)
            if h < 1e-14:
                raise StepFailure("step size underflow in batch integration")
    return y


# -- glancing orders ----------------------------------------------------------

@dataclass
class GlancingReport:
    cls: str
    order: int | None          # None means "infinite", i.e. no nonzero derivative up to cap
    type: str
    derivatives: list[float]   # H_p^j beta for j = 1..cap
    cap: int
    s_probe: float
    interior: bool

    @property
    def infinite(self) -> bool:
        return self.order is None

    @property
    def order_label(self) -> str:
        return f">={self.cap}" if self.order is None else str(self.order)

    def to_dict(self) -> dict:
        return {
            "class": self.cls,
            "order": self.order_label,
            "type": self.type,
            "derivatives": self.derivatives,
            "cap": self.cap,
            "s_probe": self.s_probe,
            "interior_on_probe": self.interior,
        }


def _taylor_fit(g, h: float, degree: int) -> np.ndarray:
    """Derivatives g^(j)(0), j = 0..degree, from a Chebyshev fit on [-h, h]."""
    K = 2 * degree + 2
    u = np.cos(np.pi * (np.arange(K) + 0.5) / K)
    vals = np.array([g(h * ui) for ui in u], dtype=float)
    cheb = np.polynomial.chebyshev.chebfit(u, vals, degree)
    power = np.polynomial.chebyshev.cheb2poly(cheb)
    j = np.arange(len(power))
    fact = np.array([math.factorial(int(k)) for k in j], dtype=float)
    return power * fact / h ** j


def taylor_derivatives(g, h: float, degree: int) -> np.ndarray:
    """Richardson-extrapolated derivatives at 0 from fits at h and h/2."""
    d1 = _taylor_fit(g, h, degree)
    d2 = _taylor_fit(g, h / 2, degree)
    j = np.arange(degree + 1)
    q = 2.0 ** (degree + 1 - j)
    return (q * d2 - d1) / (q - 1)


def glancing_order(ob: GraphObstacle, theta, x0=None, cap: int = 12, x1: float | None = None,
                   zero_tol: float = 1e-9, noise_tol: float = 1e-6, on_boundary_tol: float = 1e-10,
                   h: float | None = None) -> GlancingReport:
    """Order of contact of the incoming ray through (F(x0), x0) with the boundary.

    beta(gamma(s)) = D(x0 + 2 s theta) - D(x0) where D = 1 - F; its
    derivatives at s = 0 are the iterated Hamilton derivatives H_p^j beta.
    A derivative is zero when below ``zero_tol`` times the ladder
    L_j = M j! / R^j (M = max |beta(gamma)| on [-R, R], R the probe radius),
    significant above ``noise_tol`` L_j, ambiguous in between.
    """
    if cap < 2:
        raise ValueError("cap must be at least 2")
    th = np.atleast_1d(np.asarray(theta, float))
    th = th / np.linalg.norm(th)
    xb = np.zeros(ob.m) if x0 is None else np.atleast_1d(np.asarray(x0, float))
    if np.linalg.norm(xb) >= ob.r:
        raise ValueError("x0 must lie in B(0, r)")
    if x1 is not None and abs(x1 - float(ob.F(xb))) > on_boundary_tol:
        raise NotOnBoundary(f"|x1 - F(x0)| = {abs(x1 - float(ob.F(xb))):.3e}")

    room = ob.r - np.linalg.norm(xb)
    R = room / 4.0
    high = ob.family == "Custom"
    if high:
        d0 = ob.depth_highprec(xb)

        def g(s):
            return float(ob.depth_highprec(xb + 2 * s * th) - d0)
    else:
        d0 = float(ob.depth(xb))

        def g(s):
            return float(ob.depth(xb + 2 * s * th)) - d0

    probe = np.linspace(-R, R, 401)
    gvals = np.array([g(s) for s in probe])
    M = float(np.max(np.abs(gvals)))
    # interior: the curve stays in the closed exterior on the probe and
    # leaves the boundary at both ends of the probe interval
    interior = bool(np.all(gvals >= 0) and gvals[0] > 0 and gvals[-1] > 0)
    exterior_neg = bool(np.all(gvals <= 0) and gvals[0] < 0 and gvals[-1] < 0)
    degree = cap + 4
    hh = h if h is not None else R / 8.0
    derivs = taylor_derivatives(g, hh, degree)[1:cap + 1]
    order = None
    kind = "NotGlancing"
    for j in range(1, cap + 1):
        ladder = M * math.factorial(j) / R ** j if M > 0 else 0.0
        dj = derivs[j - 1]
        if ladder == 0.0 or abs(dj) <= zero_tol * ladder:
            continue
        if abs(dj) < noise_tol * ladder:
            raise AmbiguousOrder(f"derivative of order {j} is {dj:.3e}, between zero and noise thresholds")
        order = j
        break
    if order is None:
        cls = "Glancing"
        kind = "Diffractive" if interior else ("Gliding" if exterior_neg else "Inflection")
    elif order == 1:
        cls = "Hyperbolic"
        kind = "NotGlancing"
    else:
        cls = "Glancing"
        if order % 2:
            kind = "Inflection"
        else:
            kind = "Diffractive" if derivs[order - 1] > 0 else "Gliding"
    return GlancingReport(cls, order, kind, [float(v) for v in derivs], cap, float(R), interior)


def classify_boundary_point(ob: GraphObstacle, theta, x0, covector=None, tol: float = 1e-12) -> str:
    """Count real lambda with p(nu + lambda d beta) = 0 for the tangential class of nu.

    ``covector`` is (xi, tau) over spacetime; default is the plane-wave
    covector (0, theta, -1).  Two roots: Hyperbolic, one: Glancing, none: Elliptic.
    """
    xb = np.atleast_1d(np.asarray(x0, float))
    if covector is None:
        th = np.atleast_1d(np.asarray(theta, float))
        xi = np.concatenate([[0.0], th / np.linalg.norm(th)])
        tau = -1.0
    else:
        cv = np.asarray(covector, float)
        xi, tau = cv[:-1], cv[-1]
    nrm = np.concatenate([[1.0], -np.atleast_1d(ob.grad(xb))])
    a = nrm @ nrm
    b = xi @ nrm
    c = xi @ xi - tau * tau
    disc = b * b - a * c
    scale = max(b * b, abs(a * c), 1e-300)
    if disc > tol * scale:
        return "Hyperbolic"
    if disc < -tol * scale:
        return "Elliptic"
    return "Glancing"
