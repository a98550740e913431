"""Profiles in the fast variable theta, transport along rays, source splitting.

A profile W(., theta) is stored through its positive Fourier modes
w_1..w_N: W = sum_n 2 Re(w_n e^{i n theta}).  Mode 0 is absent (mean zero)
and mode -n is the conjugate of mode n, so both invariants hold by
construction.  Transport along a ray in the bicharacteristic parameter s is

    dW/ds + c(s) W = f(s),    c = Box phi,

solved with an integrating factor.  Along reflected rays c = (1/2) d/ds log j,
so sqrt(j) W is conserved when f = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_simpson, cumulative_trapezoid

from .errors import CoefficientSingular, LipschitzViolation, NonZeroMean, ResonantDivision
from .hamiltonian import wave_symbol


# -- Fourier representation ---------------------------------------------------

def theta_nodes(q: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(q) / q


def modes_from_samples(values: np.ndarray, n_modes: int, axis: int = -1, mean_tol: float | None = None):
    """Positive modes 1..N of real samples on the uniform theta grid.

    Returns (mean, modes) with modes moved to the last axis.  With
    ``mean_tol`` set, a mean larger than the tolerance raises NonZeroMean.
    """
    v = np.moveaxis(np.asarray(values, float), axis, -1)
    q = v.shape[-1]
    if n_modes > (q - 1) // 2:
        raise ValueError("need at least 2N + 1 theta samples")
    c = np.fft.fft(v, axis=-1) / q
    mean = c[..., 0].real
    if mean_tol is not None and np.max(np.abs(mean), initial=0.0) > mean_tol:
        raise NonZeroMean(f"theta-mean {np.max(np.abs(mean)):.3g} exceeds {mean_tol:.3g}")
    return mean, c[..., 1:n_modes + 1]


def samples_from_modes(modes: np.ndarray, theta) -> np.ndarray:
    """Evaluate sum_n 2 Re(w_n e^{i n theta}); theta broadcasts against modes[..., 0]."""
    modes = np.asarray(modes)
    n = np.arange(1, modes.shape[-1] + 1)
    th = np.asarray(theta, float)
    phase = np.exp(1j * th[..., None] * n)
    return 2.0 * np.real(np.sum(modes * phase, axis=-1))


def primitive_modes(modes: np.ndarray) -> np.ndarray:
    n = np.arange(1, modes.shape[-1] + 1)
    return modes / (1j * n)


@dataclass
class ProfileGrid:
    """Profile modes on a ray grid.

    Attributes:
        kind: "Incoming" or "Reflected".
        axes: names and 1D coordinate arrays of the ray grid.
        values: complex array of shape (*grid shape, N) holding modes 1..N.
        z1: generator coordinate of each ray (signed offset from the
            shadow boundary), broadcastable to the grid shape.
        support: boolean mask, False where the profile is zero by definition.
    """

    kind: str
    axes: dict
    values: np.ndarray
    z1: np.ndarray | None = None
    support: np.ndarray | None = None

    @property
    def n_modes(self) -> int:
        return self.values.shape[-1]

    def full_modes(self) -> np.ndarray:
        """Modes -N..N along the last axis (mode 0 is zero)."""
        v = self.values
        zero = np.zeros(v.shape[:-1] + (1,), complex)
        return np.concatenate([np.conj(v[..., ::-1]), zero, v], axis=-1)

    def at_theta(self, theta) -> np.ndarray:
        return samples_from_modes(self.values, theta)

    def replace(self, values: np.ndarray) -> "ProfileGrid":
        return ProfileGrid(self.kind, self.axes, values, self.z1, self.support)

    def l2_norm(self) -> float:
        """Discrete L^2 norm over the grid and theta (with (2 pi)^-1 d theta)."""
        w = 1.0
        for ax in self.axes.values():
            w *= (ax[1] - ax[0]) if len(ax) > 1 else 1.0
        return float(np.sqrt(2.0 * np.sum(np.abs(self.values) ** 2) * w))


def theta_primitive(W: ProfileGrid | np.ndarray, mean_tol: float = 1e-12):
    """Unique mean-zero theta-primitive.  Arrays are read as modes -N..N."""
    if isinstance(W, ProfileGrid):
        return W.replace(primitive_modes(W.values))
    full = np.asarray(W, complex)
    nn = (full.shape[-1] - 1) // 2
    if np.max(np.abs(full[..., nn]), initial=0.0) > mean_tol:
        raise NonZeroMean("mode 0 must vanish before taking the primitive")
    n = np.arange(-nn, nn + 1)
    out = np.zeros_like(full)
    nz = n != 0
    out[..., nz] = full[..., nz] / (1j * n[nz])
    return out


# -- transport ----------------------------------------------------------------

def _cumint(y: np.ndarray, s: np.ndarray, method: str) -> np.ndarray:
    if method == "trapezoid":
        return cumulative_trapezoid(y, s, axis=-1, initial=0.0)
    if method == "simpson":
        return cumulative_simpson(y, x=s, axis=-1, initial=0.0)
    raise ValueError(f"unknown quadrature {method!r}")


def transport_solve(s: np.ndarray, coefficient: np.ndarray | float, w0: np.ndarray,
                    source: np.ndarray | None = None, method: str = "trapezoid") -> np.ndarray:
    """Solve dW/ds + c W = f on each ray with W(s[0]) = w0.

    Args:
        s: (K,) increasing ray parameters.
        coefficient: c sampled as (..., K) (or a constant).
        w0: initial modes (..., N) (or (...,) for a scalar profile); w0 is read
            as modal when w0.ndim >= coefficient.ndim.
        source: f as (..., K, N) (matching w0 with a K axis inserted).
        method: "trapezoid" (second order) or "simpson".

    Returns:
        W as (..., K, N) (or (..., K)).
    """
    s = np.asarray(s, float)
    c = np.asarray(coefficient, float)
    if c.ndim == 0:
        c = np.full(s.shape, float(c))
    I = _cumint(c, s, method)
    if not np.all(np.isfinite(I)):
        raise CoefficientSingular("integrating factor diverges on the ray")
    w0 = np.asarray(w0)
    has_modes = w0.ndim >= c.ndim
    E = np.exp(-I)
    if has_modes:
        E, eI = E[..., None], np.exp(I)[..., None]
        acc = np.broadcast_to(w0[..., None, :], np.broadcast_shapes(w0[..., None, :].shape, E.shape)).astype(complex)
    else:
        eI = np.exp(I)
        acc = np.broadcast_to(w0[..., None], np.broadcast_shapes(w0[..., None].shape, E.shape)).astype(w0.dtype if w0.dtype.kind == "c" else float)
    if source is not None:
        g = np.asarray(source) * eI
        ax = -2 if has_modes else -1
        g = np.moveaxis(g, ax, -1)
        if np.iscomplexobj(g):
            cum = _cumint(g.real, s, method) + 1j * _cumint(g.imag, s, method)
        else:
            cum = _cumint(g, s, method)
        acc = acc + np.moveaxis(cum, -1, ax)
    out = E * acc
    if not np.all(np.isfinite(out)):
        raise CoefficientSingular("transport produced non-finite values")
    return out


def transport_coefficient(phase, m, h: float = 1e-4):
    """Box phi at spacetime points m.

    For a plane phase the value is 0.  For a reflected phase field returns
    (fd_value, liouville_value): a central-difference divergence of the
    spatial covector and (1/2) d/ds log j from the chart.
    """
    from .phase import PlanePhase  # local import keeps module loading light

    if isinstance(phase, PlanePhase):
        return phase.box(m)
    return phase.box_fd(m, h=h), phase.box(m)


# -- source specification and splitting -------------------------------------

@dataclass(frozen=True)
class SourceSpec:
    """Semilinear source f(m, u, q) with q the spacetime gradient (x1, x2, t).

    kinds: zero, sin_u (kappa sin u), sin_q2 (kappa sin q_x2),
    sin_sum (kappa sin(u + q_x2)), linear (kappa (u + q_x2)).
    """

    kind: str = "zero"
    kappa: float = 0.0

    KINDS = ("zero", "sin_u", "sin_q2", "sin_sum", "linear")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}")

    @property
    def lipschitz(self) -> float:
        """Constant K with |f(m,u,q) - f(m,u',q')| <= K (|u-u'| + |q-q'|)."""
        return 0.0 if self.kind == "zero" else abs(self.kappa)

    @property
    def depends_on_q(self) -> bool:
        return self.kind in ("sin_q2", "sin_sum", "linear")

    def __call__(self, u, q) -> np.ndarray:
        u = np.asarray(u, float)
        k = self.kappa
        if self.kind == "zero":
            return np.zeros(np.broadcast_shapes(u.shape, np.shape(q)[:-1]))
        if self.kind == "sin_u":
            return k * np.sin(u) + 0.0 * np.asarray(q)[..., 0]
        q2 = np.asarray(q)[..., 1]
        if self.kind == "sin_q2":
            return k * np.sin(q2) + 0.0 * u
        if self.kind == "sin_sum":
            return k * np.sin(u + q2)
        return k * (u + q2)

    def check_lipschitz(self, samples: int = 2000, seed: int = 0, scale: float = 3.0) -> float:
        """Largest sampled difference quotient; raises LipschitzViolation above K."""
        rng = np.random.default_rng(seed)
        u = rng.uniform(-scale, scale, samples)
        q = rng.uniform(-scale, scale, (samples, 3))
        du = rng.normal(size=samples) * 1e-3
        dq = rng.normal(size=(samples, 3)) * 1e-3
        num = np.abs(self(u + du, q + dq) - self(u, q))
        den = np.abs(du) + np.sum(np.abs(dq), axis=1)
        worst = float(np.max(num / den))
        if worst > self.lipschitz * (1 + 1e-6) + 1e-15:
            raise LipschitzViolation(f"difference quotient {worst:.4g} exceeds K = {self.lipschitz:.4g}")
        return worst


@dataclass
class SourceDecomposition:
    """Split of a composed source over the (theta_r, theta_i) torus.

    Attributes:
        mean: (P,) double mean.
        char_r: (P, N) theta_r-modes of the theta_i-mean minus the mean.
        char_i: (P, N) theta_i-modes of the theta_r-mean minus the mean.
        nc: (P, 2M+1, 2M+1) coefficients f_alpha, alpha = (a_r, a_i) in
            [-M, M]^2, zero unless both indices are nonzero.
        coefficients: full (P, Q, Q) FFT table (kept for reconstruction).
        parseval_error: |sum |c|^2 - mean(f^2)| relative to mean(f^2).
    """

    mean: np.ndarray
    char_r: np.ndarray
    char_i: np.ndarray
    nc: np.ndarray
    coefficients: np.ndarray
    parseval_error: float
    M: int

    def alpha_index(self):
        a = np.arange(-self.M, self.M + 1)
        return np.meshgrid(a, a, indexing="ij")

    def nc_tail(self) -> np.ndarray:
        """Pointwise L^2 norm of the noncharacteristic coefficients beyond |alpha| <= M."""
        c = self.coefficients
        q = c.shape[-1]
        freq = np.fft.fftfreq(q, 1.0 / q).astype(int)
        ar, ai = np.meshgrid(freq, freq, indexing="ij")
        beyond = (ar != 0) & (ai != 0) & (np.maximum(np.abs(ar), np.abs(ai)) > self.M)
        return np.sqrt(np.sum(np.abs(c[:, beyond]) ** 2, axis=-1))

    def nc_norm(self) -> np.ndarray:
        """Pointwise L^2(T^2) norm of the full noncharacteristic part."""
        c = self.coefficients
        q = c.shape[-1]
        freq = np.fft.fftfreq(q, 1.0 / q).astype(int)
        ar, ai = np.meshgrid(freq, freq, indexing="ij")
        return np.sqrt(np.sum(np.abs(c[:, (ar != 0) & (ai != 0)]) ** 2, axis=-1))

    def reconstruct(self, theta_r, theta_i) -> np.ndarray:
        """Sum of the four parts at given angles (one pair per point)."""
        fr = samples_from_modes(self.char_r, theta_r)
        fi = samples_from_modes(self.char_i, theta_i)
        ar, ai = self.alpha_index()
        ph = np.exp(1j * (ar * np.asarray(theta_r)[:, None, None] + ai * np.asarray(theta_i)[:, None, None]))
        return self.mean + fr + fi + np.real(np.sum(self.nc * ph, axis=(1, 2)))


def decompose_samples(values: np.ndarray, n_modes: int, M: int) -> SourceDecomposition:
    """Decompose samples (P, Q, Q) on the theta_r x theta_i grid."""
    v = np.asarray(values, float)
    q = v.shape[-1]
    c = np.fft.fft2(v, axes=(-2, -1)) / q ** 2
    mean = c[:, 0, 0].real
    char_r = c[:, 1:n_modes + 1, 0]
    char_i = c[:, 0, 1:n_modes + 1]
    a = np.arange(-M, M + 1)
    nc = c[:, a[:, None] % q, a[None, :] % q].copy()
    nc[:, M, :] = 0.0
    nc[:, :, M] = 0.0
    energy = np.mean(v ** 2, axis=(-2, -1))
    pars = np.sum(np.abs(c) ** 2, axis=(-2, -1))
    err = float(np.max(np.abs(pars - energy) / np.maximum(energy, 1e-300), initial=0.0))
    return SourceDecomposition(mean, char_r, char_i, nc, c, err, M)


def decompose_source(f: SourceSpec | Callable, u, grad_u, wr_modes, wi_modes, grad_r, grad_i,
                     n_modes: int = 16, M: int = 4, q: int = 32, check_lipschitz: bool = False,
                     chunk: int = 4096) -> SourceDecomposition:
    """Compose f(m, u, grad u + W_r(theta_r) dphi_r + W_i(theta_i) dphi_i) and split it.

    Shapes: u (P,), grad_u (P, 3), wr/wi modes (P, N'), grad_r/grad_i (P, 3).
    ``f`` may also be a callable g(theta_r, theta_i) -> (P, Q, Q) samples.
    """
    th = theta_nodes(q)
    if not isinstance(f, SourceSpec) and callable(f):
        return decompose_samples(f(th[:, None], th[None, :]), n_modes, M)
    if check_lipschitz:
        f.check_lipschitz()
    u = np.asarray(u, float)
    P = len(u)
    parts = []
    for lo in range(0, P, chunk):
        sl = slice(lo, min(P, lo + chunk))
        wr = samples_from_modes(np.asarray(wr_modes)[sl][:, None, :], th[None, :])   # (p, Q)
        wi = samples_from_modes(np.asarray(wi_modes)[sl][:, None, :], th[None, :])
        qv = (np.asarray(grad_u)[sl][:, None, None, :]
              + wr[:, :, None, None] * np.asarray(grad_r)[sl][:, None, None, :]
              + wi[:, None, :, None] * np.asarray(grad_i)[sl][:, None, None, :])
        vals = f(u[sl][:, None, None], qv)
        parts.append(decompose_samples(vals, n_modes, M))
    if not parts:
        z = np.zeros((0, n_modes), complex)
        return SourceDecomposition(np.zeros(0), z, z, np.zeros((0, 2 * M + 1, 2 * M + 1), complex),
                                   np.zeros((0, q, q), complex), 0.0, M)
    return SourceDecomposition(
        np.concatenate([p.mean for p in parts]), np.concatenate([p.char_r for p in parts]),
        np.concatenate([p.char_i for p in parts]), np.concatenate([p.nc for p in parts]),
        np.concatenate([p.coefficients for p in parts]), max(p.parseval_error for p in parts), M)


# -- corrector ------------------------------------------------------------------

@dataclass
class CorrectorTable:
    """U_alpha = -f_alpha / p(alpha_r dphi_r + alpha_i dphi_i) for 0 < |alpha| <= M."""

    U: np.ndarray            # (P, 2M+1, 2M+1)
    M: int
    min_symbol: float
    tail: np.ndarray         # (P,) discarded noncharacteristic L^2 tail

    def evaluate(self, phi_r_over_eps, phi_i_over_eps) -> np.ndarray:
        a = np.arange(-self.M, self.M + 1)
        ar, ai = np.meshgrid(a, a, indexing="ij")
        ph = np.exp(1j * (ar * np.asarray(phi_r_over_eps)[..., None, None]
                          + ai * np.asarray(phi_i_over_eps)[..., None, None]))
        return np.real(np.sum(self.U * ph, axis=(-2, -1)))


def corrector_coefficients(decomp: SourceDecomposition, grad_i: np.ndarray, grad_r: np.ndarray,
                           guard: float = 1e-8, coeff_tol: float = 1e-14) -> CorrectorTable:
    """Solve p(alpha dphi) U_alpha = -f_alpha mode by mode."""
    M = decomp.M
    a = np.arange(-M, M + 1)
    ar, ai = np.meshgrid(a, a, indexing="ij")
    cov = ar[None, :, :, None] * np.asarray(grad_r)[:, None, None, :] \
        + ai[None, :, :, None] * np.asarray(grad_i)[:, None, None, :]
    p = wave_symbol(cov[..., :-1], cov[..., -1])
    active = (ar != 0) & (ai != 0)
    act = np.broadcast_to(active, p.shape) & (np.abs(decomp.nc) > coeff_tol)
    pmin = float(np.min(np.abs(p[act]))) if np.any(act) else np.inf
    if pmin < guard:
        raise ResonantDivision(f"|p(alpha dphi)| = {pmin:.3g} below guard {guard:.3g}")
    U = np.zeros_like(decomp.nc)
    U[act] = -decomp.nc[act] / p[act]
    return CorrectorTable(U, M, pmin, decomp.nc_tail())


def choose_M(decomp_fn: Callable[[int], SourceDecomposition], rho1: float = 1e-3, M_max: int = 16) -> int:
    """Smallest M whose discarded noncharacteristic tail is below rho1 everywhere."""
    for M in range(1, M_max + 1):
        if np.max(decomp_fn(M).nc_tail(), initial=0.0) < rho1:
            return M
    return M_max


# -- truncation along the flow --------------------------------------------------

def _psi(u):
    u = np.asarray(u, float)
    out = np.zeros_like(u)
    pos = u > 0
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def smooth_step(u) -> np.ndarray:
    """C-infinity step: 0 for u <= 0, 1 for u >= 1."""
    a = _psi(u)
    b = _psi(1.0 - np.asarray(u, float))
    return a / (a + b)


def chi(z) -> np.ndarray:
    """Cutoff equal to 1 on (-inf, -1] and 0 on [-1/2, inf)."""
    return smooth_step(-2.0 * np.asarray(z, float) - 1.0)


def chi_reflected(z1, mu: float) -> np.ndarray:
    return chi(np.asarray(z1, float) / mu)


def chi_incoming(z1, mu: float) -> np.ndarray:
    """Two-sided version: vanishes within mu/2 of the shadow boundary on both sides."""
    return chi(-np.abs(np.asarray(z1, float)) / mu)


def truncate_along_flow(W: ProfileGrid, mu: float) -> ProfileGrid:
    """Multiply by the flow-invariant cutoff of the ray generator coordinate z1."""
    if W.z1 is None:
        raise ValueError("profile grid carries no generator coordinate z1")
    c = chi_reflected(W.z1, mu) if W.kind == "Reflected" else chi_incoming(W.z1, mu)
    return W.replace(W.values * np.asarray(c)[..., None])
