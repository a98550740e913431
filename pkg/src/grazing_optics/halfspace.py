"""Leapfrog solver for the wave equation on a half-space x >= 0.

The solver works in flattened coordinates x = x1 - F(x2), y = x2, which map
the exterior {x1 > F(x2)} of a two-dimensional graph obstacle onto the
half-space x >= 0 exactly.  With F = None the domain is the flat half-space.
In flattened coordinates the Laplacian becomes

    L v = (1 + F'^2) v_xx - 2 F' v_xy + v_yy - F'' v_x,

and the scheme is u^{n+1} = 2 u^n - u^{n-1} + dt^2 (L u^n - f^n) for
Box u = Delta u - u_tt = f, with u = 0 on x = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import CFLViolation, ResourceBudget
from .obstacle import GraphObstacle


@dataclass
class HalfSpaceGrid:
    """Tensor grid in flattened coordinates plus the time axis.

    Attributes:
        x: (nx,) with x[0] = 0 (Dirichlet boundary).
        y: (ny,) tangential coordinate.
        t: (nt,) uniform time levels.
        periodic_y: periodic instead of Dirichlet in y.
        obstacle: graph obstacle whose exterior is flattened (None = flat).
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    periodic_y: bool = False
    obstacle: GraphObstacle | None = None
    fp: np.ndarray = field(init=False, repr=False)
    fpp: np.ndarray = field(init=False, repr=False)
    Fy: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.obstacle is None:
            self.Fy = np.zeros_like(self.y)
            self.fp = np.zeros_like(self.y)
            self.fpp = np.zeros_like(self.y)
        else:
            yy = self.y[:, None]
            self.Fy = self.obstacle.F(yy)
            self.fp = self.obstacle.grad(yy)[:, 0]
            self.fpp = self.obstacle.hess(yy)[:, 0, 0]

    @property
    def hx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def hy(self) -> float:
        return float(self.y[1] - self.y[0])

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.t), len(self.x), len(self.y)

    def stable_dt(self, cfl: float = 0.9) -> float:
        a = 1.0 + np.max(self.fp ** 2)
        b = np.max(np.abs(self.fp))
        bound = a / self.hx ** 2 + 1.0 / self.hy ** 2 + 2.0 * b / (self.hx * self.hy)
        return cfl / np.sqrt(bound)

    def physical(self, it: int | None = None):
        """Physical (x1, x2) node arrays of shape (nx, ny)."""
        X1 = self.x[:, None] + self.Fy[None, :]
        X2 = np.broadcast_to(self.y[None, :], X1.shape)
        return X1, X2

    def to_flat(self, x1, x2):
        if self.obstacle is None:
            return np.asarray(x1, float), np.asarray(x2, float)
        x2 = np.asarray(x2, float)
        return np.asarray(x1, float) - self.obstacle.F(x2[..., None]), x2


def make_grid(x_max: float, y_range: tuple[float, float], t_range: tuple[float, float], h: float,
              obstacle: GraphObstacle | None = None, cfl: float = 0.9, periodic_y: bool = False,
              max_nodes: float = 5e8) -> HalfSpaceGrid:
    """Grid with spacing about h in x and y and the largest stable uniform dt."""
    nx = int(round(x_max / h)) + 1
    ny = int(round((y_range[1] - y_range[0]) / h)) + 1
    if periodic_y:
        y = np.linspace(y_range[0], y_range[1], ny, endpoint=False)
    else:
        y = np.linspace(y_range[0], y_range[1], ny)
    x = np.linspace(0.0, x_max, nx)
    probe = HalfSpaceGrid(x, y, np.array([0.0, 1.0]), periodic_y, obstacle)
    dt_max = probe.stable_dt(cfl)
    nt = int(np.ceil((t_range[1] - t_range[0]) / dt_max)) + 1
    if float(nx) * ny * nt > max_nodes:
        raise ResourceBudget(f"grid of {nx}x{ny}x{nt} nodes exceeds the budget {max_nodes:.3g}")
    t = np.linspace(t_range[0], t_range[1], nt)
    return HalfSpaceGrid(x, y, t, periodic_y, obstacle)


def apply_laplacian(grid: HalfSpaceGrid, v: np.ndarray) -> np.ndarray:
    """Flattened Laplacian at interior nodes; boundary rows of the result are 0."""
    hx, hy = grid.hx, grid.hy
    out = np.zeros_like(v)
    a = 1.0 + grid.fp ** 2
    b = -grid.fp
    d = -grid.fpp
    if grid.periodic_y:
        vp = np.concatenate([v[:, -1:], v, v[:, :1]], axis=1)
        cols = slice(0, v.shape[1])
        a_, b_, d_ = a, b, d
    else:
        vp = v
        cols = slice(1, v.shape[1] - 1)
        a_, b_, d_ = a[1:-1], b[1:-1], d[1:-1]
    c = vp[1:-1, 1:-1]
    vxx = (vp[2:, 1:-1] - 2 * c + vp[:-2, 1:-1]) / hx ** 2
    vyy = (vp[1:-1, 2:] - 2 * c + vp[1:-1, :-2]) / hy ** 2
    vxy = (vp[2:, 2:] - vp[2:, :-2] - vp[:-2, 2:] + vp[:-2, :-2]) / (4 * hx * hy)
    vx = (vp[2:, 1:-1] - vp[:-2, 1:-1]) / (2 * hx)
    out[1:-1, cols] = a_ * vxx + 2 * b_ * vxy + vyy + d_ * vx
    return out


@dataclass
class MeanField:
    """Solution samples u on the grid (all stored levels)."""

    grid: HalfSpaceGrid
    u: np.ndarray           # (nt_stored, nx, ny)
    t: np.ndarray           # stored times
    _interp: dict = field(default_factory=dict, repr=False)

    def physical_gradient(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(u_x1, u_x2, u_t) on the stored levels by second-order differences."""
        g = self.grid
        vx = np.gradient(self.u, g.x, axis=1)
        if g.periodic_y:
            vy = (np.roll(self.u, -1, axis=2) - np.roll(self.u, 1, axis=2)) / (2 * g.hy)
        else:
            vy = np.gradient(self.u, g.y, axis=2)
        ut = np.gradient(self.u, self.t, axis=0) if len(self.t) > 1 else np.zeros_like(self.u)
        return vx, vy - g.fp[None, None, :] * vx, ut

    def h1_norm(self, t_window: tuple[float, float] | None = None, mask: np.ndarray | None = None) -> float:
        """Spacetime H^1 norm over stored levels (flattening has unit Jacobian)."""
        g = self.grid
        ux1, ux2, ut = self.physical_gradient()
        dens = self.u ** 2 + ux1 ** 2 + ux2 ** 2 + ut ** 2
        sel = np.ones(len(self.t), bool)
        if t_window is not None:
            sel = (self.t >= t_window[0] - 1e-12) & (self.t <= t_window[1] + 1e-12)
        if mask is not None:
            dens = dens * mask
        dt = self.t[1] - self.t[0] if len(self.t) > 1 else 1.0
        return float(np.sqrt(np.sum(dens[sel]) * g.hx * g.hy * dt))

    def l2_norm(self) -> float:
        g = self.grid
        dt = self.t[1] - self.t[0] if len(self.t) > 1 else 1.0
        return float(np.sqrt(np.sum(self.u ** 2) * g.hx * g.hy * dt))

    def interpolator(self, which: str = "u") -> RegularGridInterpolator:
        if which not in self._interp:
            if which == "u":
                data = self.u
            else:
                ux1, ux2, ut = self.physical_gradient()
                data = {"ux1": ux1, "ux2": ux2, "ut": ut}[which]
            self._interp[which] = RegularGridInterpolator(
                (self.t, self.grid.x, self.grid.y), data, bounds_error=False, fill_value=0.0)
        return self._interp[which]

    def sample(self, x1, x2, t, which: str = "u") -> np.ndarray:
        """Interpolated values at physical points; zero outside the grid."""
        x, y = self.grid.to_flat(x1, x2)
        pts = np.stack(np.broadcast_arrays(np.asarray(t, float), x, y), axis=-1)
        return self.interpolator(which)(pts)


def halfspace_wave_solve(grid: HalfSpaceGrid, source: Callable | np.ndarray | None = None,
                         u0: np.ndarray | None = None, v0: np.ndarray | None = None,
                         u1: np.ndarray | None = None, store_every: int = 1,
                         dt_check: bool = True, cfl: float = 1.0, store_from: float | None = None) -> MeanField:
    """Solve Box u = f on the grid with u = 0 on the boundary.

    Args:
        grid: the space-time grid.
        source: None, an array (nt, nx, ny), or a callable f(it, t) -> (nx, ny).
        u0: u at t[0] (zero if omitted).
        v0: u_t at t[0]; used for a Taylor start when ``u1`` is not given.
        u1: u at t[1] (overrides the Taylor start).
        store_every: keep every k-th level (the last level is always kept).
        store_from: keep only levels with t >= store_from (memory saver).
    """
    nt, nx, ny = grid.shape
    dt = grid.dt
    if dt_check and dt > grid.stable_dt(cfl) * (1 + 1e-12):
        raise CFLViolation(f"dt = {dt:.4g} exceeds the stable bound {grid.stable_dt(cfl):.4g}")

    def f_at(it):
        if source is None:
            return 0.0
        if callable(source):
            return source(it, grid.t[it])
        return source[it]

    def bc(v):
        v[0, :] = 0.0
        v[-1, :] = 0.0
        if not grid.periodic_y:
            v[:, 0] = 0.0
            v[:, -1] = 0.0
        return v

    prev = bc(np.zeros((nx, ny)) if u0 is None else np.array(u0, float))
    if u1 is not None:
        cur = bc(np.array(u1, float))
    else:
        vel = np.zeros((nx, ny)) if v0 is None else np.asarray(v0, float)
        cur = bc(prev + dt * vel + 0.5 * dt ** 2 * (apply_laplacian(grid, prev) - f_at(0)))
    lo = -np.inf if store_from is None else store_from - 1e-12

    def keep(k):
        return grid.t[k] >= lo and (k % store_every == 0 or k == nt - 1)

    stored, times = [], []
    for k, v in ((0, prev), (1, cur)):
        if keep(k):
            stored.append(v.copy())
            times.append(grid.t[k])
    for it in range(1, nt - 1):
        nxt = 2 * cur - prev + dt ** 2 * (apply_laplacian(grid, cur) - f_at(it))
        prev, cur = cur, bc(nxt)
        if keep(it + 1):
            stored.append(cur.copy())
            times.append(grid.t[it + 1])
    return MeanField(grid, np.array(stored), np.array(times))


def kreiss_ratio(field_u: MeanField, source_l2: float, data_h1: float) -> float:
    """||u||_{H^1(Omega_T)} / (||f||_{L^2} + ||u^1||_{H^1})."""
    den = source_l2 + data_h1
    return field_u.h1_norm() / den if den > 0 else 0.0


def kreiss_study(T_values, source_fn: Callable, h: float = 0.02, x_max: float = 1.0,
                 y_range=(-0.5, 0.5)) -> list[dict]:
    """Kreiss ratio for Box u = f on [-T, T] with zero data, for each T."""
    out = []
    for T in T_values:
        grid = make_grid(x_max, y_range, (-T, T), h)
        X1, X2 = grid.physical()
        farr = np.array([source_fn(X1, X2, t) for t in grid.t])
        sol = halfspace_wave_solve(grid, farr)
        fl2 = float(np.sqrt(np.sum(farr ** 2) * grid.hx * grid.hy * grid.dt))
        out.append({"T": float(T), "h1": sol.h1_norm(), "f_l2": fl2,
                    "ratio": kreiss_ratio(sol, fl2, 0.0)})
    return out
