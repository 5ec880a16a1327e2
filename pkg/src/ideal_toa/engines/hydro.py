"""Hydrodynamic (Madelung) engine with the ideal-detector sink, 1D only.

Staggered finite volumes: rho lives on node-centred cells (half cells at both
ends, so cell sums are the trapezoid rule) and v on the faces between them,
plus one extra velocity on the detector face at x = 0. Face fluxes rho*v use
an upwind reconstruction of log rho with limited slopes; log rho is smooth
(quadratic for a Gaussian) where rho itself spans many decades. The far wall
has zero face flux; the detector face passes rho*v when it points out of the
region and is closed otherwise, the outflow going to sigma.

Face velocities follow the Bernoulli form of the momentum equation,

    dv/dt = -d/dx (v^2/2 + Q/m),   Q = -(hbar^2/2m) (sqrt rho)'' / sqrt rho,

which equals -v v' + u u' + (hbar/2m) u'' with u = (hbar/2m) rho'/rho. Q uses
the compact three-point stencil on sqrt(rho), written through log-density
differences so deep tails do not cancel. Time stepping is three-stage SSP
Runge-Kutta; its stability region covers a stretch of the imaginary axis,
which the purely dispersive linearized quantum term needs.

This engine is an independent witness on small grids, not a production
path: the quantum term is third order in space and the explicit step needs
dt ~ dx^2.
"""

from __future__ import annotations

import numpy as np

from ..errors import CFLError, ConfigError, EngineInvalidError
from ..fields import (
    Grid,
    MadelungState,
    PhysicalConstants,
    SurfaceDensity,
    node_threshold,
    stochastic_velocity_from_density,
)
from .psi import StepInfo

MAX_NODES = 2048
DISPERSIVE_LIMIT = 0.25
MASK_GROWTH_LIMIT = 0.2
LOG2 = np.log(2.0)
TINY = np.finfo(float).tiny
EDGE_BAND = 16
CORE_REL = 1e-6


def _interior_masked(mask) -> int:
    """Masked nodes lying between unmasked ones, i.e. nodes inside the support.

    Tails dropping below the threshold as probability leaves the region are
    not counted.
    """
    live = np.flatnonzero(~mask)
    if live.size == 0:
        return 0
    return int(np.count_nonzero(mask[live[0] : live[-1] + 1]))


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _line(x, y):
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    slope = float(dx @ (y - ym) / (dx @ dx))
    return slope, ym - slope * xm


def faces_from_nodes(v):
    """Interior face velocities and the detector-face velocity from node values."""
    return 0.5 * (v[:-1] + v[1:]), float(v[-1])


def nodes_from_faces(w, wd):
    v = np.empty(w.size + 1)
    v[0] = 0.5 * w[0]            # the wall face carries zero velocity
    v[1:-1] = 0.5 * (w[:-1] + w[1:])
    v[-1] = 0.5 * (w[-1] + wd)
    return v


class HydroEngine:
    kind = "ideal-detector-hydro"

    def __init__(
        self,
        grid: Grid,
        dt: float,
        c: PhysicalConstants = PhysicalConstants(),
        cfl_safety: float = 0.4,
        eps_node: float | None = None,
    ):
        if grid.dim != 1:
            raise ConfigError("the hydrodynamic engine is 1D only", key="grid.dim")
        if grid.nx > MAX_NODES:
            raise ConfigError(f"the hydrodynamic engine is limited to {MAX_NODES} nodes", key="grid.nx")
        if not dt > 0:
            raise ConfigError("dt must be > 0", key="engine.dt")
        if c.potential is not None:
            raise ConfigError("the hydrodynamic engine only handles V = 0", key="physics.potential")
        self.grid, self.dt, self.c = grid, dt, c
        self.cfl_safety = cfl_safety
        self.eps_node = eps_node
        self.n = grid.nx
        self.vol = grid.wx[: self.n]
        self.threshold = None
        self.support0 = None
        self.masked0 = None
        self.coupled = grid.detector == "open"
        self._cache = None
        kmax = np.pi / grid.dx
        # explicit limit on dt * (hbar/2m) k_max^2 for the dispersive quantum term
        self.dispersive_dt = DISPERSIVE_LIMIT * 2 * c.mass / (c.hbar * kmax**2)
        if dt > self.dispersive_dt:
            raise CFLError(
                f"dt={dt:g} exceeds the dispersive stability limit {self.dispersive_dt:g}",
                suggested_dt=0.9 * self.dispersive_dt,
            )

    def _mask(self, rho):
        if self.threshold is None:
            self.threshold = node_threshold(rho, self.eps_node)
        return rho < self.threshold

    # -- spatial operator ------------------------------------------------

    def _quantum_potential(self, logr):
        h, c = self.grid.dx, self.c
        ext = np.empty(logr.size + 2)
        ext[1:-1] = logr
        # ghost values by quadratic extrapolation (exact for Gaussian tails)
        ext[0] = 3 * logr[0] - 3 * logr[1] + logr[2]
        ext[-1] = 3 * logr[-1] - 3 * logr[-2] + logr[-3]
        up = np.exp(0.5 * (ext[2:] - logr))
        down = np.exp(0.5 * (ext[:-2] - logr))
        return -(c.hbar**2 / (2 * c.mass * h**2)) * (up + down - 2.0)

    def _rates(self, rho, w, wd, mask):
        """d(rho)/dt, dw/dt, d(wd)/dt and the gated detector outflow."""
        h, m = self.grid.dx, self.c.mass
        logr = np.log(np.maximum(rho, TINY))
        slope = np.zeros_like(rho)
        slope[1:-1] = _minmod(logr[1:-1] - logr[:-2], logr[2:] - logr[1:-1])
        # face values stay within a factor sqrt(2) of the cell value
        np.clip(slope, -LOG2, LOG2, out=slope)
        left = np.exp(logr[:-1] + 0.5 * slope[:-1])
        right = np.exp(logr[1:] - 0.5 * slope[1:])
        face = np.where(w > 0, w * left, w * right)
        out = rho[-1] * wd
        det = out if (self.coupled and out > 0) else 0.0
        div = np.zeros_like(rho)
        div[:-1] += face
        div[1:] -= face
        div[-1] += det
        drho = -div / self.vol

        bern = 0.5 * nodes_from_faces(w, wd) ** 2 + self._quantum_potential(logr) / m
        dw = -(bern[1:] - bern[:-1]) / h
        dwd = -(3 * bern[-1] - 4 * bern[-2] + bern[-3]) / (2 * h)
        # faces touching a masked node keep their velocity (outer tails are
        # refilled after each stage)
        frozen = mask[:-1] | mask[1:]
        dw[frozen] = 0.0
        if mask[-1]:
            dwd = 0.0
        return drho, dw, dwd, det

    def _core(self, rho):
        """True where rho is too small for the quantum term to be resolved."""
        return rho < CORE_REL * rho.max()

    def _fill_tails(self, w, wd, mask):
        """Extend face velocities into the masked outer tails by fitted lines.

        Masked tails carry no resolvable dynamics, but density is still
        transported through them as the packet spreads; a line fitted to the
        outer band of live faces keeps that transport consistent with the
        core instead of leaving stale velocities ahead of the packet.
        """
        live = np.flatnonzero(~(mask[:-1] | mask[1:]))
        if live.size < 2 * EDGE_BAND:
            raise EngineInvalidError("too few resolved nodes for the hydrodynamic engine")
        xf = self.grid.x[: self.n - 1] + 0.5 * self.grid.dx
        w = w.copy()
        for sel, side in ((live[:EDGE_BAND], slice(0, live[0])), (live[-EDGE_BAND:], slice(live[-1] + 1, None))):
            slope, icept = _line(xf[sel], w[sel])
            w[side] = icept + slope * xf[side]
        if mask[-1]:
            wd = float(icept)  # detector face sits at x = 0
        return w, wd

    # -- stepping ----------------------------------------------------------

    def _check_cfl(self, w, wd, mask):
        live = ~(mask[:-1] & mask[1:])
        vmax = max(float(np.max(np.abs(w[live]), initial=0.0)), abs(wd) if not mask[-1] else 0.0)
        if vmax * self.dt / self.grid.dx > self.cfl_safety:
            raise CFLError(
                f"CFL violated: max|v| dt/dx = {vmax * self.dt / self.grid.dx:.3f} > {self.cfl_safety}",
                suggested_dt=self.cfl_safety * self.grid.dx / vmax,
            )

    def step_faces(self, rho, w, wd, sigma):
        """One step on (rho, face velocities); returns the new triple, sigma and StepInfo."""
        mask = self._mask(rho)
        if self.support0 is None:
            self.support0 = int(np.count_nonzero(~mask))
            self.masked0 = _interior_masked(mask)
        self._check_cfl(w, wd, mask)
        dt = self.dt
        # three-stage strong-stability-preserving Runge-Kutta (Shu-Osher form)
        r1, a1, b1, d1 = self._rates(rho, w, wd, mask)
        rho1, w1, wd1 = rho + dt * r1, w + dt * a1, wd + dt * b1
        w1, wd1 = self._fill_tails(w1, wd1, self._core(rho1))
        r2, a2, b2, d2 = self._rates(rho1, w1, wd1, mask)
        rho2 = 0.75 * rho + 0.25 * (rho1 + dt * r2)
        w2 = 0.75 * w + 0.25 * (w1 + dt * a2)
        wd2 = 0.75 * wd + 0.25 * (wd1 + dt * b2)
        w2, wd2 = self._fill_tails(w2, wd2, self._core(rho2))
        r3, a3, b3, d3 = self._rates(rho2, w2, wd2, mask)
        rho_new = rho / 3 + 2 / 3 * (rho2 + dt * r3)
        w_new = w / 3 + 2 / 3 * (w2 + dt * a3)
        wd_new = wd / 3 + 2 / 3 * (wd2 + dt * b3)
        w_new, wd_new = self._fill_tails(w_new, wd_new, self._core(rho_new))
        if np.any(rho_new < 0):
            raise EngineInvalidError("density went negative; reduce dt or refine the grid")
        ds = np.array([dt * (d1 + d2 + 4 * d3) / 6])
        growth = (_interior_masked(self._mask(rho_new)) - self.masked0) / max(self.support0, 1)
        if growth > MASK_GROWTH_LIMIT:
            raise EngineInvalidError(f"node mask grew by {growth:.0%} of the initial support")
        signed = (rho[-1] * wd + rho1[-1] * wd1 + 4 * rho2[-1] * wd2) / 6
        mom = np.array([[self.c.mass * wd]])
        info = StepInfo(np.array([signed]), ds, mom, False, max(growth, 0.0))
        return rho_new, w_new, wd_new, sigma + ds, info

    def step(self, state: MadelungState, sigma: SurfaceDensity):
        n = self.n
        rho = np.asarray(state.rho[:n], dtype=float)
        if self._cache is not None and self._cache[0] is state:
            w, wd = self._cache[1], self._cache[2]
        else:
            w, wd = faces_from_nodes(np.nan_to_num(np.asarray(state.v[0][:n], dtype=float)))
        rho_new, w_new, wd_new, s_new, info = self.step_faces(rho, w, wd, sigma.sigma)
        t = state.t + self.dt
        out = to_state(self.grid, rho_new, nodes_from_faces(w_new, wd_new), self.c, self.threshold, t)
        self._cache = (out, w_new, wd_new)
        return out, SurfaceDensity(s_new, sigma.area, t), info


def to_state(grid: Grid, rho, v, c, threshold, t) -> MadelungState:
    """Pack region arrays into a MadelungState on ``grid`` (buffer nodes zero)."""
    full_rho = np.zeros(grid.n_total)
    full_v = np.zeros(grid.n_total)
    full_rho[: rho.size] = rho
    full_v[: v.size] = v
    region = Grid(grid.x_far, grid.nx, 0.0, detector=grid.detector)
    u = np.full(grid.n_total, np.nan)
    u[: rho.size] = stochastic_velocity_from_density(rho, region, c, eps_node=threshold)[0]
    mask = full_rho < threshold if threshold else np.zeros(grid.n_total, bool)
    full_v[mask] = np.nan
    u[mask] = np.nan
    return MadelungState(grid, full_rho, full_v[None], u[None], mask, t)


def step_ideal_detector_hydro(
    state: MadelungState,
    sigma: SurfaceDensity,
    dt: float,
    c: PhysicalConstants = PhysicalConstants(),
    cfl_safety: float = 0.4,
):
    out, s, _ = HydroEngine(state.grid, dt, c, cfl_safety).step(state, sigma)
    return out, s
