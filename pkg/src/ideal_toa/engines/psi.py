"""Wave-function engines: free reference, Robin absorbing boundary, ideal detector.

All three advance psi with Crank-Nicolson. In 2D the step is the product of an
x-sweep and a y-sweep; the two 1D factors commute, so the product is unitary
and second order. Probability crossing the detector face during a step is
measured exactly: for Crank-Nicolson with the three-point Laplacian the change
of the trapezoid-weighted region probability of one lateral row equals
``-dt * dS * (hbar/m) Im(conj(pb[J]) (pb[J+1] - pb[J-1])) / (2 dx)`` with
``pb`` the average of the field before and after the x-sweep. The engines
read that change directly off the row sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ResolutionError
from ..fields import Grid, PhysicalConstants, SurfaceDensity, WaveField
from ..tridiag import Cyclic, Tridiagonal

FAR_WALL_CELLS = 5
# the sparse (periodic) solver has no built-in flush; amplitudes below this are
# zeroed so later sweeps never run through subnormals
FLUSH_BELOW = 1e-200


def _flush(arr):
    flat = arr.view(float) if np.iscomplexobj(arr) else arr
    flat[np.abs(flat) < FLUSH_BELOW] = 0.0
    return arr


def _axis_operator(n_unknown, h, dt, c, *, potential=None, robin_beta=None, periodic=False):
    """Return the implicit Crank-Nicolson factor A = 1 + (i dt / 2 hbar) H along one axis.

    The explicit factor is 2 - A, so one step is ``2 A^{-1} psi - psi``.
    """
    kin = c.hbar**2 / (c.mass * h**2)
    off = np.full(n_unknown, -0.5 * kin, dtype=complex)
    main = np.full(n_unknown, kin, dtype=complex)
    if potential is not None:
        main = main + potential
    lower = off.copy()
    upper = off.copy()
    if robin_beta is not None:
        # ghost node psi[J+1] = psi[J-1] + 2 dx beta psi[J]
        lower[-1] = -kin
        main[-1] = kin * (1.0 - h * robin_beta)
    a = 0.5j * dt / c.hbar
    if periodic:
        return Cyclic(a * lower, 1 + a * main, a * upper)
    return Tridiagonal(a * lower[1:], 1 + a * main, a * upper[:-1])


class CrankNicolsonSweeps:
    """x- and y-direction Crank-Nicolson factors for one grid, time step and x-boundary mode.

    x-boundary modes: ``open`` (walls at both ends of region + buffer),
    ``walled`` (wall at the detector node), ``robin`` (ghost relation at the
    detector node, buffer left untouched).
    """

    def __init__(self, grid: Grid, dt: float, c: PhysicalConstants, mode: str, beta: complex = 0.0):
        self.grid, self.dt, self.c, self.mode = grid, dt, c, mode
        j = grid.j_det
        if mode == "open":
            if grid.detector == "walled":
                lo, hi = 1, j
            else:
                lo, hi = 1, grid.n_total - 1
            beta_arg = None
        elif mode == "walled":
            lo, hi = 1, j
            beta_arg = None
        elif mode == "robin":
            lo, hi = 1, j + 1
            beta_arg = complex(beta)
        else:
            raise ValueError(f"unknown x-boundary mode {mode!r}")
        self.x_slice = slice(lo, hi)
        pot_x = None
        self.phase_half = None
        if c.potential is not None:
            pot = np.asarray(c.potential, dtype=float)
            if pot.shape != grid.shape:
                raise ConfigError(f"potential shape {pot.shape} does not match grid {grid.shape}")
            if grid.dim == 1:
                pot_x = pot[self.x_slice]
            else:
                self.phase_half = np.exp(-0.5j * dt * pot / c.hbar)
        self.ax = _axis_operator(hi - lo, grid.dx, dt, c, potential=pot_x, robin_beta=beta_arg)
        self.ay = None
        if grid.dim == 2:
            if grid.lateral == "periodic":
                self.y_slice = slice(0, grid.ny)
                self.ay = _axis_operator(grid.ny, grid.dy, dt, c, periodic=True)
            else:
                self.y_slice = slice(1, grid.ny - 1)
                self.ay = _axis_operator(grid.ny - 2, grid.dy, dt, c)

    def potential_half(self, rows):
        if self.phase_half is None:
            return rows
        return rows * self.grid.as_rows(self.phase_half)

    def sweep_y(self, rows):
        if self.ay is None:
            return rows
        out = rows.copy()
        ys = self.y_slice
        block = rows[:, ys].T
        out[:, ys] = (2 * self.ay.solve(block) - block).T
        return _flush(out)

    def sweep_x(self, rows):
        out = rows.copy()
        xs = self.x_slice
        seg = rows[xs]
        out[xs] = 2 * self.ax.solve(seg) - seg
        return out

    def step(self, rows):
        rows = self.potential_half(rows)
        rows = self.sweep_y(rows)
        rows = self.sweep_x(rows)
        return self.potential_half(rows)


def row_probability(rows: np.ndarray, grid: Grid) -> np.ndarray:
    """Region probability carried by each lateral row (trapezoid in x, dS in y)."""
    nx = grid.nx
    dens = rows[:nx].real ** 2 + rows[:nx].imag ** 2
    return (grid.wx[:nx] @ dens) * grid.wy


def far_wall_probability(rows: np.ndarray, grid: Grid, cells: int = FAR_WALL_CELLS) -> float:
    """Probability within ``cells`` nodes of any reflecting far wall, buffer end included."""
    dens = rows.real**2 + rows.imag**2
    w = grid.wy * grid.dx
    total = float(np.sum(dens[:cells] @ w))
    if grid.n_buffer > 0:
        total += float(np.sum(dens[-cells:] @ w))
    if grid.dim == 2 and grid.lateral == "wall":
        total += float(np.sum(dens[:, :cells]) + np.sum(dens[:, -cells:])) * grid.dx * grid.dy
    return total


@dataclass
class StepInfo:
    flux: np.ndarray          # signed outward flux per detector node, averaged over the step
    dsigma: np.ndarray        # surface density gained per node
    momentum: np.ndarray      # (n_det, dim) m*v at the detector during the step
    clamped: bool = False
    masked_fraction: float = 0.0


class PsiEngine:
    """Shared stepping machinery; subclasses decide what happens at the detector."""

    kind = "abstract"
    x_mode = "open"

    def __init__(self, grid: Grid, dt: float, c: PhysicalConstants = PhysicalConstants(), beta: complex = 0.0):
        if not dt >= 0:
            raise ConfigError("dt must be >= 0", key="engine.dt")
        self.grid, self.dt, self.c = grid, dt, c
        self.sweeps = CrankNicolsonSweeps(grid, dt, c, self.x_mode, beta)

    def _transport(self, rows):
        """Advance one step; return new rows, signed detector flux, and the step-averaged detector row."""
        grid, dt = self.grid, self.dt
        rows = self.sweeps.potential_half(rows)
        rows = self.sweeps.sweep_y(rows)
        before = row_probability(rows, grid)
        new = self.sweeps.sweep_x(rows)
        after = row_probability(new, grid)
        gained = after - before
        if dt > 0:
            flux = -gained / (grid.wy * dt)
        else:
            flux = np.zeros_like(gained)
        j = grid.j_det
        mid = 0.5 * (rows[j] + new[j])
        return new, gained, flux, mid

    def _impact_momentum(self, pj, flux):
        grid, c = self.grid, self.c
        rho = pj.real**2 + pj.imag**2
        mom = np.zeros((grid.n_rows, grid.dim))
        ok = rho > 0
        mom[ok, 0] = c.mass * flux[ok] / rho[ok]
        if grid.dim == 2:
            if grid.lateral == "periodic":
                dp = (np.roll(pj, -1) - np.roll(pj, 1)) / (2 * grid.dy)
            else:
                dp = np.gradient(pj, grid.dy, edge_order=2)
            vy = np.zeros(grid.n_rows)
            vy[ok] = (c.hbar / c.mass) * np.imag(np.conj(pj[ok]) * dp[ok]) / rho[ok]
            mom[:, 1] = c.mass * vy
        return mom

    def step_rows(self, rows, sigma):
        raise NotImplementedError

    def step(self, wave: WaveField, sigma: SurfaceDensity):
        rows = self.grid.as_rows(wave.psi)
        new_rows, new_sigma, info = self.step_rows(rows, sigma.sigma)
        t = wave.t + self.dt
        out = WaveField.__new__(WaveField)
        out.grid, out.psi, out.t = self.grid, new_rows.reshape(self.grid.shape), t
        return out, SurfaceDensity(new_sigma, sigma.area, t), info


class ReferenceEngine(PsiEngine):
    """Free Schrodinger evolution; the detector face is not coupled.

    On an ``open`` grid the field runs freely into the buffer, so the recorded
    flux is the signed free flux through x = 0.
    """

    kind = "reference"
    x_mode = "open"

    def step_rows(self, rows, sigma):
        new, _, flux, mid = self._transport(rows)
        new = self.sweeps.potential_half(new)
        zeros = np.zeros_like(flux)
        return new, sigma, StepInfo(flux, zeros, self._impact_momentum(mid, flux))


class RobinEngine(PsiEngine):
    """n.grad(psi) = beta psi on the detector face, far walls reflecting."""

    kind = "robin"
    x_mode = "robin"

    def __init__(self, grid, dt, c=PhysicalConstants(), beta: complex = 0.0):
        if complex(beta).imag < 0:
            raise ConfigError("Robin parameter needs Im(beta) >= 0; Im(beta) < 0 injects probability", key="robin.beta_im")
        self.beta = complex(beta)
        super().__init__(grid, dt, c, beta)

    def step_rows(self, rows, sigma):
        new, _, flux, mid = self._transport(rows)
        new = self.sweeps.potential_half(new)
        new[self.grid.j_det + 1 :] = 0.0
        return new, sigma, StepInfo(flux, np.zeros_like(flux), self._impact_momentum(mid, flux))


class IdealDetectorEngine(PsiEngine):
    """One-way exchange between the region and the detector surface density.

    Each step: unitary Crank-Nicolson transport on region + buffer, then per
    detector node either
      * outflow (flux > 0): the probability that left the region is added to sigma;
      * inflow (flux <= 0): the amplitude on the ``window`` nodes next to the
        detector is scaled so the row's region probability returns to its
        pre-step value, i.e. nothing re-enters from the detector.
    The region + surface probability is therefore conserved step by step.
    """

    kind = "ideal-detector-psi"
    x_mode = "open"

    def __init__(self, grid, dt, c=PhysicalConstants(), window: int = 8):
        if window < 1:
            raise ConfigError("absorption window must be >= 1 cell", key="engine.window")
        if window > grid.nx - 2:
            raise ConfigError("absorption window exceeds the region", key="engine.window")
        self.window = int(window)
        super().__init__(grid, dt, c)
        self.coupled = grid.detector == "open"

    def _cancel_inflow(self, rows, k, gained):
        grid = self.grid
        j = grid.j_det
        w = self.window
        clamped = False
        while True:
            lo = max(j - w + 1, 0)
            seg = rows[lo : j + 1, k]
            p_w = grid.wy[k] * float(grid.wx[lo : j + 1] @ (seg.real**2 + seg.imag**2))
            if gained <= p_w or lo == 0:
                break
            clamped = True
            w *= 2
        factor = np.sqrt(max(0.0, 1.0 - gained / p_w)) if p_w > 0 else 0.0
        rows[lo : j + 1, k] *= factor
        return clamped

    def step_rows(self, rows, sigma):
        new, gained, flux, mid = self._transport(rows)
        dsigma = np.zeros_like(flux)
        clamped = False
        if self.coupled:
            out = flux > 0
            dsigma[out] = -gained[out] / self.grid.wy[out]
            for k in np.flatnonzero((~out) & (gained > 0)):
                clamped |= self._cancel_inflow(new, k, gained[k])
        new = self.sweeps.potential_half(new)
        mom = self._impact_momentum(mid, flux)
        return new, sigma + dsigma, StepInfo(flux, dsigma, mom, clamped)


# functional wrappers -------------------------------------------------------


def step_reference(psi: WaveField, dt: float, c: PhysicalConstants = PhysicalConstants()) -> WaveField:
    if dt == 0:
        return psi.copy()
    out, _, _ = ReferenceEngine(psi.grid, dt, c).step(psi, SurfaceDensity.empty(psi.grid, psi.t))
    return out


def step_robin(psi: WaveField, dt: float, beta: complex, c: PhysicalConstants = PhysicalConstants()) -> WaveField:
    out, _, _ = RobinEngine(psi.grid, dt, c, beta).step(psi, SurfaceDensity.empty(psi.grid, psi.t))
    return out


def step_ideal_detector_psi(
    psi: WaveField, sigma: SurfaceDensity, dt: float, c: PhysicalConstants = PhysicalConstants(), window: int = 8
):
    out, new_sigma, _ = IdealDetectorEngine(psi.grid, dt, c, window).step(psi, sigma)
    return out, new_sigma


def split_step_reference(psi: WaveField, t: float, c: PhysicalConstants = PhysicalConstants()) -> WaveField:
    """Exact free propagation on the periodic extension of the whole array (FFT)."""
    grid = psi.grid
    phase = np.zeros(grid.shape)
    for axis, h in enumerate(grid.spacing):
        n = grid.shape[axis]
        k = 2 * np.pi * np.fft.fftfreq(n, d=h)
        shape = [1] * len(grid.shape)
        shape[axis] = n
        phase = phase + (k**2).reshape(shape)
    spec = np.fft.fftn(psi.psi) * np.exp(-0.5j * c.hbar * t / c.mass * phase)
    return WaveField(grid, np.fft.ifftn(spec), psi.t + t)


def fastest_wavenumber(psi: WaveField, tail: float = 1e-10) -> np.ndarray:
    """Per axis, the |k| below which all but ``tail`` of the spectral power lies."""
    grid = psi.grid
    out = []
    for axis, h in enumerate(grid.spacing):
        n = grid.shape[axis]
        power = np.abs(np.fft.fft(psi.psi, axis=axis)) ** 2
        power = power.sum(axis=tuple(a for a in range(power.ndim) if a != axis)) if power.ndim > 1 else power
        k = np.abs(2 * np.pi * np.fft.fftfreq(n, d=h))
        order = np.argsort(k)
        cum = np.cumsum(power[order])
        cum /= cum[-1]
        idx = min(int(np.searchsorted(cum, 1.0 - tail)), n - 1)
        out.append(k[order][idx])
    return np.array(out)


def points_per_wavelength(psi: WaveField) -> np.ndarray:
    kf = fastest_wavenumber(psi)
    with np.errstate(divide="ignore"):
        return 2 * np.pi / (kf * np.array(psi.grid.spacing))


def check_resolution(psi: WaveField, minimum: float = 8.0) -> None:
    ppw = points_per_wavelength(psi)
    if np.any(ppw < minimum):
        raise ResolutionError(
            f"grid gives {ppw.min():.2f} points per wavelength of the fastest mode; need >= {minimum}"
        )
