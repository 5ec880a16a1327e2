"""Closed-form free Gaussians, their currents, and backflow-state construction.

Everything here is independent of the engines: wave functions come from the
complex-width formula, derivatives are analytic, time integrals of the flux
use adaptive quadrature, and an mpmath path is available for spot checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy import integrate, optimize, special

from .errors import ConfigError, NoBackflowFoundError
from .fields import Grid, PhysicalConstants, WaveField


@dataclass(frozen=True)
class GaussianParams:
    """Minimum-width Gaussian at time ``t0``: center x0, width s, mean wavenumber k0."""

    x0: float = -10.0
    s: float = 1.0
    k0: float = 2.0
    t0: float = 0.0

    def __post_init__(self):
        if not self.s > 0:
            raise ConfigError("Gaussian width s must be > 0", key="initial.s")


def _gauss(p: GaussianParams, c: PhysicalConstants, x, t):
    """psi and d(psi)/dx of one free Gaussian (vectorised numpy)."""
    x = np.asarray(x, dtype=float)
    tau = np.asarray(t, dtype=float) - p.t0
    s2 = p.s**2
    alpha = s2 + 0.5j * c.hbar * tau / c.mass
    vel = c.hbar * p.k0 / c.mass
    xi = x - p.x0 - vel * tau
    log_psi = (
        -0.25 * np.log(2 * np.pi * s2)
        + 0.5 * np.log(s2 / alpha)
        - xi**2 / (4 * alpha)
        + 1j * p.k0 * (x - p.x0)
        - 0.5j * c.hbar * p.k0**2 * tau / c.mass
    )
    psi = np.exp(log_psi)
    return psi, psi * (-xi / (2 * alpha) + 1j * p.k0)


def _gauss_mp(p: GaussianParams, c: PhysicalConstants, x, t):
    x, tau = mpmath.mpf(x), mpmath.mpf(t) - p.t0
    hbar, m = mpmath.mpf(c.hbar), mpmath.mpf(c.mass)
    s2 = mpmath.mpf(p.s) ** 2
    k0 = mpmath.mpf(p.k0)
    alpha = s2 + 1j * hbar * tau / (2 * m)
    xi = x - p.x0 - hbar * k0 * tau / m
    psi = (
        (2 * mpmath.pi * s2) ** mpmath.mpf(-0.25)
        * mpmath.sqrt(s2 / alpha)
        * mpmath.exp(-(xi**2) / (4 * alpha) + 1j * k0 * (x - p.x0) - 1j * hbar * k0**2 * tau / (2 * m))
    )
    return psi, psi * (-xi / (2 * alpha) + 1j * k0)


@dataclass(frozen=True)
class Superposition:
    """sum_i coeffs[i] * gaussian(params[i]); coefficients carry the normalization."""

    coeffs: tuple
    params: tuple

    def overlap(self, c: PhysicalConstants = PhysicalConstants()) -> complex:
        """<psi|psi>, exact for Gaussians (time independent under free flow)."""
        total = 0j
        for ci, pi in zip(self.coeffs, self.params):
            for cj, pj in zip(self.coeffs, self.params):
                total += np.conj(ci) * cj * gaussian_overlap(pi, pj)
        return total

    def evaluate(self, c, x, t, precise=False):
        if precise:
            pairs = [_gauss_mp(p, c, x, t) for p in self.params]
            psi = mpmath.fsum(ci * a for ci, (a, _) in zip(self.coeffs, pairs))
            dpsi = mpmath.fsum(ci * b for ci, (_, b) in zip(self.coeffs, pairs))
            return psi, dpsi
        psi = dpsi = 0
        for ci, p in zip(self.coeffs, self.params):
            a, b = _gauss(p, c, x, t)
            psi = psi + ci * a
            dpsi = dpsi + ci * b
        return psi, dpsi


def gaussian_overlap(p: GaussianParams, q: GaussianParams) -> complex:
    """<g_p|g_q> at a common time for packets with the same (x0, s, t0)."""
    if (p.x0, p.s, p.t0) != (q.x0, q.s, q.t0):
        raise ValueError("closed-form overlap needs a shared center, width and release time")
    return complex(math.exp(-0.5 * (q.k0 - p.k0) ** 2 * p.s**2))


def _as_state(p) -> Superposition:
    if isinstance(p, Superposition):
        return p
    return Superposition((1.0,), (p,))


def analytic_gaussian(p, c: PhysicalConstants = PhysicalConstants(), x=0.0, t=0.0, precise: bool = False):
    """Free evolution of the Gaussian (or superposition) ``p`` at positions ``x`` and time ``t``."""
    psi, _ = _as_state(p).evaluate(c, x, t, precise)
    return psi


def analytic_gradient(p, c: PhysicalConstants = PhysicalConstants(), x=0.0, t=0.0, precise: bool = False):
    _, dpsi = _as_state(p).evaluate(c, x, t, precise)
    return dpsi


def analytic_flux(p, c: PhysicalConstants = PhysicalConstants(), x=0.0, t=0.0, precise: bool = False):
    """(hbar/m) Im(conj(psi) d(psi)/dx) of the closed form, analytic derivative."""
    psi, dpsi = _as_state(p).evaluate(c, x, t, precise)
    if precise:
        return float(c.hbar / c.mass * mpmath.im(mpmath.conj(psi) * dpsi))
    return (c.hbar / c.mass) * np.imag(np.conj(psi) * dpsi)


def analytic_density(p, c: PhysicalConstants = PhysicalConstants(), x=0.0, t=0.0):
    return np.abs(analytic_gaussian(p, c, x, t)) ** 2


def width(p: GaussianParams, c: PhysicalConstants, t) -> np.ndarray:
    """Position standard deviation sqrt(s^2 + (hbar t / 2 m s)^2)."""
    tau = np.asarray(t, dtype=float) - p.t0
    return np.sqrt(p.s**2 + (c.hbar * tau / (2 * c.mass * p.s)) ** 2)


def probability_beyond(p: GaussianParams, c: PhysicalConstants, x, t) -> np.ndarray:
    """P(position > x) for a single free Gaussian, closed form (erfc)."""
    tau = np.asarray(t, dtype=float) - p.t0
    mean = p.x0 + c.hbar * p.k0 * tau / c.mass
    return 0.5 * special.erfc((x - mean) / (math.sqrt(2) * width(p, c, t)))


def flux_integral(p, c: PhysicalConstants = PhysicalConstants(), x=0.0, t_end=0.0, t_start=0.0) -> float:
    """int_{t_start}^{t_end} j(x, t) dt by adaptive quadrature."""
    val, _ = integrate.quad(
        lambda tt: float(analytic_flux(p, c, x, tt)), t_start, t_end, epsabs=1e-14, epsrel=1e-12, limit=500
    )
    return val


def flux_integral_series(p, c: PhysicalConstants, x: float, times) -> np.ndarray:
    """Cumulative flux integral from times[0] evaluated at every entry of ``times``."""
    times = np.asarray(times, dtype=float)
    out = np.zeros(times.size)
    for i in range(1, times.size):
        out[i] = out[i - 1] + flux_integral(p, c, x, times[i], times[i - 1])
    return out


def wave_on_grid(p, grid: Grid, c: PhysicalConstants = PhysicalConstants(), t: float = 0.0) -> WaveField:
    """Sample the closed form on every node of ``grid`` (region and buffer)."""
    if grid.dim == 1:
        return WaveField(grid, analytic_gaussian(p, c, grid.x, t), t)
    raise ValueError("use gaussian_2d for two-dimensional grids")


def gaussian_2d(p: GaussianParams, grid: Grid, sy: float = 1.0, ky: float = 0.0, y0: float = 0.0,
                c: PhysicalConstants = PhysicalConstants(), t: float = 0.0) -> WaveField:
    """Product of an x-Gaussian and a y-Gaussian (free evolution factorizes)."""
    gx = analytic_gaussian(p, c, grid.x, t)
    gy = analytic_gaussian(GaussianParams(y0, sy, ky, p.t0), c, grid.y, t)
    return WaveField(grid, np.outer(gx, gy), t)


def tail_mass(p, c: PhysicalConstants, x_far: float, t: float = 0.0, x_det: float = 0.0) -> float:
    """Probability of the closed form outside [x_far, x_det] (both tails)."""
    st = _as_state(p)
    if len(st.params) == 1:
        q = st.params[0]
        return float(probability_beyond(q, c, x_det, t) + 1 - probability_beyond(q, c, x_far, t))
    dens = lambda xx: float(np.abs(analytic_gaussian(st, c, xx, t)) ** 2)  # noqa: E731
    right, _ = integrate.quad(dens, x_det, np.inf, epsabs=1e-16, limit=200)
    left, _ = integrate.quad(dens, -np.inf, x_far, epsabs=1e-16, limit=200)
    return right + left


# -- backflow ---------------------------------------------------------------


@dataclass
class BackflowWave(WaveField):
    """Wave field of a certified backflow superposition plus its witness."""

    superposition: Superposition | None = None
    witness: tuple | None = None          # (x, t, F) with F < 0
    box: dict = field(default_factory=dict)

    def recheck(self, c: PhysicalConstants = PhysicalConstants()) -> float:
        x, t, _ = self.witness
        return float(analytic_flux(self.superposition, c, x, t, precise=True))


def backflow_superposition(k1, k2, weights, s, x0, phase=0.0, c=PhysicalConstants()) -> Superposition:
    w1, w2 = (complex(w) for w in weights)
    g1, g2 = GaussianParams(x0, s, k1), GaussianParams(x0, s, k2)
    coeffs = (w1, w2 * np.exp(1j * phase))
    raw = Superposition(coeffs, (g1, g2)).overlap(c).real
    if not raw > 1e-12:
        raise ConfigError("superposition weights give zero norm", key="state.w1")
    scale = 1 / math.sqrt(raw)
    return Superposition(tuple(ci * scale for ci in coeffs), (g1, g2))


def make_backflow_state(
    k1: float,
    k2: float,
    weights=(1.0, 1.0),
    s: float = 1.0,
    x0: float = -8.0,
    grid: Grid | None = None,
    c: PhysicalConstants = PhysicalConstants(),
    t_max: float = 20.0,
    x_det: float = 0.0,
    n_phases: int = 32,
    n_times: int = 4001,
    significance: float = 1e-6,
) -> BackflowWave:
    """Two Gaussians sharing (x0, s) with wavenumbers k1 != k2, certified to show backflow.

    The scan box is relative phase x release time: for each phase in
    ``[0, 2 pi)`` the analytic flux at ``x_det`` is sampled on ``n_times``
    points in ``[0, t_max]``; the first phase with a negative sample is
    refined to the local flux minimum, re-evaluated in extended precision, and
    returned with the witness ``(x_det, t, F)``. Dips smaller than
    ``significance`` times the peak flux are treated as round-off, not backflow.
    """
    if not (k1 > 0 and k2 > 0):
        raise ConfigError("backflow wavenumbers must be positive", key="state.k1")
    box = {"phase": [0.0, 2 * math.pi, n_phases], "t": [0.0, t_max, n_times], "x": x_det}
    times = np.linspace(0.0, t_max, n_times)
    for phase in np.linspace(0.0, 2 * math.pi, n_phases, endpoint=False):
        try:
            sup = backflow_superposition(k1, k2, weights, s, x0, phase, c)
        except ConfigError:
            continue  # destructive interference, nothing to propagate
        f = analytic_flux(sup, c, x_det, times)
        i = int(np.argmin(f))
        floor = -significance * float(np.max(np.abs(f)))
        if not f[i] < floor:
            continue
        lo, hi = times[max(i - 1, 0)], times[min(i + 1, n_times - 1)]
        res = optimize.minimize_scalar(lambda tt: float(analytic_flux(sup, c, x_det, tt)), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        t_w = float(res.x) if res.fun < f[i] else float(times[i])
        f_w = float(analytic_flux(sup, c, x_det, t_w, precise=True))
        if not f_w < floor:
            continue
        if grid is None:
            grid = Grid(x0 - 22.0, 4096)
        psi = analytic_gaussian(sup, c, grid.x, 0.0)
        return BackflowWave(grid, psi, 0.0, superposition=sup, witness=(x_det, t_w, f_w),
                            box=dict(box, phase_found=float(phase)))
    raise NoBackflowFoundError(
        f"no negative flux at x={x_det} for k1={k1}, k2={k2} within the scanned box", box=box
    )
