"""Grids, field containers and the wave function -> hydrodynamic transforms.

Geometry: the region is ``[x_far, 0]`` in 1D or ``[x_far, 0] x [y_min, y_max]``
in 2D, with the detector on the ``x = 0`` face and outward normal ``+x``.
The x axis may be continued past the detector by a free-flight buffer that the
psi engines use to let probability leave the region; buffer nodes carry zero
quadrature weight, so every integral below is over the region only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidFieldError

DEFAULT_NODE_REL = 1e-12


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = 1.0
    mass: float = 1.0
    potential: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not (self.hbar > 0 and self.mass > 0):
            raise ValueError("hbar and mass must be positive")

    @property
    def free(self) -> bool:
        return self.potential is None


@dataclass(frozen=True)
class Grid:
    """Uniform grid; node ``j_det`` sits exactly on the detector at x = 0."""

    x_far: float
    nx: int
    buffer: float = 0.0
    y_min: float | None = None
    y_max: float | None = None
    ny: int = 1
    lateral: str = "wall"
    detector: str = "open"

    def __post_init__(self):
        if self.x_far >= 0:
            raise ValueError("x_far must be negative (detector sits at x = 0)")
        if self.nx < 8:
            raise ValueError("nx must be >= 8")
        if self.buffer < 0:
            raise ValueError("buffer must be >= 0")
        if self.detector not in ("open", "walled"):
            raise ValueError(f"unknown detector mode {self.detector!r}")
        if self.lateral not in ("wall", "periodic"):
            raise ValueError(f"unknown lateral boundary {self.lateral!r}")
        if (self.y_min is None) != (self.y_max is None):
            raise ValueError("give both y_min and y_max, or neither")
        if self.y_min is not None:
            if not self.y_max > self.y_min:
                raise ValueError("y_max must exceed y_min")
            if self.ny < 8:
                raise ValueError("ny must be >= 8")

    @property
    def dim(self) -> int:
        return 1 if self.y_min is None else 2

    @property
    def dx(self) -> float:
        return -self.x_far / (self.nx - 1)

    @property
    def dy(self) -> float:
        if self.dim == 1:
            return 1.0
        extent = self.y_max - self.y_min
        return extent / self.ny if self.lateral == "periodic" else extent / (self.ny - 1)

    @property
    def spacing(self) -> tuple:
        return (self.dx,) if self.dim == 1 else (self.dx, self.dy)

    @property
    def n_buffer(self) -> int:
        if self.detector == "walled":
            return 0
        return int(round(self.buffer / self.dx))

    @property
    def n_total(self) -> int:
        return self.nx + self.n_buffer

    @property
    def j_det(self) -> int:
        return self.nx - 1

    @property
    def n_rows(self) -> int:
        return 1 if self.dim == 1 else self.ny

    @property
    def shape(self) -> tuple:
        return (self.n_total,) if self.dim == 1 else (self.n_total, self.ny)

    @cached_property
    def x(self) -> np.ndarray:
        return self.dx * (np.arange(self.n_total) - self.j_det)

    @cached_property
    def y(self) -> np.ndarray:
        if self.dim == 1:
            return np.zeros(1)
        return self.y_min + self.dy * np.arange(self.ny)

    def mesh(self):
        if self.dim == 1:
            return (self.x,)
        return tuple(np.meshgrid(self.x, self.y, indexing="ij"))

    @cached_property
    def wx(self) -> np.ndarray:
        """Trapezoid weights along x; zero past the detector."""
        w = np.zeros(self.n_total)
        w[: self.nx] = self.dx
        w[0] *= 0.5
        w[self.j_det] *= 0.5
        return w

    @cached_property
    def wy(self) -> np.ndarray:
        if self.dim == 1:
            return np.ones(1)
        w = np.full(self.ny, self.dy)
        if self.lateral == "wall":
            w[0] *= 0.5
            w[-1] *= 0.5
        return w

    @property
    def area_elements(self) -> np.ndarray:
        """dS per detector node (1 in 1D)."""
        return self.wy

    @property
    def weights(self) -> np.ndarray:
        if self.dim == 1:
            return self.wx
        return np.outer(self.wx, self.wy)

    def as_rows(self, arr: np.ndarray) -> np.ndarray:
        """View a field as (x, lateral) so 1D and 2D share code paths."""
        return arr.reshape(self.n_total, self.n_rows)

    def describe(self) -> dict:
        d = {
            "dim": self.dim,
            "x_far": self.x_far,
            "nx": self.nx,
            "buffer": self.buffer,
            "dx": self.dx,
            "n_buffer": self.n_buffer,
            "detector": self.detector,
            "detector_face": "x=0, normal +x",
            "far_faces": ["x=x_far"] + (["y=y_min", "y=y_max"] if self.dim == 2 and self.lateral == "wall" else []),
        }
        if self.dim == 2:
            d.update(y_min=self.y_min, y_max=self.y_max, ny=self.ny, dy=self.dy, lateral=self.lateral)
        return d


@dataclass
class WaveField:
    grid: Grid
    psi: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex)
        if self.psi.shape != self.grid.shape:
            raise InvalidFieldError(f"psi has shape {self.psi.shape}, grid expects {self.grid.shape}")
        if not np.all(np.isfinite(self.psi)):
            raise InvalidFieldError("wave field has non-finite amplitudes")

    def norm2(self) -> float:
        """Probability in the region (buffer excluded)."""
        return interior_probability(np.abs(self.psi) ** 2, self.grid)

    def copy(self) -> "WaveField":
        return WaveField(self.grid, self.psi.copy(), self.t)


@dataclass
class MadelungState:
    """rho, current velocity v and stochastic velocity u.

    ``v`` and ``u`` carry a leading component axis of length ``grid.dim``;
    masked nodes (rho below the node threshold) hold NaN.
    """

    grid: Grid
    rho: np.ndarray
    v: np.ndarray
    u: np.ndarray
    mask: np.ndarray
    t: float = 0.0

    @property
    def current(self) -> np.ndarray:
        return np.where(self.mask, 0.0, self.rho * np.nan_to_num(self.v))


@dataclass
class SurfaceDensity:
    sigma: np.ndarray
    area: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.area = np.asarray(self.area, dtype=float)
        if self.sigma.shape != self.area.shape:
            raise ValueError("sigma and area elements differ in shape")
        if np.any(self.sigma < 0):
            raise InvalidFieldError("surface density must be non-negative")

    @classmethod
    def empty(cls, grid: Grid, t: float = 0.0) -> "SurfaceDensity":
        return cls(np.zeros(grid.n_rows), grid.area_elements.copy(), t)

    def total(self) -> float:
        return float(np.sum(self.sigma * self.area))

    def copy(self) -> "SurfaceDensity":
        return SurfaceDensity(self.sigma.copy(), self.area.copy(), self.t)


def _check_finite(arr):
    if not np.all(np.isfinite(arr)):
        raise InvalidFieldError("field has non-finite entries")


def gradient(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Centered differences inside, one-sided second order at array ends.

    Periodic lateral axes wrap instead.
    """
    if grid.dim == 1:
        return np.gradient(f, grid.dx, edge_order=2)[None, ...]
    gx = np.gradient(f, grid.dx, axis=0, edge_order=2)
    if grid.lateral == "periodic":
        gy = (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1)) / (2 * grid.dy)
    else:
        gy = np.gradient(f, grid.dy, axis=1, edge_order=2)
    return np.stack([gx, gy])


def divergence(vec: np.ndarray, grid: Grid) -> np.ndarray:
    out = np.zeros(vec.shape[1:], dtype=vec.dtype)
    for axis in range(grid.dim):
        comp = vec[axis]
        if axis == 1 and grid.lateral == "periodic":
            out = out + (np.roll(comp, -1, axis=1) - np.roll(comp, 1, axis=1)) / (2 * grid.dy)
        else:
            out = out + np.gradient(comp, grid.spacing[axis], axis=axis, edge_order=2)
    return out


def interior_probability(rho: np.ndarray, grid: Grid) -> float:
    return float(np.sum(grid.weights * rho))


def node_threshold(rho: np.ndarray, eps_node: float | None) -> float:
    if eps_node is not None:
        if eps_node <= 0:
            raise ValueError("eps_node must be positive")
        return eps_node
    return DEFAULT_NODE_REL * float(np.max(rho)) if rho.size else 0.0


def density_from_wave(psi: WaveField) -> np.ndarray:
    _check_finite(psi.psi)
    return psi.psi.real**2 + psi.psi.imag**2


def current_from_wave(psi: WaveField, c: PhysicalConstants = PhysicalConstants()) -> np.ndarray:
    """j = (hbar/m) Im(conj(psi) grad psi), shape (dim, *grid.shape)."""
    _check_finite(psi.psi)
    g = gradient(psi.psi, psi.grid)
    return (c.hbar / c.mass) * np.imag(np.conj(psi.psi)[None] * g)


def velocity_fields_from_wave(
    psi: WaveField, c: PhysicalConstants = PhysicalConstants(), eps_node: float | None = None
) -> MadelungState:
    rho = density_from_wave(psi)
    mask = rho < node_threshold(rho, eps_node)
    prod = np.conj(psi.psi)[None] * gradient(psi.psi, psi.grid)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = (c.hbar / c.mass) * prod.imag / rho
        u = (c.hbar / c.mass) * prod.real / rho
    v[:, mask] = np.nan
    u[:, mask] = np.nan
    return MadelungState(psi.grid, rho, v, u, mask, psi.t)


def stochastic_velocity_from_density(
    rho: np.ndarray, grid: Grid, c: PhysicalConstants = PhysicalConstants(), eps_node: float | None = None
) -> np.ndarray:
    """u = (hbar/2m) grad(rho)/rho, evaluated as the gradient of log rho.

    The log form is the same quantity but keeps the Gaussian tails accurate.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise InvalidFieldError("density must be non-negative")
    mask = rho < node_threshold(rho, eps_node)
    tiny = np.finfo(float).tiny
    log_rho = np.log(np.maximum(rho, tiny))
    u = (c.hbar / (2 * c.mass)) * gradient(log_rho, grid)
    u[:, mask] = np.nan
    return u


def energy_field(state: MadelungState, c: PhysicalConstants = PhysicalConstants()) -> np.ndarray:
    """E = (m/2)v^2 + V - (m/2)u^2 - (hbar/2) div u; NaN on and next to nodes."""
    m, hbar = c.mass, c.hbar
    v2 = np.sum(state.v**2, axis=0)
    u2 = np.sum(state.u**2, axis=0)
    div_u = divergence(state.u, state.grid)
    pot = 0.0 if c.potential is None else np.asarray(c.potential, dtype=float)
    return 0.5 * m * v2 + pot - 0.5 * m * u2 - 0.5 * hbar * div_u


def total_probability(rho: np.ndarray, sigma: SurfaceDensity, grid: Grid) -> float:
    return interior_probability(rho, grid) + sigma.total()


def boundary_flux(field, c: PhysicalConstants = PhysicalConstants()) -> np.ndarray:
    """Outward normal flux n.j at each detector node; positive means leaving the region.

    For a wave field the x-derivative uses the one-sided second-order stencil
    over nodes ``j_det, j_det-1, j_det-2``.
    """
    grid = field.grid
    j = grid.j_det
    if isinstance(field, WaveField):
        p = grid.as_rows(field.psi)
        dpsi = (3 * p[j] - 4 * p[j - 1] + p[j - 2]) / (2 * grid.dx)
        return (c.hbar / c.mass) * np.imag(np.conj(p[j]) * dpsi)
    if isinstance(field, MadelungState):
        rho = grid.as_rows(field.rho)[j]
        vx = grid.as_rows(field.v[0])[j]
        return np.where(np.isnan(vx), 0.0, rho * np.nan_to_num(vx))
    raise TypeError(f"cannot take a boundary flux of {type(field).__name__}")


def phase_velocity(psi: WaveField, c: PhysicalConstants = PhysicalConstants()) -> np.ndarray:
    """Current velocity from centered phase increments, arg(psi[i+1]/psi[i-1]) / 2h.

    Away from nodes this is a discrete gradient of one phase field, so its
    discrete curl vanishes up to round-off unless the phase winds.
    """
    grid = psi.grid
    p = psi.psi
    out = np.full((grid.dim,) + grid.shape, np.nan)
    for axis in range(grid.dim):
        h = grid.spacing[axis]
        fwd = np.roll(p, -1, axis=axis)
        bwd = np.roll(p, 1, axis=axis)
        with np.errstate(divide="ignore", invalid="ignore"):
            comp = np.angle(fwd * np.conj(bwd)) / (2 * h)
        if not (axis == 1 and grid.lateral == "periodic"):
            sl = [slice(None)] * p.ndim
            sl[axis] = 0
            comp[tuple(sl)] = np.nan
            sl[axis] = -1
            comp[tuple(sl)] = np.nan
        out[axis] = (c.hbar / c.mass) * comp
    return out


def discrete_curl(v: np.ndarray, grid: Grid) -> np.ndarray:
    """z-component of the discrete curl of a 2D vector field (centered differences)."""
    if grid.dim != 2:
        raise ValueError("curl is only defined here for 2D grids")
    dvy_dx = (np.roll(v[1], -1, axis=0) - np.roll(v[1], 1, axis=0)) / (2 * grid.dx)
    dvx_dy = (np.roll(v[0], -1, axis=1) - np.roll(v[0], 1, axis=1)) / (2 * grid.dy)
    curl = dvy_dx - dvx_dy
    curl[0, :] = curl[-1, :] = np.nan
    if grid.lateral != "periodic":
        curl[:, 0] = curl[:, -1] = np.nan
    return curl
