"""Probability measures built from a detector record.

Arrival-time masses come from the per-step sigma increments, so the
distribution inherits non-negativity from the engine. The never-arrived atom
is whatever probability is not on the surface at the horizon.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, SemanticsError, UndefinedConditionalError
from .fields import Grid, PhysicalConstants, WaveField
from .records import DetectorRecord, EvolutionSnapshot

log = logging.getLogger(__name__)

BOX_SLACK = 1e-9


# -- quadrature over boxes ---------------------------------------------------


def interval_weights(nodes: np.ndarray, lo: float, hi: float, wrap_to: float | None = None) -> np.ndarray:
    """Weights w with sum(w * f) = integral over [lo, hi] of the linear interpolant of f.

    With ``wrap_to`` set, an extra cell joins the last node to the first one
    at coordinate ``wrap_to`` (periodic lateral direction).
    """
    n = nodes.size
    right_nodes = np.append(nodes[1:], wrap_to) if wrap_to is not None else nodes[1:]
    left = nodes[: right_nodes.size]
    h = right_nodes - left
    a = np.clip(lo, left, right_nodes)
    b = np.clip(hi, left, right_nodes)
    # integrals of the hat pieces (1 - u) and u over [a, b], u = (x - left) / h
    ua, ub = (a - left) / h, (b - left) / h
    to_right = 0.5 * h * (ub**2 - ua**2)
    to_left = (b - a) - to_right
    w = np.zeros(n)
    np.add.at(w, np.arange(left.size), to_left)
    np.add.at(w, (np.arange(left.size) + 1) % n, to_right)
    return w


def _box(region, grid: Grid):
    box = [tuple(map(float, r)) for r in region]
    if len(box) != grid.dim:
        raise DomainError(f"region has {len(box)} axes, grid is {grid.dim}D")
    bounds = [(grid.x_far, 0.0)] + ([(grid.y_min, grid.y_max)] if grid.dim == 2 else [])
    for (lo, hi), (g_lo, g_hi) in zip(box, bounds):
        if hi < lo:
            raise DomainError(f"empty region interval [{lo}, {hi}]")
        if lo < g_lo - BOX_SLACK or hi > g_hi + BOX_SLACK:
            raise DomainError(f"region [{lo}, {hi}] is not inside the domain [{g_lo}, {g_hi}]")
    return box


def _lateral_weights(box, grid: Grid) -> np.ndarray:
    if grid.dim == 1:
        return np.ones(1)
    lo, hi = box[1]
    wrap = grid.y_max if grid.lateral == "periodic" else None
    return interval_weights(grid.y, lo, hi, wrap)


def _density_rows(field_, grid: Grid) -> np.ndarray:
    if isinstance(field_, WaveField):
        rho = np.abs(field_.psi) ** 2
    else:
        rho = np.asarray(field_.rho, dtype=float)
    return grid.as_rows(rho)[: grid.nx]


def _surface_part(snapshot: EvolutionSnapshot, box) -> float:
    grid = snapshot.grid
    lo, hi = box[0]
    if not lo <= 0.0 <= hi + BOX_SLACK:
        return 0.0
    return float(np.dot(snapshot.sigma.sigma, _lateral_weights(box, grid)))


def position_measure(snapshot: EvolutionSnapshot, region) -> float:
    """P_t(U): probability in the open region plus surface probability on U.

    ``region`` is a box given as one (lo, hi) pair per axis. A zero-width box
    at x = 0 picks out the detector surface only.
    """
    grid = snapshot.grid
    box = _box(region, grid)
    wx = interval_weights(grid.x[: grid.nx], *box[0])
    wy = _lateral_weights(box, grid)
    inside = float(wx @ _density_rows(snapshot.field, grid) @ wy)
    return inside + _surface_part(snapshot, box)


def conditional_measure(snapshot: EvolutionSnapshot, region) -> float:
    """P_t(U | D) = P_t(U and D) / P_t(D)."""
    box = _box(region, snapshot.grid)
    total = snapshot.sigma.total()
    if not total > 0:
        raise UndefinedConditionalError("conditional on the detector is undefined: no probability on the surface yet")
    return _surface_part(snapshot, box) / total


def conditional_momentum(snapshot: EvolutionSnapshot, c: PhysicalConstants = PhysicalConstants()) -> np.ndarray:
    """Expected impact momentum given absorption by time t.

    Each node's momentum is the sigma-weighted mean of m v recorded when
    probability was transferred there. Surface mass without a recorded
    event (an initial sigma) contributes zero momentum.
    """
    sigma = snapshot.sigma
    total = sigma.total()
    if not total > 0:
        raise UndefinedConditionalError("conditional momentum is undefined: no probability on the surface yet")
    seen = snapshot.absorbed > 0
    pbar = np.zeros_like(snapshot.momentum_sum)
    pbar[seen] = snapshot.momentum_sum[seen] / snapshot.absorbed[seen, None]
    if np.any(~seen & (sigma.sigma > 0)):
        log.warning("surface probability without recorded impact momentum counted as zero momentum")
    return (sigma.sigma * sigma.area) @ pbar / total


# -- time binning ----------------------------------------------------------------


def _require_absorbing(record: DetectorRecord):
    if not record.absorbing:
        raise SemanticsError(
            f"{record.engine} records do not absorb at the detector; surface probability is not an arrival "
            "probability for this engine (probability may re-enter the region)"
        )


def time_edges(record: DetectorRecord, bin_width: float) -> np.ndarray:
    if not bin_width > 0:
        raise ConfigError("bin width must be > 0", key="output.bin_width")
    t0, t1 = float(record.times[0]), record.horizon
    n = max(1, int(np.ceil((t1 - t0) / bin_width - 1e-9)))
    edges = t0 + bin_width * np.arange(n + 1)
    edges[-1] = max(t1, t0)
    return edges


def _step_bins(record: DetectorRecord, edges: np.ndarray) -> np.ndarray:
    mid = 0.5 * (record.times[:-1] + record.times[1:])
    return np.clip(np.searchsorted(edges, mid, side="right") - 1, 0, edges.size - 2)


def _binned(record: DetectorRecord, per_step: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """(n_det, n_bins) sums of per-step node masses; shared by every time-binned measure."""
    nb = edges.size - 1
    idx = _step_bins(record, edges)
    out = np.zeros((per_step.shape[1], nb))
    for k in range(per_step.shape[1]):
        out[k] = np.bincount(idx, weights=per_step[:, k], minlength=nb)
    return out


def _arrival_matrix(record: DetectorRecord, edges: np.ndarray) -> np.ndarray:
    m = _binned(record, record.step_mass(), edges)
    # surface probability present at the start counts as arrived by t0
    m[:, 0] += record.sigma0 * record.area
    return m


@dataclass(frozen=True)
class ArrivalDistribution:
    edges: np.ndarray
    mass: np.ndarray
    never: float
    horizon: float
    p_inf: float
    truncated: bool

    @property
    def never_label(self) -> str:
        # with probability still inside, 1 - P(D) only bounds the never-arrived mass
        return "upper bound" if self.truncated else "estimate"

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.mass)

    def total(self) -> float:
        return float(self.mass.sum() + self.never)


@dataclass
class DetectorDistribution:
    time_edges: np.ndarray
    surface_groups: list
    mass: np.ndarray            # (surface bins, time bins)
    never: float
    _marginals: dict = field(default_factory=dict, repr=False)

    def time_marginal(self) -> np.ndarray:
        if "time" not in self._marginals:
            self._marginals["time"] = self.mass.sum(axis=0)
        return self._marginals["time"]

    def surface_marginal(self) -> np.ndarray:
        if "surface" not in self._marginals:
            self._marginals["surface"] = self.mass.sum(axis=1)
        return self._marginals["surface"]

    def total(self) -> float:
        return float(self.mass.sum() + self.never)


def arrival_cumulative(record: DetectorRecord, t: float) -> float:
    """T([0, t]) = P_t(D), linear in time between recorded steps."""
    _require_absorbing(record)
    if not record.times[0] - 1e-12 <= t <= record.horizon + 1e-12:
        raise DomainError(f"t={t} is outside the record horizon [{record.times[0]}, {record.horizon}]")
    return float(np.interp(t, record.times, record.surface))


def arrival_interval(record: DetectorRecord, t: float, dt: float) -> float:
    if not dt > 0:
        raise ConfigError("interval length must be > 0")
    return arrival_cumulative(record, t + dt) - arrival_cumulative(record, t)


def arrival_distribution(record: DetectorRecord, bin_width: float, stop_threshold: float = 1e-3) -> ArrivalDistribution:
    _require_absorbing(record)
    edges = time_edges(record, bin_width)
    mass = _arrival_matrix(record, edges).sum(axis=0)
    p_inf = float(record.surface[-1])
    truncated = bool(record.interior[-1] > stop_threshold)
    return ArrivalDistribution(edges, mass, 1.0 - p_inf, record.horizon, p_inf, truncated)


def surface_groups(n_nodes: int, surface_bins=None) -> list:
    """Contiguous node groups: one per node, ``k`` near-equal groups, or explicit boundaries."""
    if surface_bins is None:
        return [np.array([j]) for j in range(n_nodes)]
    if np.isscalar(surface_bins):
        k = int(surface_bins)
        if not 1 <= k <= n_nodes:
            raise ConfigError(f"surface bins must be between 1 and {n_nodes}", key="output.surface_bins")
        return np.array_split(np.arange(n_nodes), k)
    cuts = np.asarray(surface_bins, dtype=int)
    if cuts[0] != 0 or cuts[-1] != n_nodes or np.any(np.diff(cuts) <= 0):
        raise ConfigError("surface bin boundaries must increase from 0 to the node count", key="output.surface_bins")
    return [np.arange(a, b) for a, b in zip(cuts[:-1], cuts[1:])]


def detector_distribution(record: DetectorRecord, surface_bins=None, bin_width: float = 0.1) -> DetectorDistribution:
    """Joint (surface, time) arrival masses.

    In 1D the surface is one node and the single row is the arrival
    distribution, built by the same code path.
    """
    _require_absorbing(record)
    edges = time_edges(record, bin_width)
    per_node = _arrival_matrix(record, edges)
    groups = surface_groups(per_node.shape[0], surface_bins)
    if len(groups) == per_node.shape[0]:
        mass = per_node
    else:
        mass = np.array([per_node[g].sum(axis=0) for g in groups])
    return DetectorDistribution(edges, groups, mass, 1.0 - float(record.surface[-1]))


@dataclass(frozen=True)
class SignedDistribution:
    edges: np.ndarray
    mass: np.ndarray

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.mass)

    @property
    def monotone(self) -> bool:
        return bool(np.all(self.mass >= 0))


def daumer_flux_distribution(record: DetectorRecord, bin_width: float) -> SignedDistribution:
    """Bins of the signed outward flux integral, no gate: negative entries allowed."""
    edges = time_edges(record, bin_width)
    per_step = record.flux * record.dt * record.area[None, :]
    return SignedDistribution(edges, _binned(record, per_step, edges).sum(axis=0))


def signed_flux_cumulative(record: DetectorRecord) -> np.ndarray:
    """Per-step cumulative of the signed flux, aligned with ``record.times``."""
    steps = (record.flux * record.area[None, :]).sum(axis=1) * record.dt
    return np.concatenate([[0.0], np.cumsum(steps)])
