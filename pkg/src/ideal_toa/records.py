"""Run records shared by the engines and the accounting layer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import Grid, MadelungState, PhysicalConstants, SurfaceDensity, WaveField

IDEAL_KINDS = ("ideal-detector-psi", "ideal-detector-hydro")


@dataclass(frozen=True)
class EvolutionSnapshot:
    t: float
    field: WaveField | MadelungState
    sigma: SurfaceDensity
    interior: float
    surface: float
    flux_trace: np.ndarray      # (steps since previous snapshot, n_det)
    momentum_sum: np.ndarray    # (n_det, dim): sum over absorption events of m*v*dsigma
    absorbed: np.ndarray        # (n_det,): sum of dsigma over absorption events

    @property
    def grid(self) -> Grid:
        return self.field.grid


@dataclass
class DetectorRecord:
    engine: str
    grid: Grid
    constants: PhysicalConstants
    dt: float
    times: np.ndarray           # (N+1,)
    interior: np.ndarray        # (N+1,)
    surface: np.ndarray         # (N+1,)
    flux: np.ndarray            # (N, n_det) signed outward flux per step
    dsigma: np.ndarray          # (N, n_det)
    momentum: np.ndarray        # (N, n_det, dim)
    sigma0: np.ndarray
    snapshots: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def area(self) -> np.ndarray:
        return self.grid.area_elements

    @property
    def absorbing(self) -> bool:
        return self.engine in IDEAL_KINDS

    def sigma_at(self, step: int) -> np.ndarray:
        return self.sigma0 + self.dsigma[:step].sum(axis=0)

    def step_mass(self) -> np.ndarray:
        """(N, n_det) probability deposited per step and node."""
        return self.dsigma * self.area[None, :]
