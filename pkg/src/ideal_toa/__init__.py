"""Arrival-time statistics for a one-way (ideal) detector surface.

The region's probability flows into a surface density on the detector and
never flows back; arrival-time and arrival-position distributions are read
off that surface density.
"""

from .errors import *  # noqa: F401,F403
from .fields import (
    Grid,
    MadelungState,
    PhysicalConstants,
    SurfaceDensity,
    WaveField,
    boundary_flux,
    current_from_wave,
    density_from_wave,
    energy_field,
    total_probability,
    velocity_fields_from_wave,
)
from .engines import EngineConfig, run_evolution
from .records import DetectorRecord, EvolutionSnapshot

__version__ = "0.1.0"
