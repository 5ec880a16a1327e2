"""Time steppers for the wave function and the Madelung fields."""

from .hydro import HydroEngine, step_ideal_detector_hydro
from .psi import (
    IdealDetectorEngine,
    ReferenceEngine,
    RobinEngine,
    StepInfo,
    check_resolution,
    fastest_wavenumber,
    points_per_wavelength,
    split_step_reference,
    step_ideal_detector_psi,
    step_reference,
    step_robin,
)
from .run import ENGINE_KINDS, EngineConfig, make_engine, run_evolution
