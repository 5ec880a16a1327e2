"""Run orchestration: step an engine, keep the probability books, flag problems."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import BudgetError, ConfigError, NumericalError
from ..fields import (
    MadelungState,
    PhysicalConstants,
    SurfaceDensity,
    WaveField,
    interior_probability,
    velocity_fields_from_wave,
)
from ..records import IDEAL_KINDS, DetectorRecord, EvolutionSnapshot
from .hydro import HydroEngine, to_state
from .psi import IdealDetectorEngine, ReferenceEngine, RobinEngine, far_wall_probability, row_probability

log = logging.getLogger(__name__)

ENGINE_KINDS = ("reference", "robin", "ideal-detector-psi", "ideal-detector-hydro")
FAR_WALL_LIMIT = 1e-8
CLAMP_WARN_FRACTION = 0.01


@dataclass(frozen=True)
class EngineConfig:
    kind: str = "ideal-detector-psi"
    dt: float = 1e-3
    steps: int = 1000
    beta: complex = 0j
    window: int = 8
    far_boundary: str = "wall"
    cfl_safety: float = 0.4
    tolerance: float = 1e-10
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    stride: int = 0
    stop_threshold: float = 1e-3
    stop_early: bool = False
    eps_node: float | None = None

    def __post_init__(self):
        if self.kind not in ENGINE_KINDS:
            raise ConfigError(f"unknown engine kind {self.kind!r}; choose from {', '.join(ENGINE_KINDS)}", key="engine.kind")
        if not self.dt > 0:
            raise ConfigError("dt must be > 0", key="engine.dt")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0", key="engine.steps")
        if self.kind == "robin" and complex(self.beta).imag < 0:
            raise ConfigError("Im(beta) >= 0 is required; a negative imaginary part injects probability", key="robin.beta_im")
        if self.window < 1:
            raise ConfigError("absorption window must be >= 1 cell", key="engine.window")
        if self.far_boundary != "wall":
            raise ConfigError("only reflecting far walls are supported", key="engine.far_boundary")

    @property
    def effective_stride(self) -> int:
        if self.stride > 0:
            return self.stride
        return max(1, self.steps // 50)


def make_engine(cfg: EngineConfig, grid):
    c = cfg.constants
    if cfg.kind == "reference":
        return ReferenceEngine(grid, cfg.dt, c)
    if cfg.kind == "robin":
        return RobinEngine(grid, cfg.dt, c, cfg.beta)
    if cfg.kind == "ideal-detector-psi":
        return IdealDetectorEngine(grid, cfg.dt, c, cfg.window)
    return HydroEngine(grid, cfg.dt, c, cfg.cfl_safety, cfg.eps_node)


def _prepare_initial(initial, cfg: EngineConfig):
    grid = initial.grid
    if cfg.kind == "ideal-detector-hydro":
        if isinstance(initial, WaveField):
            st = velocity_fields_from_wave(initial, cfg.constants, cfg.eps_node)
        else:
            st = initial
        n = grid.nx
        rho = np.array(st.rho[:n], dtype=float)
        v = np.nan_to_num(np.array(st.v[0][:n], dtype=float))
        threshold = None if cfg.eps_node is None else cfg.eps_node
        from ..fields import node_threshold

        thr = node_threshold(rho, threshold)
        return to_state(grid, rho, v, cfg.constants, thr, st.t)
    if not isinstance(initial, WaveField):
        raise ConfigError(f"engine {cfg.kind} needs a wave field as initial data")
    wave = initial.copy()
    if cfg.kind == "robin" or grid.detector == "walled":
        start = grid.j_det if grid.detector == "walled" else grid.j_det + 1
        wave.psi[start:] = 0.0
    return wave


def _interior(field) -> float:
    if isinstance(field, WaveField):
        return float(np.sum(row_probability(field.grid.as_rows(field.psi), field.grid)))
    return interior_probability(field.rho, field.grid)


def _far_wall(field) -> float:
    if isinstance(field, WaveField):
        return far_wall_probability(field.grid.as_rows(field.psi), field.grid)
    g = field.grid
    return float(np.sum(field.rho[:5]) * g.dx)


def run_evolution(initial, sigma0: SurfaceDensity | None, cfg: EngineConfig) -> DetectorRecord:
    """Step the configured engine and return the full detector record.

    The record holds per-step books (times, interior and surface probability,
    signed detector flux, sigma increments, impact momenta) and strided
    snapshots of the fields.
    """
    started = time.perf_counter()
    grid = initial.grid
    field_ = _prepare_initial(initial, cfg)
    sigma = sigma0.copy() if sigma0 is not None else SurfaceDensity.empty(grid, field_.t)
    engine = make_engine(cfg, grid)
    ideal = cfg.kind in IDEAL_KINDS
    n_det = grid.n_rows
    stride = cfg.effective_stride

    t0 = field_.t
    times = [t0]
    interior = [_interior(field_)]
    surface = [sigma.total()]
    total0 = interior[0] + surface[0]
    if ideal and abs(total0 - 1.0) > 1e-6:
        log.warning("initial interior + surface probability is %.12f, not 1", total0)
    fluxes, dsigmas, moms = [], [], []
    snapshots = []
    mom_sum = np.zeros((n_det, grid.dim))
    absorbed = np.zeros(n_det)
    last_snap = 0
    clamp_events = 0
    far_max = _far_wall(field_)
    max_budget = abs(total0 - 1.0) if ideal else 0.0
    max_mask_growth = 0.0

    def snap():
        nonlocal last_snap
        trace = np.array(fluxes[last_snap:]).reshape(-1, n_det)
        snapshots.append(
            EvolutionSnapshot(
                times[-1], field_, sigma.copy(), interior[-1], surface[-1], trace, mom_sum.copy(), absorbed.copy()
            )
        )
        last_snap = len(fluxes)

    snap()
    tail = float(np.sum(np.abs(grid.as_rows(field_.psi if isinstance(field_, WaveField) else field_.rho)[grid.nx:]) ** (2 if isinstance(field_, WaveField) else 1)) * grid.dx)
    for step in range(1, cfg.steps + 1):
        try:
            field_, sigma, info = engine.step(field_, sigma)
        except NumericalError as exc:
            exc.args = (f"step {step} (t={times[-1] + cfg.dt:.6g}): {exc.args[0]}",)
            raise
        # times from the step count, so long runs do not accumulate rounding
        field_.t = sigma.t = t0 + step * cfg.dt
        times.append(field_.t)
        ip = _interior(field_)
        sp = sigma.total()
        if ideal:
            drift = abs(ip + sp - total0)
            max_budget = max(max_budget, abs(ip + sp - 1.0))
            if drift > cfg.tolerance:
                raise BudgetError(
                    f"probability budget broken at step {step}: interior {ip:.15f} + surface {sp:.15f} "
                    f"differs from the initial total by {drift:.3e} > {cfg.tolerance:.1e}"
                )
        elif cfg.kind == "robin" and ip > interior[-1] + 1e-13:
            raise NumericalError(f"Robin interior probability increased at step {step}: {interior[-1]!r} -> {ip!r}")
        interior.append(ip)
        surface.append(sp)
        fluxes.append(info.flux)
        dsigmas.append(info.dsigma)
        moms.append(info.momentum)
        hit = info.dsigma > 0
        mom_sum[hit] += info.momentum[hit] * info.dsigma[hit, None]
        absorbed[hit] += info.dsigma[hit]
        clamp_events += int(info.clamped)
        max_mask_growth = max(max_mask_growth, info.masked_fraction)
        stop = cfg.stop_early and ip < cfg.stop_threshold
        if step % stride == 0 or step == cfg.steps or stop:
            far_max = max(far_max, _far_wall(field_))
            snap()
        if stop:
            break

    n = len(fluxes)
    flags = {
        "far_wall_max": far_max,
        "far_wall_contaminated": bool(far_max > FAR_WALL_LIMIT),
        "clamp_events": clamp_events,
        "resolution_warning": bool(n and clamp_events > CLAMP_WARN_FRACTION * n),
        "budget_max_error": max_budget,
        "truncated": bool(interior[-1] > cfg.stop_threshold),
        "initial_tail_mass": tail,
        "tail_ok": bool(tail < 1e-12),
        "mask_growth_max": max_mask_growth,
    }
    if flags["resolution_warning"]:
        log.warning("inflow cancellation needed a widened window on %d of %d steps", clamp_events, n)
    if flags["far_wall_contaminated"]:
        log.warning("probability near a far wall reached %.3e", far_max)
    return DetectorRecord(
        engine=cfg.kind,
        grid=grid,
        constants=cfg.constants,
        dt=cfg.dt,
        times=np.array(times),
        interior=np.array(interior),
        surface=np.array(surface),
        flux=np.array(fluxes).reshape(n, n_det),
        dsigma=np.array(dsigmas).reshape(n, n_det),
        momentum=np.array(moms).reshape(n, n_det, grid.dim),
        sigma0=np.array(sigma0.sigma if sigma0 is not None else np.zeros(n_det)),
        snapshots=snapshots,
        flags=flags,
        metadata={"stride": stride, "steps_requested": cfg.steps, "window": cfg.window,
                  "runtime_s": time.perf_counter() - started},
    )
