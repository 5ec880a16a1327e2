"""Line-oriented run configuration: ``section.key = value`` with ``#`` comments.

Every key has a type and a default; unknown keys, bad values and violated
physical preconditions are reported with the key name and line number. The
canonical echo lists every key in schema order and re-parses to an equal
configuration; its SHA-256 is the manifest hash.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ConfigError
from .fields import Grid, PhysicalConstants
from .engines.run import ENGINE_KINDS, EngineConfig
from .engines.hydro import DISPERSIVE_LIMIT
from .oracles import GaussianParams

MIN_POINTS_PER_WAVELENGTH = 8.0
STATE_KINDS = ("gaussian", "backflow")


def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _int(s):
    f = float(s)
    if f != int(f):
        raise ValueError("not an integer")
    return int(f)


def _bool(s):
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean")


def _opt(conv):
    def parse(s):
        return None if s.lower() in ("", "none") else conv(s)

    parse.__name__ = conv.__name__
    return parse


def _str_list(s):
    return tuple(p.strip() for p in s.split(",") if p.strip())


def _ladder(s):
    rungs = []
    for part in filter(None, (p.strip() for p in s.split(","))):
        dx, dt = part.split(":")
        rungs.append((_float(dx), _float(dt)))
    return tuple(rungs)


# key -> (parser, default); order here is the canonical order
SCHEMA = {
    "run.name": (str, "run"),
    "engine.kind": (str, "ideal-detector-psi"),
    "engine.dt": (_float, 0.002),
    "engine.steps": (_int, 1000),
    "engine.window": (_int, 8),
    "engine.far_boundary": (str, "wall"),
    "engine.cfl_safety": (_float, 0.4),
    "engine.tolerance": (_float, 1e-10),
    "engine.stride": (_int, 0),
    "engine.stop_threshold": (_float, 1e-3),
    "engine.stop_early": (_bool, False),
    "engine.eps_node": (_opt(_float), None),
    "hydro.dt": (_opt(_float), None),
    "robin.beta_re": (_float, 0.0),
    "robin.beta_im": (_float, 0.0),
    "grid.x_far": (_float, -30.0),
    "grid.nx": (_int, 1024),
    "grid.buffer": (_float, 0.0),
    "grid.y_min": (_opt(_float), None),
    "grid.y_max": (_opt(_float), None),
    "grid.ny": (_int, 1),
    "grid.lateral": (str, "wall"),
    "grid.detector": (str, "open"),
    "physics.hbar": (_float, 1.0),
    "physics.mass": (_float, 1.0),
    "state.kind": (str, "gaussian"),
    "state.x0": (_float, -10.0),
    "state.s": (_float, 1.0),
    "state.k0": (_float, 2.0),
    "state.t0": (_float, 0.0),
    "state.sy": (_float, 1.0),
    "state.ky": (_float, 0.0),
    "state.y0": (_float, 0.0),
    "state.k1": (_float, 1.0),
    "state.k2": (_float, 3.0),
    "state.w1": (_float, 1.0),
    "state.w2": (_float, 1.0),
    "output.bin_width": (_float, 0.1),
    "output.surface_bins": (_opt(_int), None),
    "output.samples": (_int, 500),
    "compare.engines": (_str_list, ()),
    "convergence.ladder": (_ladder, ()),
}


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{a!r}:{b!r}" for a, b in value)
        return ", ".join(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    values: tuple           # ((key, value), ...) in schema order

    def __getitem__(self, key):
        return dict(self.values)[key]

    def get(self, key, default=None):
        return dict(self.values).get(key, default)

    # -- derived objects --------------------------------------------------

    @property
    def constants(self) -> PhysicalConstants:
        return PhysicalConstants(self["physics.hbar"], self["physics.mass"])

    @property
    def horizon(self) -> float:
        return self["engine.dt"] * self["engine.steps"]

    def grid(self) -> Grid:
        return Grid(
            self["grid.x_far"], self["grid.nx"], self["grid.buffer"], self["grid.y_min"], self["grid.y_max"],
            self["grid.ny"], self["grid.lateral"], self["grid.detector"],
        )

    def gaussian(self) -> GaussianParams:
        return GaussianParams(self["state.x0"], self["state.s"], self["state.k0"], self["state.t0"])

    def engine(self, kind: str | None = None) -> EngineConfig:
        kind = kind or self["engine.kind"]
        dt, steps = self["engine.dt"], self["engine.steps"]
        if kind == "ideal-detector-hydro":
            dt, steps = self.hydro_step(dt, steps)
        stride = self["engine.stride"]
        if stride and kind == "ideal-detector-hydro":
            stride = max(1, int(round(stride * self["engine.dt"] / dt)))
        return EngineConfig(
            kind=kind,
            dt=dt,
            steps=steps,
            beta=complex(self["robin.beta_re"], self["robin.beta_im"]),
            window=self["engine.window"],
            far_boundary=self["engine.far_boundary"],
            cfl_safety=self["engine.cfl_safety"],
            tolerance=self["engine.tolerance"],
            constants=self.constants,
            stride=stride,
            stop_threshold=self["engine.stop_threshold"],
            stop_early=self["engine.stop_early"],
            eps_node=self["engine.eps_node"],
        )

    def hydro_step(self, dt, steps):
        """Hydro time step: ``hydro.dt`` if given, else the largest stable step dividing the horizon."""
        horizon = dt * steps
        if self["hydro.dt"] is not None:
            h_dt = self["hydro.dt"]
        else:
            c = self.constants
            kmax = np.pi / self.grid().dx
            h_dt = 0.9 * DISPERSIVE_LIMIT * 2 * c.mass / (c.hbar * kmax**2)
        if horizon == 0:
            return h_dt, 0
        # a multiple of ten steps so snapshot times line up with the psi engines
        n = 10 * max(1, int(math.ceil(horizon / h_dt / 10 - 1e-9)))
        return horizon / n, n

    # -- echo ------------------------------------------------------------------

    def canonical(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.values)

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def as_dict(self) -> dict:
        out = {}
        for k, v in self.values:
            if isinstance(v, tuple):
                v = [list(r) if isinstance(r, tuple) else r for r in v]
            out[k] = v
        return out


def parse_config(text: str) -> RunConfig:
    """Parse, fill defaults and validate; raises ConfigError naming key and line."""
    given, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'section.key = value'", line=lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if key.count(".") != 1:
            raise ConfigError("keys are 'section.key' with exactly one dot", key=key, line=lineno)
        if key not in SCHEMA:
            raise ConfigError("unknown key", key=key, line=lineno)
        if key in given:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})", key=key, line=lineno)
        conv = SCHEMA[key][0]
        try:
            given[key] = conv(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"cannot read {value!r} as {conv.__name__}: {exc}", key=key, line=lineno) from None
        lines[key] = lineno
    values = {k: given.get(k, default) for k, (_, default) in SCHEMA.items()}
    cfg = RunConfig(tuple(values.items()))
    _validate(cfg, lines)
    return cfg


def _validate(cfg: RunConfig, lines: dict):
    def fail(key, msg):
        raise ConfigError(msg, key=key, line=lines.get(key))

    if cfg["engine.kind"] not in ENGINE_KINDS:
        fail("engine.kind", f"unknown engine kind; choose from {', '.join(ENGINE_KINDS)}")
    for kind in cfg["compare.engines"]:
        if kind not in ENGINE_KINDS:
            fail("compare.engines", f"unknown engine kind {kind!r}")
    if cfg["robin.beta_im"] < 0:
        fail("robin.beta_im", "Im(beta) >= 0 is required: a negative imaginary part makes the boundary a source")
    if cfg["engine.dt"] <= 0:
        fail("engine.dt", "dt must be > 0")
    if cfg["hydro.dt"] is not None and cfg["hydro.dt"] <= 0:
        fail("hydro.dt", "dt must be > 0")
    if cfg["engine.steps"] < 0:
        fail("engine.steps", "steps must be >= 0")
    if cfg["state.kind"] not in STATE_KINDS:
        fail("state.kind", f"unknown initial state; choose from {', '.join(STATE_KINDS)}")
    if cfg["state.s"] <= 0:
        fail("state.s", "width s must be > 0")
    if cfg["state.kind"] == "backflow" and not (cfg["state.k1"] > 0 and cfg["state.k2"] > 0):
        fail("state.k1", "backflow wavenumbers must be positive")
    if cfg["output.bin_width"] <= 0:
        fail("output.bin_width", "bin width must be > 0")
    if cfg["output.samples"] < 2:
        fail("output.samples", "need at least 2 samples")
    try:
        grid = cfg.grid()
        cfg.engine()
        cfg.constants
    except ConfigError as exc:
        raise ConfigError(exc.message, key=exc.key, line=lines.get(exc.key)) from None
    except ValueError as exc:
        key = next((k for k in lines if k.startswith("grid.")), "grid.nx")
        fail(key, str(exc))
    if cfg["state.x0"] <= grid.x_far or cfg["state.x0"] >= 0:
        fail("state.x0", "the packet centre must lie inside the region")
    # resolution heuristic: the fastest relevant wavenumber needs enough points per wavelength
    k_fast = max(abs(cfg["state.k0"]), abs(cfg["state.k1"]) if cfg["state.kind"] == "backflow" else 0.0,
                 abs(cfg["state.k2"]) if cfg["state.kind"] == "backflow" else 0.0) + 6.0 / (2 * cfg["state.s"])
    ppw = 2 * np.pi / (k_fast * grid.dx)
    if ppw < MIN_POINTS_PER_WAVELENGTH:
        fail("grid.nx", f"grid resolves the fastest mode with {ppw:.1f} points per wavelength; need >= {MIN_POINTS_PER_WAVELENGTH:g}")
    ladder = cfg["convergence.ladder"]
    if ladder:
        from .convergence import validate_ladder

        try:
            validate_ladder(ladder)
        except ConfigError as exc:
            fail("convergence.ladder", str(exc.args[0]))


# -- presets ---------------------------------------------------------------------


def preset_names() -> list:
    root = resources.files("ideal_toa") / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def preset_text(name: str) -> str:
    path = resources.files("ideal_toa") / "presets" / f"{name}.cfg"
    if not path.is_file():
        raise ConfigError(f"no preset named {name!r}; available: {', '.join(preset_names())}")
    return path.read_text(encoding="utf-8")


def load_preset(name: str) -> RunConfig:
    return parse_config(preset_text(name))
