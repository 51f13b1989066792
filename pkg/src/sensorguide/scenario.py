"""Scenario description and its sectioned key/value config format."""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, replace
from dataclasses import field as dc_field
from functools import cached_property

import numpy as np

from .fleet import HazardBump, MobilitySpec, SensorSpec, assemble_fleet
from .guidance import GuidanceProblem, SolverSettings
from .riccati import TimeGrid
from .spectral import FieldSpec, KernelSpec, build_model

SCHEMA_VERSION = 1
SEED_ENV = "SENSORGUIDE_SEED"
# free-form provenance section written by the command line; ignored on load
RUN_SECTION = "run"


class ConfigError(ValueError):
    """Invalid or unreadable scenario configuration."""


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    field: FieldSpec = dc_field(default_factory=FieldSpec)
    sensors: tuple[SensorSpec, ...] = ()
    grid: TimeGrid = dc_field(default_factory=TimeGrid)
    order: int = 12
    solver: SolverSettings = dc_field(default_factory=SolverSettings)
    hazard: tuple[HazardBump, ...] = ()
    terminal_target: tuple[float, ...] | None = None
    terminal_weight: float = 0.0
    clamps: dict = dc_field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if not self.sensors:
            raise ConfigError("scenario needs at least one [sensor.*] section")
        if self.order < 1:
            raise ConfigError("scenario.order: must be >= 1")
        object.__setattr__(self, "sensors", tuple(self.sensors))
        object.__setattr__(self, "hazard", tuple(self.hazard))
        object.__setattr__(self, "clamps", {k: v for k, v in dict(self.clamps).items()
                                            if v is not None})
        if self.terminal_target is not None:
            tgt = tuple(float(v) for v in self.terminal_target)
            if len(tgt) != 2 * len(self.sensors):
                raise ConfigError("mobility.terminal_target: needs one 2D target per sensor")
            object.__setattr__(self, "terminal_target", tgt)

    def __eq__(self, other):
        return isinstance(other, ScenarioSpec) and dumps(self) == dumps(other)

    __hash__ = None

    def evolve(self, **changes):
        return replace(self, **changes)

    @cached_property
    def model(self):
        return build_model(self.order, self.field)

    @cached_property
    def fleet(self):
        return assemble_fleet(self.sensors, self.field.flow)

    @cached_property
    def mobility(self):
        return MobilitySpec(guidance_penalty=self.fleet.penalty_matrix(), hazard=self.hazard,
                            terminal_target=self.terminal_target,
                            terminal_weight=self.terminal_weight)

    def problem(self, include_uncertainty=True):
        return GuidanceProblem(self.model, self.fleet, self.mobility, self.grid,
                               include_uncertainty=include_uncertainty)


def reference_scenario(noise_var=0.2, guidance_penalty=0.5, order=12, **kw):
    """Single sensor from (0.3, 0.1) with the default field, R and gamma."""
    sensor = SensorSpec(init_state=(0.3, 0.1), footprint_radius=0.05,
                        noise_var=noise_var, guidance_penalty=guidance_penalty)
    return ScenarioSpec(sensors=(sensor,), order=order, **kw)


# --------------------------------------------------------------------------
# text format
# --------------------------------------------------------------------------

def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.ndarray) and v.ndim == 2:
        return "; ".join(", ".join(_fmt(x) for x in row) for row in v)
    return ", ".join(_fmt(x) for x in v)


def _kernel_items(k):
    return {"amplitude": k.amplitude, "pair_length_sq": k.pair_length_sq,
            "center_length_sq": k.center_length_sq}


def dumps(spec):
    """Serialize a scenario; :func:`loads` of the result reproduces it exactly."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["scenario"] = {"schema_version": _fmt(SCHEMA_VERSION), "order": _fmt(spec.order),
                      "seed": _fmt(spec.seed)}
    cp["grid"] = {"horizon": _fmt(spec.grid.horizon), "step": _fmt(spec.grid.step)}
    f = spec.field
    cp["field"] = {"diffusion_coeff": _fmt(f.diffusion_coeff), "flow": _fmt(f.flow),
                   "uncertainty_peak": _fmt(f.uncertainty_peak),
                   "kernel_scale": _fmt(f.kernel_scale),
                   "initial_mean": _fmt(f.initial_mean_coeffs)}
    cp["kernel.init"] = {k: _fmt(v) for k, v in _kernel_items(f.init_kernel).items()}
    cp["kernel.process"] = {k: _fmt(v) for k, v in _kernel_items(f.process_kernel).items()}
    s = spec.solver
    cp["solver"] = {"omega": _fmt(s.omega), "tol": _fmt(s.tol), "max_iter": _fmt(s.max_iter),
                    "memory": _fmt(s.memory)}
    cp["clamps"] = {"p_max": _fmt(spec.clamps.get("p_max")),
                    "a_max": _fmt(spec.clamps.get("a_max"))}
    cp["mobility"] = {"terminal_target": _fmt(spec.terminal_target),
                      "terminal_weight": _fmt(spec.terminal_weight)}
    for i, b in enumerate(spec.hazard, 1):
        cp[f"hazard.{i}"] = {"amplitude": _fmt(b.amplitude), "center": _fmt(b.center),
                             "width": _fmt(b.width)}
    for i, sen in enumerate(spec.sensors, 1):
        cp[f"sensor.{i}"] = {
            "init_state": _fmt(sen.init_state),
            "footprint_radius": _fmt(sen.footprint_radius),
            "noise_var": _fmt(sen.noise_var),
            "guidance_penalty": _fmt(sen.guidance_penalty),
            "dyn_matrix": _fmt(sen.dyn_matrix),
            "input_matrix": _fmt(sen.input_matrix),
            "position_rows": _fmt(sen.position_rows),
            "drift_in_flow": _fmt(sen.drift_in_flow),
        }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def save_scenario(spec, path):
    with open(path, "w") as fh:
        fh.write(dumps(spec))


# parsing ------------------------------------------------------------------

def _float(text, where):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{where}: expected a number, got {text!r}") from None


def _opt_float(text, where):
    return None if text.strip().lower() in ("none", "") else _float(text, where)


def _int(text, where):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{where}: expected an integer, got {text!r}") from None


def _vector(text, where, size=None):
    if text.strip().lower() in ("none", ""):
        return None
    vals = tuple(_float(t, where) for t in text.split(","))
    if size is not None and len(vals) != size:
        raise ConfigError(f"{where}: expected {size} values, got {len(vals)}")
    return vals


def _matrix(text, where):
    if text.strip().lower() in ("none", ""):
        return None
    rows = [_vector(r, where) for r in text.split(";")]
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{where}: ragged matrix")
    return np.array(rows, dtype=float)


def _bool(text, where):
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{where}: expected a boolean, got {text!r}")


_SECTION_KEYS = {
    "scenario": {"schema_version", "order", "seed"},
    "grid": {"horizon", "step"},
    "field": {"diffusion_coeff", "flow", "uncertainty_peak", "kernel_scale", "initial_mean"},
    "kernel": {"amplitude", "pair_length_sq", "center_length_sq"},
    "solver": {"omega", "tol", "max_iter", "memory"},
    "clamps": {"p_max", "a_max"},
    "mobility": {"terminal_target", "terminal_weight"},
    "hazard": {"amplitude", "center", "width"},
    "sensor": {"init_state", "footprint_radius", "noise_var", "guidance_penalty",
               "dyn_matrix", "input_matrix", "position_rows", "drift_in_flow"},
}


def _section_kind(name):
    if name == RUN_SECTION:
        return name
    if name in ("kernel.init", "kernel.process"):
        return "kernel"
    head, _, tail = name.partition(".")
    if head in ("sensor", "hazard") and tail.isdigit():
        return head
    if name in _SECTION_KEYS and not tail:
        return name
    raise ConfigError(f"unknown section [{name}]")


def _build(cp):
    for name in cp.sections():
        kind = _section_kind(name)
        if kind == RUN_SECTION:
            continue
        for key in cp[name]:
            if key not in _SECTION_KEYS[kind]:
                raise ConfigError(f"{name}.{key}: unknown key")

    def get(sec, key):
        return cp[sec][key] if cp.has_section(sec) and key in cp[sec] else None

    version = get("scenario", "schema_version")
    if version is not None and _int(version, "scenario.schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"scenario.schema_version: unsupported version {version}")

    kw = {}
    if (v := get("scenario", "order")) is not None:
        kw["order"] = _int(v, "scenario.order")
    if (v := get("scenario", "seed")) is not None:
        kw["seed"] = _int(v, "scenario.seed")

    defaults = TimeGrid()
    horizon = get("grid", "horizon")
    step = get("grid", "step")
    try:
        kw["grid"] = TimeGrid(
            horizon=_float(horizon, "grid.horizon") if horizon else defaults.horizon,
            step=_float(step, "grid.step") if step else defaults.step)
    except ValueError as exc:
        key = "grid.step" if "step" in str(exc) else "grid.horizon"
        raise ConfigError(f"{key}: {exc}") from None

    fdef = FieldSpec()
    fkw = {}
    for key, parse in (("diffusion_coeff", _float), ("kernel_scale", _float)):
        if (v := get("field", key)) is not None:
            fkw[key] = parse(v, f"field.{key}")
    if (v := get("field", "flow")) is not None:
        fkw["flow"] = _vector(v, "field.flow", 2)
    if (v := get("field", "uncertainty_peak")) is not None:
        fkw["uncertainty_peak"] = _vector(v, "field.uncertainty_peak", 2)
    if (v := get("field", "initial_mean")) is not None:
        fkw["initial_mean_coeffs"] = _vector(v, "field.initial_mean")
    for which, attr in (("init", "init_kernel"), ("process", "process_kernel")):
        sec = f"kernel.{which}"
        base = getattr(fdef, attr)
        if cp.has_section(sec):
            k = cp[sec]
            try:
                fkw[attr] = KernelSpec(
                    amplitude=_float(k["amplitude"], f"{sec}.amplitude") if "amplitude" in k
                    else base.amplitude,
                    pair_length_sq=_float(k["pair_length_sq"], f"{sec}.pair_length_sq")
                    if "pair_length_sq" in k else base.pair_length_sq,
                    center_length_sq=_opt_float(k["center_length_sq"], f"{sec}.center_length_sq")
                    if "center_length_sq" in k else base.center_length_sq)
            except ValueError as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"{sec}: {exc}") from None
    try:
        kw["field"] = FieldSpec(**fkw)
    except ValueError as exc:
        raise ConfigError(f"field: {exc}") from None

    skw = {}
    for key, parse in (("omega", _float), ("tol", _float), ("max_iter", _int),
                       ("memory", _int)):
        if (v := get("solver", key)) is not None:
            skw[key] = parse(v, f"solver.{key}")
    try:
        kw["solver"] = SolverSettings(**skw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    kw["clamps"] = {key: _opt_float(v, f"clamps.{key}")
                    for key in ("p_max", "a_max") if (v := get("clamps", key)) is not None}
    if (v := get("mobility", "terminal_target")) is not None:
        kw["terminal_target"] = _vector(v, "mobility.terminal_target")
    if (v := get("mobility", "terminal_weight")) is not None:
        kw["terminal_weight"] = _float(v, "mobility.terminal_weight")
        if kw["terminal_weight"] < 0:
            raise ConfigError("mobility.terminal_weight: must be nonnegative")

    def numbered(prefix):
        secs = [s for s in cp.sections() if s.startswith(prefix + ".")]
        return sorted(secs, key=lambda s: int(s.split(".")[1]))

    hazards = []
    for sec in numbered("hazard"):
        h = cp[sec]
        try:
            hazards.append(HazardBump(amplitude=_float(h.get("amplitude", "0"), f"{sec}.amplitude"),
                                      center=_vector(h.get("center", "0.5, 0.5"), f"{sec}.center", 2),
                                      width=_float(h.get("width", "0.1"), f"{sec}.width")))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{sec}: {exc}") from None
    kw["hazard"] = tuple(hazards)

    sensors = []
    for sec in numbered("sensor"):
        s = cp[sec]
        if "init_state" not in s:
            raise ConfigError(f"{sec}.init_state: missing")
        args = {"init_state": _vector(s["init_state"], f"{sec}.init_state")}
        for key in ("footprint_radius", "noise_var", "guidance_penalty"):
            if key in s:
                args[key] = _float(s[key], f"{sec}.{key}")
        for key in ("dyn_matrix", "input_matrix"):
            if key in s:
                args[key] = _matrix(s[key], f"{sec}.{key}")
        if "position_rows" in s:
            rows = tuple(_int(t, f"{sec}.position_rows") for t in s["position_rows"].split(","))
            if len(rows) != 2:
                raise ConfigError(f"{sec}.position_rows: expected 2 indices")
            args["position_rows"] = rows
        if "drift_in_flow" in s:
            args["drift_in_flow"] = _bool(s["drift_in_flow"], f"{sec}.drift_in_flow")
        try:
            sensors.append(SensorSpec(**args))
        except ValueError as exc:
            raise ConfigError(f"{sec}: {exc}") from None
    kw["sensors"] = tuple(sensors)
    return ScenarioSpec(**kw)


def loads(text, source="<string>"):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"parse error: {exc}") from None
    return _build(cp)


def load_scenario(path):
    """Read and validate a scenario file; missing keys take the documented defaults."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    spec = loads(text, source=str(path))
    env = os.environ.get(SEED_ENV)
    if env:
        spec = spec.evolve(seed=_int(env, SEED_ENV))
    return spec
