"""Versioned YAML run configuration.

Example (``schema: 1``)::

    schema: 1
    seed: 0
    output_dir: out
    domain: {source: square, nx: 30, ny: 30, cell_size: 10.0}
    model: {type: m2, beta_v: 15.0, beta_h: 15.0, D: 7502.5, epsilon: 0.02}
    initial: {S_h: 300, S_v: 300, introduction: {point: [150, 150], compartment: I_v, amount: 1.0}}
    solver: {t_end: 100, dt: 0.01, snapshot_every: 1.0, scheme: strang}
    impulse: {period: 1.0, reset_S_v: 300}
    gsa: {M: 300, ranges: {beta_v: [5, 25], beta_h: [5, 25], D: [5, 15000]}}

Parsing is strict: unknown keys are errors, and every problem found is
reported together rather than stopping at the first.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .geometry import (
    INTRODUCTION_POINT,
    SpatialDomain,
    build_domain,
    mediterranean_arc,
)
from .pde_core import COMPARTMENTS, Formulation, ModelParams, Scheme, StateFields
from .scenarios import ConfigError, ImpulseSchedule, SimulationConfig, steps_between

SCHEMA_VERSION = 1
GSA_PARAMS = ("beta_v", "beta_h", "D")


class ConfigValidationError(ConfigError):
    """All validation problems of one configuration."""

    def __init__(self, errors: list[str]) -> None:
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class DomainSpec:
    """``source`` is one of ``builtin`` (``name: mediterranean_arc``),
    ``square`` (``nx`` by ``ny`` cells), ``polygon`` (``vertices``) or
    ``ascii`` (``path`` to a mask file)."""

    source: str = "square"
    name: str | None = None
    nx: int | None = None
    ny: int | None = None
    vertices: tuple[tuple[float, float], ...] | None = None
    path: str | None = None
    cell_size: float | None = None


@dataclass(frozen=True)
class ModelSpec:
    type: str = "m1"
    beta_v: float = 15.0
    beta_h: float = 15.0
    D: float = 7502.5
    epsilon: float = 0.02
    formulation: str = "nonfickian"


@dataclass(frozen=True)
class IntroductionSpec:
    point: tuple[float, float] | None = None
    compartment: str = "I_v"
    amount: float = 1.0


@dataclass(frozen=True)
class InitialSpec:
    S_h: float = 300.0
    E_h: float = 0.0
    I_h: float = 0.0
    S_v: float = 300.0
    I_v: float = 0.0
    introduction: IntroductionSpec | None = field(default_factory=IntroductionSpec)


@dataclass(frozen=True)
class SolverSpec:
    t_end: float = 100.0
    dt: float = 0.01
    snapshot_every: float = 1.0
    scheme: str = "strang"


@dataclass(frozen=True)
class ImpulseSpec:
    period: float = 1.0
    reset_S_v: float = 300.0


@dataclass(frozen=True)
class GsaSpec:
    M: int = 300
    ranges: tuple[tuple[str, float, float], ...] = (
        ("beta_v", 5.0, 25.0),
        ("beta_h", 5.0, 25.0),
        ("D", 5.0, 15000.0),
    )
    compartments: tuple[str, ...] = ("I_h", "I_v")
    times: tuple[float, ...] = (10.0, 20.0, 30.0, 50.0, 100.0)
    n_map_points: int = 600
    transect_direction: tuple[float, float] = (-1.0, 0.0)
    transect_points: int = 40
    n_classes: int = 4
    grid_resolution: float | None = None
    batch_size: int = 50


@dataclass(frozen=True)
class SpectralSpec:
    """``potential`` is a constant, or ``pressure`` for ``beta_h * N``."""

    potential: float | str = "pressure"
    tol: float = 1e-10


@dataclass(frozen=True)
class EquilibriumSpec:
    C_star: float | None = None


@dataclass(frozen=True)
class RunConfig:
    schema: int = SCHEMA_VERSION
    seed: int = 0
    output_dir: str = "out"
    domain: DomainSpec = field(default_factory=DomainSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    initial: InitialSpec = field(default_factory=InitialSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    impulse: ImpulseSpec | None = None
    gsa: GsaSpec | None = None
    spectral: SpectralSpec | None = None
    equilibrium: EquilibriumSpec | None = None
    base_dir: str | None = field(default=None, compare=False)

    def replace(self, **changes) -> "RunConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return RunConfig(**values)


# --------------------------------------------------------------------------
# parsing


class _Collector:
    def __init__(self) -> None:
        self.errors: list[str] = []

    def add(self, msg: str) -> None:
        self.errors.append(msg)


def _number(raw, where: str, errs: _Collector, integer: bool = False):
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        errs.add(f"{where}: expected a number, got {raw!r}")
        return None
    if integer:
        if float(raw) != int(raw):
            errs.add(f"{where}: expected an integer, got {raw!r}")
            return None
        return int(raw)
    if not math.isfinite(raw):
        errs.add(f"{where}: must be finite")
        return None
    return float(raw)


def _section(raw, cls, where: str, errs: _Collector, convert) -> Any:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        errs.add(f"{where}: expected a mapping")
        return None
    known = {f.name for f in fields(cls)}
    for key in raw:
        if key not in known:
            errs.add(f"{where}: unknown key {key!r}")
    values = {}
    for f in fields(cls):
        if f.name in raw:
            v = convert(f.name, raw[f.name], f"{where}.{f.name}")
            if v is not _INVALID:
                values[f.name] = v
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        errs.add(f"{where}: {exc}")
        return None


_INVALID = object()


def _parse_domain(raw, errs: _Collector) -> DomainSpec | None:
    def conv(name, v, where):
        if name in ("source", "name", "path"):
            if not isinstance(v, str):
                errs.add(f"{where}: expected a string")
                return _INVALID
            return v
        if name in ("nx", "ny"):
            n = _number(v, where, errs, integer=True)
            return _INVALID if n is None else n
        if name == "cell_size":
            x = _number(v, where, errs)
            return _INVALID if x is None else x
        if name == "vertices":
            try:
                pts = tuple((float(a), float(b)) for a, b in v)
            except (TypeError, ValueError):
                errs.add(f"{where}: expected a list of [x, y] pairs")
                return _INVALID
            return pts
        return v

    spec = _section(raw, DomainSpec, "domain", errs, conv)
    if spec is None:
        return None
    if spec.source not in ("builtin", "square", "polygon", "ascii"):
        errs.add(f"domain.source: unknown source {spec.source!r}")
    if spec.source == "builtin" and spec.name not in (None, "mediterranean_arc"):
        errs.add(f"domain.name: unknown builtin domain {spec.name!r}")
    if spec.source == "square":
        for k in ("nx", "ny"):
            v = getattr(spec, k)
            if v is None or v < 1:
                errs.add(f"domain.{k}: square domain needs a positive {k}")
    if spec.source == "polygon" and (spec.vertices is None or len(spec.vertices) < 3):
        errs.add("domain.vertices: polygon needs at least 3 vertices")
    if spec.source in ("square", "polygon") and spec.cell_size is None:
        errs.add(f"domain.cell_size: required for a {spec.source} domain")
    if spec.source == "ascii" and spec.path is None:
        errs.add("domain.path: required for an ascii mask")
    if spec.cell_size is not None and not spec.cell_size > 0:
        errs.add("domain.cell_size: must be positive")
    return spec


def _parse_model(raw, errs: _Collector) -> ModelSpec | None:
    def conv(name, v, where):
        if name in ("type", "formulation"):
            if not isinstance(v, str):
                errs.add(f"{where}: expected a string")
                return _INVALID
            return v
        x = _number(v, where, errs)
        return _INVALID if x is None else x

    spec = _section(raw, ModelSpec, "model", errs, conv)
    if spec is None:
        return None
    if spec.type not in ("m1", "m2"):
        errs.add(f"model.type: expected m1 or m2, got {spec.type!r}")
    if spec.formulation not in {f.value for f in Formulation}:
        errs.add(f"model.formulation: unknown formulation {spec.formulation!r}")
    if not spec.D > 0:
        errs.add("model.D: nonpositive diffusion")
    for k in ("beta_v", "beta_h"):
        if getattr(spec, k) < 0:
            errs.add(f"model.{k}: must be nonnegative")
    if not spec.epsilon > 0:
        errs.add("model.epsilon: must be positive")
    return spec


def _parse_initial(raw, errs: _Collector) -> InitialSpec | None:
    def conv_intro(name, v, where):
        if name == "point":
            try:
                a, b = v
                return (float(a), float(b))
            except (TypeError, ValueError):
                errs.add(f"{where}: expected [x, y]")
                return _INVALID
        if name == "compartment":
            if v not in ("I_v", "E_h"):
                errs.add(f"{where}: introduction compartment must be I_v or E_h")
                return _INVALID
            return v
        x = _number(v, where, errs)
        if x is not None and x < 0:
            errs.add(f"{where}: must be nonnegative")
        return _INVALID if x is None else x

    def conv(name, v, where):
        if name == "introduction":
            if v is None:
                return None
            intro = _section(v, IntroductionSpec, where, errs, conv_intro)
            return _INVALID if intro is None else intro
        x = _number(v, where, errs)
        if x is not None and x < 0:
            errs.add(f"{where}: initial densities must be nonnegative")
        return _INVALID if x is None else x

    return _section(raw, InitialSpec, "initial", errs, conv)


def _parse_solver(raw, errs: _Collector) -> SolverSpec | None:
    def conv(name, v, where):
        if name == "scheme":
            if v not in {s.value for s in Scheme}:
                errs.add(f"{where}: unknown scheme {v!r}")
                return _INVALID
            return v
        x = _number(v, where, errs)
        if x is not None and not x > 0:
            errs.add(f"{where}: must be positive")
        return _INVALID if x is None else x

    spec = _section(raw, SolverSpec, "solver", errs, conv)
    if spec is None:
        return None
    for what, span in (("t_end", spec.t_end), ("snapshot_every", spec.snapshot_every)):
        if span > 0 and spec.dt > 0:
            try:
                steps_between(span, spec.dt, what)
            except ConfigError as exc:
                errs.add(f"solver: {exc}")
    if spec.snapshot_every > 0 and spec.dt > 0 and spec.t_end > 0:
        try:
            if steps_between(spec.t_end, spec.dt) % steps_between(spec.snapshot_every, spec.dt):
                errs.add("solver: snapshot_every must divide t_end")
        except ConfigError:
            pass
    return spec


def _parse_impulse(raw, errs: _Collector) -> ImpulseSpec | None:
    def conv(name, v, where):
        x = _number(v, where, errs)
        if x is not None and (x < 0 or (name == "period" and x == 0)):
            errs.add(f"{where}: must be positive" if name == "period" else f"{where}: must be nonnegative")
        return _INVALID if x is None else x

    return _section(raw, ImpulseSpec, "impulse", errs, conv)


def _parse_gsa(raw, errs: _Collector) -> GsaSpec | None:
    def conv(name, v, where):
        if name == "ranges":
            if not isinstance(v, dict) or not v:
                errs.add(f"{where}: expected a mapping parameter -> [low, high]")
                return _INVALID
            out = []
            for pname, bounds in v.items():
                if pname not in GSA_PARAMS:
                    errs.add(f"{where}: unknown parameter {pname!r}")
                    continue
                try:
                    lo, hi = map(float, bounds)
                except (TypeError, ValueError):
                    errs.add(f"{where}.{pname}: expected [low, high]")
                    continue
                if not lo <= hi:
                    errs.add(f"{where}.{pname}: low exceeds high")
                if pname == "D" and not lo > 0:
                    errs.add(f"{where}.D: nonpositive diffusion")
                if pname != "D" and lo < 0:
                    errs.add(f"{where}.{pname}: must be nonnegative")
                out.append((pname, lo, hi))
            return tuple(out)
        if name == "compartments":
            if not isinstance(v, list) or not v or any(c not in COMPARTMENTS for c in v):
                errs.add(f"{where}: expected a list of compartments from {COMPARTMENTS}")
                return _INVALID
            return tuple(v)
        if name == "times":
            if not isinstance(v, list) or not v:
                errs.add(f"{where}: expected a nonempty list")
                return _INVALID
            ts = [_number(x, where, errs) for x in v]
            return _INVALID if None in ts else tuple(ts)
        if name == "transect_direction":
            try:
                a, b = v
                d = (float(a), float(b))
            except (TypeError, ValueError):
                errs.add(f"{where}: expected [dx, dy]")
                return _INVALID
            if d == (0.0, 0.0):
                errs.add(f"{where}: direction must be nonzero")
            return d
        if name == "grid_resolution":
            if v is None:
                return None
            x = _number(v, where, errs)
            if x is not None and not x > 0:
                errs.add(f"{where}: must be positive")
            return _INVALID if x is None else x
        n = _number(v, where, errs, integer=True)
        return _INVALID if n is None else n

    spec = _section(raw, GsaSpec, "gsa", errs, conv)
    if spec is None:
        return None
    if spec.M < 2:
        errs.add("gsa.M: must be at least 2")
    if spec.n_map_points < 1 or spec.transect_points < 2:
        errs.add("gsa: n_map_points must be >= 1 and transect_points >= 2")
    if spec.n_classes < 1:
        errs.add("gsa.n_classes: must be positive")
    if spec.batch_size < 1:
        errs.add("gsa.batch_size: must be positive")
    return spec


def _parse_spectral(raw, errs: _Collector) -> SpectralSpec | None:
    def conv(name, v, where):
        if name == "potential":
            if v == "pressure":
                return v
            x = _number(v, where, errs)
            if x is not None and x < 0:
                errs.add(f"{where}: must be nonnegative")
            return _INVALID if x is None else x
        x = _number(v, where, errs)
        return _INVALID if x is None else x

    return _section(raw, SpectralSpec, "spectral", errs, conv)


def _parse_equilibrium(raw, errs: _Collector) -> EquilibriumSpec | None:
    def conv(name, v, where):
        if v is None:
            return None
        x = _number(v, where, errs)
        if x is not None and not x > 0:
            errs.add(f"{where}: must be positive")
        return _INVALID if x is None else x

    return _section(raw, EquilibriumSpec, "equilibrium", errs, conv)


_SECTIONS = {
    "domain": _parse_domain,
    "model": _parse_model,
    "initial": _parse_initial,
    "solver": _parse_solver,
    "impulse": _parse_impulse,
    "gsa": _parse_gsa,
    "spectral": _parse_spectral,
    "equilibrium": _parse_equilibrium,
}
_REQUIRED = ("schema", "domain", "model", "solver")


def config_from_dict(raw: Any, base_dir: str | Path | None = None) -> RunConfig:
    """Validate a parsed YAML document; raises :class:`ConfigValidationError`
    listing every problem."""
    errs = _Collector()
    if not isinstance(raw, dict):
        raise ConfigValidationError(["configuration must be a mapping"])
    for key in raw:
        if key not in _SECTIONS and key not in ("schema", "seed", "output_dir"):
            errs.add(f"unknown key {key!r}")
    for key in _REQUIRED:
        if key not in raw:
            errs.add(f"missing required key {key!r}")
    if "schema" in raw and raw["schema"] != SCHEMA_VERSION:
        errs.add(f"unsupported schema version {raw['schema']!r} (expected {SCHEMA_VERSION})")
    values: dict[str, Any] = {}
    if "seed" in raw:
        s = _number(raw["seed"], "seed", errs, integer=True)
        if s is not None and s < 0:
            errs.add("seed: must be nonnegative")
        values["seed"] = s
    if "output_dir" in raw:
        if not isinstance(raw["output_dir"], str):
            errs.add("output_dir: expected a string")
        else:
            values["output_dir"] = raw["output_dir"]
    for key, parse in _SECTIONS.items():
        if key in raw:
            values[key] = parse(raw[key], errs)

    model, solver, impulse = values.get("model"), values.get("solver"), values.get("impulse")
    if model is not None and model.type == "m2" and "impulse" not in raw:
        errs.add("impulse: required for model m2")
    if model is not None and model.type == "m1" and raw.get("impulse") is not None:
        errs.add("impulse: not allowed for model m1")
    if solver is not None and impulse is not None and impulse.period > 0 and solver.dt > 0:
        try:
            steps_between(impulse.period, solver.dt, "impulse period")
        except ConfigError as exc:
            errs.add(f"impulse: {exc}")
    dom = values.get("domain")
    if dom is not None and dom.source == "ascii" and dom.path is not None:
        p = Path(dom.path)
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        if not p.is_file():
            errs.add(f"domain.path: file not found {dom.path!r}")
    if errs.errors:
        raise ConfigValidationError(errs.errors)
    values["base_dir"] = None if base_dir is None else str(base_dir)
    return RunConfig(**values)


def parse_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigValidationError([f"cannot read {path}: {exc}"]) from exc
    return config_from_dict(raw, base_dir=path.parent)


# --------------------------------------------------------------------------
# serialization


def config_to_dict(config: RunConfig) -> dict:
    out: dict[str, Any] = {"schema": config.schema, "seed": config.seed, "output_dir": config.output_dir}
    for name in _SECTIONS:
        spec = getattr(config, name)
        if spec is None:
            continue
        d = asdict(spec)
        if name == "domain" and d["vertices"] is not None:
            d["vertices"] = [list(v) for v in d["vertices"]]
        if name == "gsa":
            d["ranges"] = {p: [lo, hi] for p, lo, hi in spec.ranges}
            for k in ("compartments", "times", "transect_direction"):
                d[k] = list(d[k])
        if name == "initial" and spec.introduction is not None and spec.introduction.point is not None:
            d["introduction"]["point"] = list(spec.introduction.point)
        out[name] = {k: v for k, v in d.items() if v is not None or name == "initial"}
    return out


def serialize_config(config: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=False)


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(serialize_config(config).encode()).hexdigest()


# --------------------------------------------------------------------------
# construction of solver objects


def sub_seed(seed: int, component: str) -> int:
    """Deterministic per-component seed derived from the top-level seed."""
    key = int.from_bytes(hashlib.sha256(component.encode()).digest()[:4], "little")
    return int(np.random.SeedSequence([seed, key]).generate_state(1)[0])


def make_domain(config: RunConfig) -> SpatialDomain:
    spec = config.domain
    if spec.source == "builtin":
        return build_domain(mediterranean_arc(), spec.cell_size or 10.0)
    if spec.source == "square":
        return SpatialDomain(spec.cell_size, np.ones((spec.ny, spec.nx), dtype=bool))
    if spec.source == "polygon":
        return build_domain([list(spec.vertices)], spec.cell_size)
    p = Path(spec.path)
    if config.base_dir is not None and not p.is_absolute():
        p = Path(config.base_dir) / p
    return build_domain(p, spec.cell_size)


def make_params(config: RunConfig) -> ModelParams:
    m = config.model
    return ModelParams(m.beta_v, m.beta_h, m.D, m.epsilon, Formulation(m.formulation))


def introduction_point(config: RunConfig, domain: SpatialDomain) -> np.ndarray:
    intro = config.initial.introduction
    if intro is not None and intro.point is not None:
        return np.asarray(intro.point, dtype=float)
    if config.domain.source == "builtin":
        return np.asarray(INTRODUCTION_POINT, dtype=float)
    x0, y0, x1, y1 = domain.bounding_box
    return np.array([(x0 + x1) / 2, (y0 + y1) / 2])


def introduction_cell(config: RunConfig, domain: SpatialDomain) -> int:
    return int(domain.nearest_cell(introduction_point(config, domain)[None])[0])


def make_initial(config: RunConfig, domain: SpatialDomain) -> StateFields:
    init = config.initial
    state = StateFields.uniform(domain.n_cells, init.S_h, init.E_h, init.I_h, init.S_v, init.I_v)
    intro = init.introduction
    if intro is not None and intro.amount > 0:
        cell = introduction_cell(config, domain)
        getattr(state, intro.compartment)[cell] += intro.amount
    return state


def make_schedule(config: RunConfig) -> ImpulseSchedule | None:
    if config.impulse is None:
        return None
    return ImpulseSchedule(reset_S_v=config.impulse.reset_S_v, period=config.impulse.period)


def make_simulation(config: RunConfig, domain: SpatialDomain | None = None) -> SimulationConfig:
    domain = domain if domain is not None else make_domain(config)
    s = config.solver
    return SimulationConfig(
        domain=domain,
        params=make_params(config),
        initial=make_initial(config, domain),
        t_end=s.t_end,
        dt=s.dt,
        snapshot_every=s.snapshot_every,
        scheme=Scheme(s.scheme),
        impulse=make_schedule(config),
    )
