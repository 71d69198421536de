"""JSON run configuration, validated with pydantic.

Every block maps onto library objects; :func:`load_config` validates the
whole file up front so a bad key or value fails before any computation.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import warnings
from importlib import resources
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .analysis import Box
from .dynamics import BeamSpec, World
from .geometry import GeometryError, LatticeSpec, WaveguideGeometry
from .optics import Evanescent, OpticalConfig, PotentialField
from .sampling import GridSpec

Axis = Union[float, tuple[float, float, int]]


class ConfigError(ValueError):
    """Invalid configuration; the message carries dotted field paths."""


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class GeometryBlock(_Block):
    a: float = Field(1.0, description="aperture radius")
    d: float = Field(3.0, description="plate separation")
    wavelength: Optional[float] = Field(None, alias="lambda", description="free-space wavelength (hole mode; dot mode uses 2d)")
    E0: float = Field(1.0, description="field amplitude scale")
    mode: Literal["hole", "dot"] = Field("hole", description="hole (TEM wave) or dot (TE01 standing wave)")


class EvanescentBlock(_Block):
    U1: float = Field(..., description="mirror potential at the dielectric surface")
    kappa: float = Field(..., description="field decay constant; the potential decays as exp(-2 kappa y)")
    y0: float = Field(..., description="surface position on the y axis")


class LatticeBlock(_Block):
    centers: list[tuple[float, float]] = Field(..., description="(x, z) centres of the aperture pairs")
    min_spacing: float = Field(0.0, description="minimum allowed pair spacing (at least 4a is enforced)")


class OpticsBlock(_Block):
    detuning: Literal["blue", "red"] = Field("blue", description="blue repels from light, red attracts")
    u0: float = Field(1.0, description="dipole potential scale: U = +-u0 * normalised intensity")
    linewidth_ratio: float = Field(0.0, description="gamma/|detuning| for the scattering diagnostic")
    mass: float = 1.0
    gravity: float = Field(0.0, description="g along +y; the potential is m g y")
    hbar: float = 1.0
    field: Optional[Literal["hole", "dot", "single", "lattice"]] = Field(None, description="field selector (default follows geometry.mode)")
    terms: list[Literal["dipole", "evanescent", "gravity"]] = Field(["dipole"], description="enabled potential terms")
    evanescent: Optional[EvanescentBlock] = None
    lattice: Optional[LatticeBlock] = None


class BeamBlock(_Block):
    count: int = 64
    y_start: Optional[float] = Field(None, description="launch plane (default -(d/2 + 10a))")
    r0: Optional[float] = Field(None, description="beam radius, must be below a (default 0.2a)")
    speed: float = 10.0
    sigma_v: float = Field(0.0, description="transverse velocity spread")
    seed: int = 0
    distribution: Literal["disc", "ring"] = "disc"
    low_discrepancy: bool = False


class DynamicsBlock(_Block):
    beam: BeamBlock = BeamBlock()
    dt: Optional[float] = Field(None, description="RK4 step (default 0.01 a / speed)")
    t_max: Optional[float] = Field(None, description="time limit (default 2 x box length / speed)")
    box_half_width: Optional[float] = Field(None, description="transverse half width of the tracing box (default 5a)")
    y_exit: Optional[float] = Field(None, description="upper face of the tracing box (default d/2 + 10a)")
    scan: Optional[tuple[float, float, int]] = Field(None, description="focal scan (y_lo, y_hi, n) (default y_exit .. y_exit + 400a, 400)")
    record_every: int = Field(10, description="trajectory sampling stride for CSV output")


class TrapBlock(_Block):
    seeds: list[tuple[float, float, float]] = Field([(0.0, 0.0, 0.0)], description="Newton seeds")
    center: tuple[float, float, float] = Field((0.0, 0.0, 0.0), description="centre of the search box")
    half_widths: Optional[tuple[float, float, float]] = Field(None, description="search box half widths (default 3d, 0.45d, 3d)")
    max_iter: int = 100
    bound_periods: float = Field(0.0, description="if > 0, trace an atom from the minimum for this many slowest periods")
    bound_offset: float = Field(0.05, description="initial displacement of that atom, in units of a")


class GridBlock(_Block):
    x: Optional[Axis] = Field(None, description="fixed value or [min, max, count] (default [-2d, 2d, 101])")
    y: Optional[Axis] = Field(None, description="fixed value or [min, max, count] (default [-1.5d, 1.5d, 101])")
    z: Optional[Axis] = Field(None, description="fixed value or [min, max, count] (default 0)")
    jitter: bool = Field(True, description="nudge nodes off the aperture rims")


class OutputBlock(_Block):
    dir: str = Field("out", description="output directory")
    grid: GridBlock = GridBlock()
    isoline_levels: list[float] = Field([], description="potential levels for hole-map isolines")
    single: bool = Field(False, description="dot-map: also write the single-aperture grid")
    trajectories: bool = Field(False, description="focus: write per-atom trajectories")


class SweepBlock(_Block):
    parameter: str = Field(..., description="dotted config key, or 'ka' (dot mode)")
    values: list[float] = Field(..., description="values to run, no duplicates")
    command: Literal["hole-map", "dot-map", "trap", "focus"] = "dot-map"

    @field_validator("values")
    @classmethod
    def _unique(cls, v):
        if not v:
            raise ValueError("sweep needs at least one value")
        if len(set(v)) != len(v):
            raise ValueError("duplicate sweep values")
        return v


class UnitsBlock(_Block):
    length_m: Optional[float] = Field(None, description="metres per length unit (adds SI columns to reports)")
    energy_J: Optional[float] = Field(None, description="joules per energy unit")
    mass_kg: Optional[float] = Field(None, description="kilograms per mass unit")

    @model_validator(mode="after")
    def _all_or_none(self):
        given = [v is not None for v in (self.length_m, self.energy_J, self.mass_kg)]
        if any(given) and not all(given):
            raise ValueError("give all of length_m, energy_J, mass_kg or none")
        if all(given) and min(self.length_m, self.energy_J, self.mass_kg) <= 0:
            raise ValueError("unit scales must be positive")
        return self

    @property
    def enabled(self):
        return self.length_m is not None

    @property
    def time_s(self):
        return self.length_m * math.sqrt(self.mass_kg / self.energy_J)


class RunConfig(_Block):
    geometry: GeometryBlock = GeometryBlock()
    optics: OpticsBlock = OpticsBlock()
    dynamics: DynamicsBlock = DynamicsBlock()
    trap: TrapBlock = TrapBlock()
    output: OutputBlock = OutputBlock()
    sweep: Optional[SweepBlock] = None
    units: UnitsBlock = UnitsBlock()
    threads: Optional[int] = Field(None, description="worker threads (default: all cores); never changes results")

    # ---- library objects -------------------------------------------------

    def build_geometry(self) -> WaveguideGeometry:
        g = self.geometry
        return WaveguideGeometry(a=g.a, d=g.d, wavelength=g.wavelength, E0=g.E0, mode=g.mode)

    def build_optics(self) -> OpticalConfig:
        o = self.optics
        ev = Evanescent(o.evanescent.U1, o.evanescent.kappa, o.evanescent.y0) if o.evanescent else None
        return OpticalConfig(
            detuning_sign=1 if o.detuning == "blue" else -1, u0=o.u0, linewidth_ratio=o.linewidth_ratio,
            mass=o.mass, gravity=o.gravity, hbar=o.hbar, evanescent=ev, terms=frozenset(o.terms),
        )

    @property
    def selector(self):
        return self.optics.field or self.geometry.mode

    def build_potential(self) -> PotentialField:
        lat = None
        if self.optics.lattice is not None:
            lat = LatticeSpec(tuple(self.optics.lattice.centers), self.optics.lattice.min_spacing)
        return PotentialField(self.build_geometry(), self.build_optics(), self.selector, lat)

    def build_grid(self) -> GridSpec:
        g, d = self.output.grid, self.geometry.d
        x = g.x if g.x is not None else (-2 * d, 2 * d, 101)
        y = g.y if g.y is not None else (-1.5 * d, 1.5 * d, 101)
        z = g.z if g.z is not None else 0.0
        return GridSpec(x=x, y=y, z=z, jitter=g.jitter)

    def build_beam(self) -> BeamSpec:
        b, g = self.dynamics.beam, self.geometry
        y0 = b.y_start if b.y_start is not None else -(0.5 * g.d + 10 * g.a)
        r0 = b.r0 if b.r0 is not None else 0.2 * g.a
        return BeamSpec(b.count, y0, r0, b.speed, b.sigma_v, b.seed, b.distribution, b.low_discrepancy)

    def y_exit(self):
        g = self.geometry
        return self.dynamics.y_exit if self.dynamics.y_exit is not None else 0.5 * g.d + 10 * g.a

    def build_world(self, potential=None) -> World:
        g, dyn = self.geometry, self.dynamics
        beam = self.build_beam()
        w = dyn.box_half_width if dyn.box_half_width is not None else 5 * g.a
        lo = (-w, beam.y_start - 0.5 * g.a, -w)
        hi = (w, self.y_exit(), w)
        return World(potential or self.build_potential(), Box(lo, hi))

    def dt(self):
        if self.dynamics.dt is not None:
            return self.dynamics.dt
        return 0.01 * self.geometry.a / self.dynamics.beam.speed

    def t_max(self):
        if self.dynamics.t_max is not None:
            return self.dynamics.t_max
        return 2.0 * (self.y_exit() - self.build_beam().y_start) / self.dynamics.beam.speed

    def scan(self):
        if self.dynamics.scan is not None:
            return self.dynamics.scan
        ye = self.y_exit()
        return (ye, ye + 400 * self.geometry.a, 400)

    def trap_box(self) -> Box:
        d = self.geometry.d
        hw = self.trap.half_widths or (3 * d, 0.45 * d, 3 * d)
        return Box.around(self.trap.center, hw)

    def digest(self) -> str:
        """Hash of the effective configuration, ignoring threads and output directory."""
        data = self.model_dump(mode="json", by_alias=True)
        data.pop("threads", None)
        data["output"].pop("dir", None)
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @model_validator(mode="after")
    def _domain_checks(self):
        checks = [
            ("geometry", self.build_geometry),
            ("optics", self.build_potential),
            ("output.grid", self.build_grid),
            ("dynamics.beam", lambda: self.build_beam().validate(self.build_geometry())),
        ]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for where, fn in checks:
                try:
                    fn()
                except (ValueError, GeometryError) as e:
                    raise ValueError(f"{where}: {e}") from None
        if self.dynamics.dt is not None and not self.dynamics.dt > 0:
            raise ValueError("dynamics.dt: must be positive")
        if self.threads is not None and self.threads < 1:
            raise ValueError("threads: must be >= 1")
        if self.sweep is not None and self.sweep.parameter != "ka":
            try:
                _get_path(self.model_dump(by_alias=True), self.sweep.parameter)
            except KeyError:
                raise ValueError(f"sweep.parameter: unknown key {self.sweep.parameter!r}") from None
        return self


def _get_path(d, dotted):
    cur = d
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            raise KeyError(dotted)
        cur = cur[part]
    return cur


def _set_path(d, dotted, value):
    parts = dotted.split(".")
    cur = d
    for part in parts[:-1]:
        if cur.get(part) is None:
            cur[part] = {}
        cur = cur[part]
    cur[parts[-1]] = value


def with_parameter(raw: dict, parameter: str, value: float) -> dict:
    """Copy of a raw config dict with one swept parameter applied."""
    out = copy.deepcopy(raw)
    out.pop("sweep", None)
    if parameter == "ka":
        geo = out.get("geometry", {})
        if geo.get("mode", "hole") == "dot":
            length = 2 * geo.get("d", GeometryBlock().d)
        else:
            length = geo.get("lambda", geo.get("wavelength"))
            if length is None:
                raise ConfigError("sweep.parameter: 'ka' needs geometry.lambda in hole mode")
        _set_path(out, "geometry.a", value * length / (2 * math.pi))
    else:
        _set_path(out, parameter, value)
    return out


def _format_error(e: ValidationError) -> str:
    lines = []
    for err in e.errors():
        loc = ".".join(str(p) for p in err["loc"])
        msg = err["msg"]
        if msg.startswith("Value error, "):
            msg = msg[len("Value error, "):]
        lines.append(f"{loc}: {msg}" if loc else msg)
    return "\n".join(lines)


def parse_config(raw: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_format_error(e)) from None


BUNDLED = ("fig2a", "fig2b", "fig3", "lens_weak", "lens_dot", "trap_dot", "fig4")


def resolve_path(path) -> Path:
    """A file path, or the name of a bundled example config."""
    p = Path(path)
    if p.exists():
        return p
    name = p.name.removesuffix(".json").removesuffix(".config")
    if name in BUNDLED:
        return Path(str(resources.files("photondot") / "configs" / f"{name}.json"))
    return p


def read_raw(path) -> dict:
    p = resolve_path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise OSError(f"cannot read config {p}: {e.strerror or e}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}:{e.lineno}: invalid JSON: {e.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: top level must be a JSON object")
    return raw


def load_config(path) -> RunConfig:
    return parse_config(read_raw(path))


def describe_keys(model=RunConfig, prefix="") -> list[str]:
    """One line per config key with its default, for ``--help``."""
    lines = []
    for name, f in model.model_fields.items():
        key = prefix + (f.alias or name)
        ann = f.annotation
        sub = _submodel(ann)
        if sub is not None:
            lines.extend(describe_keys(sub, key + "."))
            continue
        default = "required" if f.is_required() else json.dumps(_plain(f.default))
        desc = f"  ({f.description})" if f.description else ""
        lines.append(f"  {key} = {default}{desc}")
    return lines


def _submodel(ann):
    if isinstance(ann, type) and issubclass(ann, BaseModel):
        return ann
    for arg in getattr(ann, "__args__", ()) or ():
        if isinstance(arg, type) and issubclass(arg, BaseModel):
            return arg
    return None


def _plain(v):
    if isinstance(v, BaseModel):
        return v.model_dump()
    if isinstance(v, tuple):
        return list(v)
    return v
