"""Mechanical potentials seen by a far-detuned two-level atom.

Energies are in units of the configured ``u0`` scale (default 1), lengths in
the geometry's units.  The dipole term is linear in the normalised intensity
``s``::

    U_dip = sign(detuning) * u0 * s

so blue detuning (+1) pushes atoms out of bright regions and red (-1) pulls
them in.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import fields
from .geometry import GeometryError, LatticeSpec, WaveguideGeometry, as_points, scalar_or_array

Selector = Literal["hole", "dot", "single", "lattice"]
TERMS = ("dipole", "evanescent", "gravity")


@dataclass(frozen=True)
class Evanescent:
    """Repulsive evanescent-wave mirror, surface at ``y0`` below the waveguide."""

    U1: float
    kappa: float
    y0: float

    def __post_init__(self):
        if not self.U1 > 0:
            raise ValueError("evanescent U1 must be positive")
        if not self.kappa > 0:
            raise ValueError("evanescent kappa must be positive")


def evanescent_kappa(wavelength, n, theta):
    """Field decay constant of a totally internally reflected wave (intensity decays as ``2*kappa``)."""
    arg = (n * math.sin(theta)) ** 2 - 1.0
    if arg <= 0:
        raise ValueError("no total internal reflection: n*sin(theta) <= 1")
    return 2.0 * math.pi / wavelength * math.sqrt(arg)


@dataclass(frozen=True)
class OpticalConfig:
    detuning_sign: int = 1
    u0: float = 1.0
    linewidth_ratio: float = 0.0
    mass: float = 1.0
    gravity: float = 0.0
    hbar: float = 1.0
    evanescent: Evanescent | None = None
    terms: frozenset = field(default_factory=lambda: frozenset({"dipole"}))

    def __post_init__(self):
        if self.detuning_sign not in (1, -1):
            raise ValueError("detuning_sign must be +1 (blue) or -1 (red)")
        if not self.u0 > 0:
            raise ValueError("u0 must be positive")
        if self.linewidth_ratio < 0:
            raise ValueError("linewidth_ratio must be >= 0")
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not self.hbar > 0:
            raise ValueError("hbar must be positive")
        terms = frozenset(self.terms)
        bad = terms - set(TERMS)
        if bad:
            raise ValueError(f"unknown potential terms {sorted(bad)}")
        if not terms:
            raise ValueError("at least one potential term must be enabled")
        if "evanescent" in terms and self.evanescent is None:
            raise ValueError("evanescent term enabled without evanescent parameters")
        object.__setattr__(self, "terms", terms)
        if self.linewidth_ratio >= 0.2:
            warnings.warn(
                f"linewidth ratio {self.linewidth_ratio} is not far-detuned; the linear dipole law is rough",
                stacklevel=3,
            )

    def replace(self, **kw) -> "OpticalConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return OpticalConfig(**d)


def normalized_intensity(p, selector: Selector, g: WaveguideGeometry, lattice: LatticeSpec | None = None):
    """Intensity scaled so the unperturbed reference value is 1.

    hole: ``|E|^2/E0^2`` (the uniform gap field); dot-like selectors:
    ``<E^2>/2`` (the bare standing wave at mid-gap).
    """
    if selector == "hole":
        return fields.hole_intensity(p, g)
    if selector == "dot":
        iv = fields.dot_intensity(p, g)
    elif selector == "single":
        iv = fields.single_aperture_dot_intensity(p, g)
    elif selector == "lattice":
        if lattice is None:
            raise GeometryError("lattice selector needs a LatticeSpec")
        iv = fields.lattice_intensity(p, g, lattice)
    else:
        raise ValueError(f"unknown field selector {selector!r}")
    return scalar_or_array(0.5 * np.asarray(iv.w))


def dipole_potential(p, cfg: OpticalConfig, selector: Selector, g: WaveguideGeometry, lattice=None):
    s = normalized_intensity(p, selector, g, lattice)
    return scalar_or_array(cfg.detuning_sign * cfg.u0 * np.asarray(s))


def evanescent_potential(p, cfg: OpticalConfig):
    """``U1 * exp(-2 kappa (y - y0))``; the same expression is continued below ``y0``."""
    if cfg.evanescent is None or "evanescent" not in cfg.terms:
        warnings.warn("evanescent term is disabled; contributing 0", stacklevel=2)
        return scalar_or_array(np.zeros(as_points(p).shape[:-1]))
    ev = cfg.evanescent
    y = as_points(p)[..., 1]
    return scalar_or_array(ev.U1 * np.exp(-2.0 * ev.kappa * (y - ev.y0)))


def gravity_potential(p, cfg: OpticalConfig):
    y = as_points(p)[..., 1]
    return scalar_or_array(cfg.mass * cfg.gravity * y)


@dataclass(frozen=True)
class PotentialField:
    """Total potential of one geometry + optical configuration + field selector."""

    geometry: WaveguideGeometry
    config: OpticalConfig
    selector: Selector = "hole"
    lattice: LatticeSpec | None = None

    def __post_init__(self):
        want = "hole" if self.selector == "hole" else "dot"
        if self.geometry.mode != want:
            raise GeometryError(f"selector {self.selector!r} needs a {want}-mode geometry")
        if self.selector == "lattice":
            if self.lattice is None:
                raise GeometryError("lattice selector needs a LatticeSpec")
            self.lattice.check(self.geometry)

    @property
    def length_scale(self) -> float:
        return self.geometry.a

    def intensity(self, p):
        return normalized_intensity(p, self.selector, self.geometry, self.lattice)

    def dipole(self, p):
        return dipole_potential(p, self.config, self.selector, self.geometry, self.lattice)

    def terms(self, p) -> dict:
        out = {}
        if "dipole" in self.config.terms:
            out["dipole"] = np.asarray(self.dipole(p))
        if "evanescent" in self.config.terms:
            out["evanescent"] = np.asarray(evanescent_potential(p, self.config))
        if "gravity" in self.config.terms:
            out["gravity"] = np.asarray(gravity_potential(p, self.config))
        return out

    def __call__(self, p):
        t = self.terms(p)
        total = None
        for name in TERMS:
            if name in t:
                total = t[name] if total is None else total + t[name]
        return scalar_or_array(total)

    def scattering_rate(self, p):
        """Photon scattering rate ``gamma * |U_dip| / hbar`` (diagnostic only)."""
        cfg = self.config
        if cfg.linewidth_ratio == 0 or "dipole" not in cfg.terms:
            return scalar_or_array(np.zeros(as_points(p).shape[:-1]))
        return scalar_or_array(cfg.linewidth_ratio * np.abs(np.asarray(self.dipole(p))) / cfg.hbar)

    def near_rim(self, p):
        g = self.geometry
        if self.selector != "lattice":
            return fields.rim_mask(p, g)
        p = as_points(p)
        m = np.zeros(p.shape[:-1], dtype=bool)
        for cx, cz in self.lattice.centers:
            m |= np.asarray(fields.rim_mask(p - np.array([cx, 0.0, cz]), g))
        return scalar_or_array(m)
