"""Waveguide geometry and coordinate helpers.

The plates sit at ``y = +d/2`` and ``y = -d/2``; ``y`` is the plate normal and
the coaxial apertures share the ``y`` axis.  The cylindrical radius is
``r = sqrt(x**2 + z**2)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

Mode = Literal["hole", "dot"]

#: half-width of the exclusion ring around the aperture rim, in units of ``a``
EPS_RIM = 1e-6


class GeometryError(ValueError):
    pass


class QuasistaticWarning(UserWarning):
    pass


@dataclass(frozen=True)
class WaveguideGeometry:
    """Two parallel ideally conducting plates with one coaxial aperture each.

    For ``mode="dot"`` the plate gap is half a wavelength, so ``wavelength``
    is always derived as ``2*d`` (any value passed in is overridden).
    """

    a: float
    d: float
    wavelength: float | None = None
    E0: float = 1.0
    mode: Mode = "hole"

    def __post_init__(self):
        if self.mode not in ("hole", "dot"):
            raise GeometryError(f"unknown mode {self.mode!r}")
        for name in ("a", "d", "E0"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise GeometryError(f"{name} must be positive and finite, got {v}")
        if self.mode == "dot":
            if self.wavelength is not None and not math.isclose(self.wavelength, 2 * self.d):
                warnings.warn(
                    f"dot mode derives wavelength = 2d = {2 * self.d}; ignoring {self.wavelength}",
                    QuasistaticWarning,
                    stacklevel=3,
                )
            object.__setattr__(self, "wavelength", 2.0 * self.d)
            if self.a >= self.d:
                raise GeometryError(f"dot mode requires a < d (a={self.a}, d={self.d})")
        else:
            if self.wavelength is None:
                raise GeometryError("hole mode needs an explicit wavelength")
            if not (math.isfinite(self.wavelength) and self.wavelength > 0):
                raise GeometryError(f"wavelength must be positive, got {self.wavelength}")
            if self.a > self.d:
                raise GeometryError(f"hole mode requires a <= d (a={self.a}, d={self.d})")
            if self.a == self.d:
                warnings.warn(
                    "a == d: mutual aperture coupling is not negligible; superposition is approximate",
                    QuasistaticWarning,
                    stacklevel=3,
                )
            if self.a > 0.2 * self.wavelength:
                warnings.warn(
                    f"a/lambda = {self.a / self.wavelength:.3g} > 0.2; quasistatic picture is marginal",
                    QuasistaticWarning,
                    stacklevel=3,
                )

    @classmethod
    def hole(cls, a, d, wavelength, E0=1.0):
        return cls(a=a, d=d, wavelength=wavelength, E0=E0, mode="hole")

    @classmethod
    def dot(cls, a, d, E0=1.0):
        return cls(a=a, d=d, E0=E0, mode="dot")

    @classmethod
    def dot_from_ka(cls, ka, d=1.0, E0=1.0):
        """Dot geometry with ``k*a = ka`` (``k = pi/d`` because ``d = lambda/2``)."""
        return cls.dot(a=ka * d / math.pi, d=d, E0=E0)

    @property
    def k(self) -> float:
        return 2.0 * math.pi / self.wavelength

    @property
    def ka(self) -> float:
        return self.k * self.a

    def with_(self, **changes) -> "WaveguideGeometry":
        kw = dict(a=self.a, d=self.d, wavelength=self.wavelength, E0=self.E0, mode=self.mode)
        kw.update(changes)
        if kw["mode"] == "dot" and "wavelength" not in changes:
            kw["wavelength"] = None
        return WaveguideGeometry(**kw)

    def metadata(self) -> dict:
        return {
            "geometry.a": self.a,
            "geometry.d": self.d,
            "geometry.lambda": self.wavelength,
            "geometry.E0": self.E0,
            "geometry.mode": self.mode,
        }


@dataclass(frozen=True)
class LatticeSpec:
    """Aperture-pair centres in the (x, z) plane."""

    centers: tuple[tuple[float, float], ...]
    min_spacing: float = field(default=0.0)

    def __post_init__(self):
        c = tuple((float(x), float(z)) for x, z in self.centers)
        if not c:
            raise GeometryError("lattice needs at least one aperture pair")
        object.__setattr__(self, "centers", c)

    def check(self, g: WaveguideGeometry):
        """Raise if two pairs are closer than ``max(4a, min_spacing)``."""
        need = max(4.0 * g.a, self.min_spacing)
        pts = np.asarray(self.centers)
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                sep = math.hypot(*(pts[i] - pts[j]))
                if sep < need:
                    raise GeometryError(
                        f"aperture pairs {i} and {j} are {sep:.4g} apart; "
                        f"need >= {need:.4g} (mutual coupling is not modeled)"
                    )


def as_points(p) -> np.ndarray:
    """Coerce to a float array with a trailing axis of length 3."""
    p = np.asarray(p, dtype=float)
    if p.shape[-1:] != (3,):
        raise ValueError(f"points need a trailing axis of length 3, got shape {p.shape}")
    return p


def cylindrical(p) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(r, y)`` for points of shape ``(..., 3)``."""
    p = as_points(p)
    return np.hypot(p[..., 0], p[..., 2]), p[..., 1]


def scalar_or_array(v):
    v = np.asarray(v)
    return v[()] if v.ndim == 0 else v
