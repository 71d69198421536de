"""Closed-form fields of the aperture-pair waveguide.

Everything here is vectorised: points are arrays of shape ``(..., 3)`` and the
results broadcast over the leading axes.

Both the photon-hole potential and the photon-dot kernels are evaluated in
oblate spheroidal coordinates ``(mu, nu)`` attached to each aperture::

    r = a*sqrt((1 + mu**2) * (1 - nu**2)),   y_local = a*mu*nu

with ``mu >= 0`` and ``0 <= nu <= 1`` (``nu`` is ``|nu|``; the formulas only
need the upper half-space).  The aperture disc is ``mu = 0``, the screen is
``nu = 0`` and the rim circle is ``mu = nu = 0``.  Written this way every
removable singularity of the textbook expressions (``1/mu`` on the aperture
disc, ``y**2/r**2`` on the axis) cancels analytically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    EPS_RIM,
    GeometryError,
    LatticeSpec,
    WaveguideGeometry,
    as_points,
    cylindrical,
    scalar_or_array,
)

BELOW, INTERIOR, ABOVE = -1, 0, 1


@dataclass(frozen=True)
class FieldSample:
    """Complex field amplitudes (time factor ``exp(-i w t)`` dropped), units of E0."""

    E: np.ndarray
    H: np.ndarray


@dataclass(frozen=True)
class IntensityValue:
    """Time-averaged ``<E^2>``; the bare standing wave gives ``2 cos^2(pi y/d)`` inside."""

    w: np.ndarray
    region: np.ndarray
    rim: np.ndarray

    def __float__(self):
        return float(self.w)


@dataclass(frozen=True)
class KernelValues:
    """Aperture kernels.  ``R_star`` is reported in units of ``a**2``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    R_star: np.ndarray
    R_plus: np.ndarray
    R_minus: np.ndarray
    rim: np.ndarray


# --------------------------------------------------------------------------
# oblate spheroidal coordinates

def _oblate(rho, zeta):
    """``(mu, |nu|)`` from ``rho = r/a`` and ``zeta = y_local/a``.

    Whichever of the two roots is free of cancellation is computed directly
    and the other follows from ``mu*|nu| = |zeta|``.
    """
    rho = np.asarray(rho, dtype=float)
    zeta = np.abs(np.asarray(zeta, dtype=float))
    s = rho * rho + zeta * zeta - 1.0
    D = np.hypot(s, 2.0 * zeta)
    pos = s >= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        big = np.sqrt(0.5 * (D + np.abs(s)))
        mu = np.where(pos, big, 0.0)
        nu = np.where(pos, 0.0, big)
        mu = np.where(pos, mu, np.where(nu > 0, zeta / nu, 0.0))
        nu = np.where(pos, np.where(mu > 0, zeta / mu, 0.0), nu)
    return mu, np.minimum(nu, 1.0)


def mu(r, z, a):
    """Oblate radial coordinate of the point ``(r, z)`` for an aperture of radius ``a``.

    Zero on the aperture disc, ``sqrt(r**2/a**2 - 1)`` on the screen and
    ``|z|/a`` on the axis.
    """
    m, _ = _oblate(np.asarray(r, float) / a, np.asarray(z, float) / a)
    return scalar_or_array(m)


def _clamp_rim(rho, zeta):
    """Push points closer than ``EPS_RIM`` to the rim out to that distance.

    Works in the ``(rho, zeta)`` half-plane with ``zeta`` signed.  Points
    sitting exactly on the rim are moved towards the axis, into the opening.
    """
    rho = np.asarray(rho, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    dr = rho - 1.0
    dist = np.hypot(dr, zeta)
    flag = dist < EPS_RIM
    if not np.any(flag):
        return rho, zeta, flag
    with np.errstate(divide="ignore", invalid="ignore"):
        ur = np.where(dist > 0, dr / dist, -1.0)
        uz = np.where(dist > 0, zeta / dist, 0.0)
    rho = np.where(flag, 1.0 + EPS_RIM * ur, rho)
    zeta = np.where(flag, EPS_RIM * uz, zeta)
    return rho, zeta, flag


def rim_mask(p, g: WaveguideGeometry):
    """True where a point lies inside the rim exclusion ring of either aperture."""
    r, y = cylindrical(p)
    rho = r / g.a
    m = np.zeros(np.shape(r), dtype=bool)
    for yc in (0.5 * g.d, -0.5 * g.d):
        m |= np.hypot(rho - 1.0, (y - yc) / g.a) < EPS_RIM
    return scalar_or_array(m)


# --------------------------------------------------------------------------
# photon hole

def _hole_term(rho, zeta):
    """Single-aperture building block ``G/a = |nu| + |zeta|*arctan(mu)`` and its gradient.

    ``(E0 a / pi) * G`` is the even part of the potential of a screen with a
    circular hole, uniform field on one side and none on the other.
    """
    m, n = _oblate(rho, zeta)
    q = m * m + n * n
    G = n + m * n * np.arctan(m)
    with np.errstate(divide="ignore", invalid="ignore"):
        dG_drho = np.where(q > 0, -n * rho / ((1.0 + m * m) * q), 0.0)
        dG_dzeta = np.sign(zeta) * (np.arctan(m) + np.where(q > 0, m / q, 0.0))
    return G, dG_drho, dG_dzeta


def _hole_parts(p, g: WaveguideGeometry):
    if g.mode != "hole":
        raise GeometryError("photon-hole fields need a hole-mode geometry")
    r, y = cylindrical(p)
    rho = r / g.a
    rho_t, z_t, f_t = _clamp_rim(rho, (y - 0.5 * g.d) / g.a)
    rho_b, z_b, f_b = _clamp_rim(rho, (y + 0.5 * g.d) / g.a)
    return r, _hole_term(rho_t, z_t), _hole_term(rho_b, z_b), f_t | f_b


def hole_potential(p, g: WaveguideGeometry):
    """Quasistatic potential of the aperture pair in the TEM-carrying waveguide.

    Gauge: ``phi(r, 0) = 0``.  Inside the gap far from the axis it tends to
    ``-E0*y``; outside it tends to ``-/+ E0*d/2`` above/below, the plate
    potentials.
    """
    _, (Gt, _, _), (Gb, _, _), _ = _hole_parts(p, g)
    return scalar_or_array(g.E0 * g.a / np.pi * (Gt - Gb))


def hole_field(p, g: WaveguideGeometry, return_flag=False):
    """Electric field ``-grad(phi)`` in Cartesian components, shape ``(..., 3)``."""
    r, (_, Rt, Zt), (_, Rb, Zb), flag = _hole_parts(p, g)
    p = as_points(p)
    c = -g.E0 / np.pi
    Er = c * (Rt - Rb)
    Ey = c * (Zt - Zb)
    with np.errstate(divide="ignore", invalid="ignore"):
        cx = np.where(r > 0, p[..., 0] / r, 0.0)
        cz = np.where(r > 0, p[..., 2] / r, 0.0)
    E = np.stack([Er * cx, Ey, Er * cz], axis=-1)
    if return_flag:
        return E, scalar_or_array(flag)
    return E


def hole_intensity(p, g: WaveguideGeometry):
    """``|E|**2 / E0**2`` of the photon-hole field."""
    E = hole_field(p, g)
    return scalar_or_array(np.sum(E * E, axis=-1) / g.E0**2)


# --------------------------------------------------------------------------
# unperturbed modes

def _check_gap(y, g):
    if np.any(np.abs(np.asarray(y)) > 0.5 * g.d * (1 + 1e-12)):
        raise GeometryError("point lies outside the plate gap |y| <= d/2")


def unperturbed_wave(p, g: WaveguideGeometry) -> FieldSample:
    """TEM travelling wave along +z, E along the plate normal."""
    p = as_points(p)
    _check_gap(p[..., 1], g)
    ph = g.E0 * np.exp(1j * g.k * p[..., 2])
    zero = np.zeros_like(ph)
    return FieldSample(E=np.stack([zero, ph, zero], -1), H=np.stack([-ph, zero, zero], -1))


def te01_mode(p, g: WaveguideGeometry, polarization="linear") -> FieldSample:
    """Half-wave standing mode between the plates, nodes of E on both plates."""
    if g.mode != "dot":
        raise GeometryError("the TE01 standing mode belongs to dot-mode geometries")
    p = as_points(p)
    y = p[..., 1]
    _check_gap(y, g)
    c = np.cos(np.pi * y / g.d)
    s = np.sin(np.pi * y / g.d)
    zero = np.zeros(y.shape, dtype=complex)
    if polarization == "linear":
        E = np.stack([-2j * c, zero, zero], -1)
        H = np.stack([zero, zero, 2 * s + 0j], -1)
    elif polarization == "circular":
        k = -1 / np.sqrt(2)
        E = k * np.stack([2j * c, zero, 1j * 2j * c], -1)
        H = k * np.stack([1j * 2 * s, zero, -2 * s + 0j], -1)
    else:
        raise ValueError(f"polarization must be 'linear' or 'circular', not {polarization!r}")
    return FieldSample(E=g.E0 * E, H=g.E0 * H)


def background_intensity(y, g: WaveguideGeometry):
    """``<E^2>`` of the bare circular standing wave: ``2cos^2(pi y/d)`` inside, 0 outside."""
    y = np.asarray(y, dtype=float)
    c = np.cos(np.pi * y / g.d)
    return scalar_or_array(np.where(np.abs(y) <= 0.5 * g.d, 2.0 * c * c, 0.0))


# --------------------------------------------------------------------------
# photon dot

def abc_kernels(r, y_local, a) -> KernelValues:
    """Scattering kernels A, B, C of one aperture at height ``y_local >= 0`` above it."""
    rho, zeta, flag = _clamp_rim(np.asarray(r, float) / a, np.abs(np.asarray(y_local, float)) / a)
    m, n = _oblate(rho, zeta)
    m2 = m * m
    q = m2 + n * n
    with np.errstate(divide="ignore", invalid="ignore"):
        acot = np.arctan2(1.0, m)
        A = n * (2.0 / q + 2.0) + m2 * n / (1.0 + m2) - 3.0 * m * n * acot
        B = -2.0 * m2 * n / (1.0 + m2) + (
            -2.0 * n * (1.0 + m2) * (1.0 - n * n) + m2 * n * (n * n + 1.0) + 3.0 * m2 * n * (1.0 - n * n)
        ) / q
        C = 2.0 * m * np.sqrt(1.0 - n * n) / (q * np.sqrt(1.0 + m2))
    return KernelValues(
        A=scalar_or_array(A),
        B=scalar_or_array(B),
        C=scalar_or_array(C),
        R_star=scalar_or_array(q),
        R_plus=scalar_or_array(m),
        R_minus=scalar_or_array(n),
        rim=scalar_or_array(flag),
    )


def _upper_lower(r, y, g):
    up = abc_kernels(r, np.abs(y - 0.5 * g.d), g.a)
    lo = abc_kernels(r, np.abs(y + 0.5 * g.d), g.a)
    return up, lo


def hatted_kernels(r, y, g: WaveguideGeometry):
    """Sums of both apertures' kernels, ``(A_hat, B_hat, C_hat)``."""
    if g.mode != "dot":
        raise GeometryError("hatted kernels belong to dot-mode geometries")
    up, lo = _upper_lower(r, y, g)
    return (
        scalar_or_array(up.A + lo.A),
        scalar_or_array(up.B + lo.B),
        scalar_or_array(up.C + lo.C),
    )


def _w_exterior(k):
    s = k.A + k.B
    return k.A * k.A + s * s + k.C * k.C


def _assemble(y, g, Ah, Bh, Ch, below, above, flag):
    ka = g.ka
    c = np.cos(np.pi * y / g.d)
    X = 3.0 * np.pi * c / ka
    w_in = 2.0 * X * X + 2.0 * X * (2.0 * Ah + Bh) + Ah * Ah + (Ah + Bh) ** 2 + Ch * Ch
    region = np.where(y > 0.5 * g.d, ABOVE, np.where(y < -0.5 * g.d, BELOW, INTERIOR)).astype(np.int8)
    W = np.where(region == ABOVE, above, np.where(region == BELOW, below, w_in))
    pref = (ka / (3.0 * np.pi)) ** 2
    return IntensityValue(
        w=scalar_or_array(pref * W),
        region=scalar_or_array(region),
        rim=scalar_or_array(flag),
    )


def _dot_rz(p, g):
    if g.mode != "dot":
        raise GeometryError("photon-dot intensity needs a dot-mode geometry")
    return cylindrical(p)


def dot_intensity(p, g: WaveguideGeometry) -> IntensityValue:
    """Time-averaged ``<E^2>`` of the circularly polarised half-wave mode with both apertures."""
    r, y = _dot_rz(p, g)
    up, lo = _upper_lower(r, y, g)
    return _assemble(
        y, g,
        up.A + lo.A, up.B + lo.B, up.C + lo.C,
        below=_w_exterior(lo), above=_w_exterior(up),
        flag=np.asarray(up.rim) | np.asarray(lo.rim),
    )


def single_aperture_dot_intensity(p, g: WaveguideGeometry, aperture="lower") -> IntensityValue:
    """Same mode with only one aperture open; the other plate is solid."""
    r, y = _dot_rz(p, g)
    up, lo = _upper_lower(r, y, g)
    if aperture == "lower":
        k = lo
        below, above = _w_exterior(lo), np.zeros_like(np.asarray(lo.A))
    elif aperture == "upper":
        k = up
        below, above = np.zeros_like(np.asarray(up.A)), _w_exterior(up)
    else:
        raise ValueError("aperture must be 'lower' or 'upper'")
    return _assemble(y, g, k.A, k.B, k.C, below=below, above=above, flag=np.asarray(k.rim))


def center_excess(g: WaveguideGeometry, single=False) -> float:
    """``<E^2>(0) - 2``: intensity gain at the waveguide centre over the bare mode."""
    fn = single_aperture_dot_intensity if single else dot_intensity
    return float(fn([0.0, 0.0, 0.0], g).w) - 2.0


def lattice_intensity(p, g: WaveguideGeometry, lat: LatticeSpec) -> IntensityValue:
    """Independent aperture pairs at ``lat.centers`` sharing one background mode.

    Each pair adds its own excess over the bare mode; cross terms between
    different pairs' scattered fields are dropped.
    """
    lat.check(g)
    p = as_points(p)
    _, y = cylindrical(p)
    bg = background_intensity(y, g)
    total = None
    region = rim = None
    for i, (cx, cz) in enumerate(lat.centers):
        q = p - np.array([cx, 0.0, cz])
        iv = dot_intensity(q, g)
        if i == 0:
            total = np.asarray(iv.w, dtype=float)
            region = np.asarray(iv.region)
            rim = np.asarray(iv.rim)
        else:
            total = total + (np.asarray(iv.w) - bg)
            rim = rim | np.asarray(iv.rim)
    return IntensityValue(w=scalar_or_array(total), region=scalar_or_array(region), rim=scalar_or_array(rim))
