import math
import warnings

import numpy as np
import pytest

from photondot import fields
from photondot.geometry import GeometryError, WaveguideGeometry
from photondot.optics import (
    Evanescent,
    OpticalConfig,
    PotentialField,
    dipole_potential,
    evanescent_kappa,
    evanescent_potential,
    gravity_potential,
    normalized_intensity,
)

ORIGIN = np.zeros(3)


def test_normalized_intensity_references(hole_geom):
    assert normalized_intensity([50, 0, 0], "hole", hole_geom) == pytest.approx(1.0, abs=1e-3)
    g = WaveguideGeometry.dot(0.1, 1.0)
    assert normalized_intensity([2.0, 0, 0], "dot", g) == pytest.approx(1.0, rel=1e-2)
    assert normalized_intensity([0, 0.5 + 2.0, 0], "dot", g) < 0.01


def test_dipole_sign_law(dot_geom):
    blue, red = OpticalConfig(detuning_sign=1), OpticalConfig(detuning_sign=-1)
    bg = 1.0  # bare mode at mid-gap
    s0 = normalized_intensity(ORIGIN, "dot", dot_geom)
    assert s0 > bg
    assert dipole_potential(ORIGIN, blue, "dot", dot_geom) > bg
    assert dipole_potential(ORIGIN, red, "dot", dot_geom) < -bg


def test_blue_hole_centre_below_u0(hole_geom):
    assert dipole_potential(ORIGIN, OpticalConfig(), "hole", hole_geom) < 1.0


def test_zero_intensity_zero_potential(dot_geom):
    # far outside the waveguide on the closed side of a single aperture
    assert dipole_potential([0, 5.0, 0], OpticalConfig(), "single", dot_geom) == 0.0


def test_u0_scaling_is_exact(hole_geom, rng):
    pts = rng.uniform(-2, 2, size=(30, 3))
    u1 = dipole_potential(pts, OpticalConfig(u0=1.0), "hole", hole_geom)
    u3 = dipole_potential(pts, OpticalConfig(u0=3.0), "hole", hole_geom)
    np.testing.assert_array_equal(u3, 3.0 * u1)


def test_evanescent_examples():
    cfg = OpticalConfig(evanescent=Evanescent(2.0, 0.5, -3.0), terms={"dipole", "evanescent"})
    assert evanescent_potential([0, -3.0, 0], cfg) == pytest.approx(2.0)
    assert evanescent_potential([0, -3.0 + 1.0, 0], cfg) == pytest.approx(2.0 / math.e)
    y = np.linspace(-3, 3, 50)
    u = evanescent_potential(np.stack([0 * y, y, 0 * y], -1), cfg)
    assert np.all(np.diff(u) < 0)


def test_disabled_evanescent_warns():
    with pytest.warns(UserWarning):
        assert evanescent_potential(ORIGIN, OpticalConfig()) == 0.0


def test_evanescent_kappa_helper():
    assert evanescent_kappa(1.0, 1.5, math.pi / 2) == pytest.approx(2 * math.pi * math.sqrt(1.25))
    with pytest.raises(ValueError):
        evanescent_kappa(1.0, 1.0, 0.3)


def test_gravity():
    cfg = OpticalConfig(mass=2.0, gravity=3.0)
    assert gravity_potential(ORIGIN, cfg) == 0.0
    assert gravity_potential([0, 2.0, 0], cfg) == pytest.approx(2 * gravity_potential([0, 1.0, 0], cfg))
    assert gravity_potential([0, 5.0, 0], OpticalConfig()) == 0.0


def test_gravity_only_is_a_ramp(hole_geom):
    U = PotentialField(hole_geom, OpticalConfig(gravity=1.5, terms={"gravity"}))
    y = np.linspace(-3, 3, 7)
    np.testing.assert_allclose(U(np.stack([y, y, y], -1)), 1.5 * y)


def test_total_is_sum_of_terms(hole_geom, rng):
    cfg = OpticalConfig(gravity=1.0, evanescent=Evanescent(4.9, 0.5, -2.0),
                        terms={"dipole", "evanescent", "gravity"})
    U = PotentialField(hole_geom, cfg)
    pts = rng.uniform(-1.4, 1.4, size=(20, 3))
    t = U.terms(pts)
    assert set(t) == {"dipole", "evanescent", "gravity"}
    np.testing.assert_array_equal(U(pts), t["dipole"] + t["evanescent"] + t["gravity"])
    only = PotentialField(hole_geom, OpticalConfig())
    np.testing.assert_array_equal(only(pts), dipole_potential(pts, OpticalConfig(), "hole", hole_geom))


def test_scattering_rate(hole_geom):
    U0 = PotentialField(hole_geom, OpticalConfig())
    assert U0.scattering_rate([50, 0, 0]) == 0.0
    r1 = PotentialField(hole_geom, OpticalConfig(linewidth_ratio=0.01)).scattering_rate([1, 0.3, 0])
    r2 = PotentialField(hole_geom, OpticalConfig(linewidth_ratio=0.02)).scattering_rate([1, 0.3, 0])
    assert r2 == pytest.approx(2 * r1, rel=1e-14)


def test_config_validation():
    for kw in (dict(detuning_sign=0), dict(u0=0), dict(linewidth_ratio=-1), dict(mass=0),
               dict(terms={"bogus"}), dict(terms=set()), dict(terms={"evanescent"})):
        with pytest.raises(ValueError):
            OpticalConfig(**kw)
    with pytest.raises(ValueError):
        Evanescent(1.0, 0.0, -1.0)
    with pytest.warns(UserWarning):
        OpticalConfig(linewidth_ratio=0.3)


def test_selector_must_match_mode(hole_geom, dot_geom):
    with pytest.raises(GeometryError):
        PotentialField(hole_geom, OpticalConfig(), "dot")
    with pytest.raises(GeometryError):
        PotentialField(dot_geom, OpticalConfig(), "hole")
    with pytest.raises(GeometryError):
        PotentialField(dot_geom, OpticalConfig(), "lattice")


def test_continuity_on_rim_free_domain(hole_geom, rng):
    U = PotentialField(hole_geom, OpticalConfig())
    pts = rng.uniform(-1.3, 1.3, size=(200, 3))
    h = 1e-6
    du = np.abs(U(pts + h) - U(pts))
    assert np.max(du) < 1e-4
