"""Brute-force finite-difference Laplace solve for the photon-hole geometry.

This is an independent check on the closed-form potential: it knows nothing
about oblate coordinates, only the Laplace equation in axisymmetric ``(r, y)``
form, the two perforated plates as Dirichlet lines and the uniform-field
asymptotics on the outer boundary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class RelaxationResult:
    r: np.ndarray
    y: np.ndarray
    phi: np.ndarray  # shape (len(y), len(r))
    iterations: int
    residual: float


def _far_field(y, d, E0):
    return np.where(y > d / 2, -E0 * d / 2, np.where(y < -d / 2, E0 * d / 2, -E0 * y))


def solve_hole_relaxation(a, d, E0=1.0, h=None, radius=None, margin=None,
                          tol=1e-9, max_iter=200000, omega=None):
    """Red-black SOR on a vertex grid covering ``0 <= r <= radius``, ``|y| <= d/2 + margin``.

    Plates occupy ``y = +-d/2, r >= a`` at potentials ``-/+ E0 d/2``.  The
    outer boundary carries the aperture-free potential.  ``h`` must divide
    ``a``, ``d/2``, ``radius`` and ``margin``.
    """
    h = a / 20 if h is None else h
    radius = 20 * a if radius is None else radius
    margin = 20 * a if margin is None else margin
    nr = round(radius / h)
    ny_half = round((d / 2 + margin) / h)
    i_plate = round(d / 2 / h)
    j_rim = round(a / h)
    for name, v, n in (("radius", radius, nr), ("d/2", d / 2, i_plate), ("a", a, j_rim)):
        if not math.isclose(n * h, v, rel_tol=1e-9):
            raise ValueError(f"grid step {h} does not divide {name}={v}")

    r = np.arange(nr + 1) * h
    y = (np.arange(2 * ny_half + 1) - ny_half) * h
    R, Y = np.meshgrid(r, y)
    phi = _far_field(Y, d, E0)

    fixed = np.zeros_like(phi, dtype=bool)
    fixed[:, -1] = True
    fixed[0, :] = True
    fixed[-1, :] = True
    for i in (ny_half + i_plate, ny_half - i_plate):
        fixed[i, j_rim:] = True
    phi[ny_half + i_plate, j_rim:] = -E0 * d / 2
    phi[ny_half - i_plate, j_rim:] = E0 * d / 2

    # axisymmetric 5-point weights; column 0 is the axis
    j = np.arange(nr + 1, dtype=float)
    wp = np.ones_like(j)
    wm = np.ones_like(j)
    wp[1:] = 1 + 0.5 / j[1:]
    wm[1:] = 1 - 0.5 / j[1:]
    wp[0] = 4.0
    wm[0] = 0.0
    diag = wp + wm + 2.0

    parity = (np.add.outer(np.arange(y.size), np.arange(r.size)) % 2).astype(bool)
    masks = [(~fixed) & (parity == c) for c in (False, True)]
    if omega is None:
        n_eff = max(nr, 2 * ny_half)
        omega = 2.0 / (1.0 + math.sin(math.pi / n_eff))

    def gs_value(p):
        up = np.empty_like(p)
        dn = np.empty_like(p)
        rt = np.empty_like(p)
        lt = np.empty_like(p)
        up[:-1] = p[1:]
        up[-1] = p[-1]
        dn[1:] = p[:-1]
        dn[0] = p[0]
        rt[:, :-1] = p[:, 1:]
        rt[:, -1] = p[:, -1]
        lt[:, 1:] = p[:, :-1]
        lt[:, 0] = 0.0
        return (wp * rt + wm * lt + up + dn) / diag

    scale = E0 * d / 2
    it = 0
    res = math.inf
    while it < max_iter:
        for m in masks:
            new = gs_value(phi)
            phi[m] += omega * (new[m] - phi[m])
        it += 1
        if it % 50 == 0:
            res = float(np.max(np.abs(gs_value(phi)[~fixed] - phi[~fixed]))) / scale
            if res < tol:
                break
    log.info("relaxation: %d sweeps, residual %.3g", it, res)
    return RelaxationResult(r=r, y=y, phi=phi, iterations=it, residual=res)
