"""Stationary points of potentials: search, classification, trap depth.

Potentials are plain callables ``U(p)`` over points of shape ``(..., 3)``.
If the callable carries ``length_scale`` (the aperture radius) the default
finite-difference step is ``1e-4 * length_scale``; if it carries
``near_rim`` the stencils refuse to touch the rim exclusion ring.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import as_points

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class RimError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, msg, trace=()):
        super().__init__(msg)
        self.trace = list(trace)


class DegenerateError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3 or any(l >= h for l, h in zip(lo, hi)):
            raise ValueError(f"bad box {lo} .. {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def around(cls, center, half):
        c = np.asarray(center, float)
        h = np.broadcast_to(np.asarray(half, float), (3,))
        return cls(tuple(c - h), tuple(c + h))

    def contains(self, p):
        p = as_points(p)
        return np.all((p >= self.lo) & (p <= self.hi), axis=-1)

    def exit_distance(self, p, u):
        """Distance from ``p`` (inside) along unit vector ``u`` to the box surface."""
        p = np.asarray(p, float)
        u = np.asarray(u, float)
        t = math.inf
        for i in range(3):
            if u[i] > 0:
                t = min(t, (self.hi[i] - p[i]) / u[i])
            elif u[i] < 0:
                t = min(t, (self.lo[i] - p[i]) / u[i])
        return t


def golden_section(f, lo, hi, tol=1e-10, maximize=False, max_iter=200):
    """Golden-section search for the extremum of a unimodal ``f`` on ``[lo, hi]``."""
    sgn = -1.0 if maximize else 1.0
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = sgn * f(c), sgn * f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = sgn * f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = sgn * f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def _step(U, h):
    if h is not None:
        return h
    return 1e-4 * getattr(U, "length_scale", 1.0)


def _check_rim(U, pts):
    near = getattr(U, "near_rim", None)
    if near is not None and np.any(near(pts)):
        raise RimError("finite-difference stencil touches the aperture rim")


_AXES = np.eye(3)


def fd_gradient(U, p, h=None, richardson=False, check_rim=True):
    """Central-difference gradient; ``p`` may carry leading batch axes."""
    p = as_points(p)
    h = _step(U, h)
    steps = (h, 2 * h) if richardson else (h,)
    offs = np.concatenate([np.concatenate([s * _AXES, -s * _AXES]) for s in steps])
    pts = p[..., None, :] + offs
    if check_rim:
        _check_rim(U, pts)
    v = np.asarray(U(pts))
    g = (v[..., 0:3] - v[..., 3:6]) / (2 * h)
    if richardson:
        g2 = (v[..., 6:9] - v[..., 9:12]) / (4 * h)
        g = (4 * g - g2) / 3
    return g


def _hessian_raw(U, p, h):
    offs = [np.zeros(3)]
    for i in range(3):
        offs += [h * _AXES[i], -h * _AXES[i]]
    pairs = list(itertools.combinations(range(3), 2))
    for i, j in pairs:
        for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            offs.append(h * (si * _AXES[i] + sj * _AXES[j]))
    pts = p + np.array(offs)
    _check_rim(U, pts)
    v = np.asarray(U(pts), dtype=float)
    H = np.empty((3, 3))
    for i in range(3):
        H[i, i] = (v[1 + 2 * i] - 2 * v[0] + v[2 + 2 * i]) / h**2
    for k, (i, j) in enumerate(pairs):
        pp, pm, mp, mm = v[7 + 4 * k: 11 + 4 * k]
        H[i, j] = H[j, i] = (pp - pm - mp + mm) / (4 * h * h)
    return H


def fd_hessian(U, p, h=None, richardson=True):
    """Symmetric central-difference Hessian at a single point.

    With ``richardson`` the steps ``h`` and ``2h`` are combined to cancel the
    leading truncation error.
    """
    p = np.asarray(p, float).reshape(3)
    h = _step(U, h)
    H = _hessian_raw(U, p, h)
    if richardson:
        H = (4 * H - _hessian_raw(U, p, 2 * h)) / 3
    return 0.5 * (H + H.T)


@dataclass(frozen=True)
class Classification:
    kind: str  # minimum | maximum | saddle
    index: int  # number of negative eigenvalues

    def __str__(self):
        return f"saddle({self.index})" if self.kind == "saddle" else self.kind


def classify(H, tol=1e-10) -> Classification:
    """Morse index of a symmetric 3x3 matrix."""
    ev = np.linalg.eigvalsh(np.asarray(H, float))
    scale = np.max(np.abs(ev))
    if scale == 0 or np.any(np.abs(ev) <= tol * scale):
        raise DegenerateError(f"near-zero Hessian eigenvalue: {ev}")
    k = int(np.sum(ev < 0))
    if k == 0:
        return Classification("minimum", 0)
    if k == 3:
        return Classification("maximum", 3)
    return Classification("saddle", k)


@dataclass
class CriticalPoint:
    location: np.ndarray
    gradient_norm: float
    hessian: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    classification: Classification | None
    value: float
    iterations: int
    trace: list = field(default_factory=list, repr=False)


def _energy_scale(U):
    cfg = getattr(U, "config", None)
    return getattr(cfg, "u0", 1.0)


def find_critical_point(U, seed, tol=None, max_iter=100, max_step=None, box=None, h=None):
    """Damped Newton iteration on the finite-difference gradient.

    Converged when ``|grad U| <= tol`` (default ``1e-10 * u0 / a``).  Steps are
    clipped to ``0.1 a`` and halved while they increase the gradient norm.
    """
    L = getattr(U, "length_scale", 1.0)
    tol = 1e-10 * _energy_scale(U) / L if tol is None else tol
    max_step = 0.1 * L if max_step is None else max_step
    x = np.asarray(seed, float).reshape(3).copy()
    trace = []
    g = fd_gradient(U, x, h=h, richardson=True)
    gn = float(np.linalg.norm(g))
    it = 0
    while gn > tol:
        if it >= max_iter:
            raise ConvergenceError(f"no convergence after {max_iter} iterations (|grad|={gn:.3g})", trace)
        H = fd_hessian(U, x, h=h)
        try:
            dx = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            dx = -g
        n = np.linalg.norm(dx)
        if n > max_step:
            dx *= max_step / n
        for _ in range(30):
            xn = x + dx
            if box is not None and not box.contains(xn):
                raise ConvergenceError(f"iterate left the bounding box at {xn}", trace)
            gn_new_vec = fd_gradient(U, xn, h=h, richardson=True)
            gn_new = float(np.linalg.norm(gn_new_vec))
            if gn_new < gn or np.linalg.norm(dx) < 1e-14 * L:
                break
            dx *= 0.5
        x, g, gn = xn, gn_new_vec, gn_new
        it += 1
        trace.append((x.copy(), gn))
    H = fd_hessian(U, x, h=h)
    ev, vec = np.linalg.eigh(H)
    try:
        cls = classify(H)
    except DegenerateError:
        cls = None
    return CriticalPoint(
        location=x, gradient_norm=gn, hessian=H, eigenvalues=ev, eigenvectors=vec,
        classification=cls, value=float(U(x)), iterations=it, trace=trace,
    )


def cube_directions():
    """The 26 unit vectors to the faces, edges and corners of a cube."""
    dirs = [np.array(v, float) for v in itertools.product((-1, 0, 1), repeat=3) if any(v)]
    return [v / np.linalg.norm(v) for v in dirs]


@dataclass
class TrapReport:
    critical_point: CriticalPoint
    depth: float
    harmonic_frequencies: np.ndarray
    escape_direction: np.ndarray
    barrier_location: np.ndarray


def _ray_barrier(U, x0, u0, box, n):
    t_end = box.exit_distance(x0, u0)
    t = np.linspace(0.0, t_end, n)
    v = np.asarray(U(x0 + t[:, None] * u0))
    k = int(np.argmax(v))
    if 0 < k < n - 1:
        f = lambda s: float(U(x0 + s * u0))
        tk, vk = golden_section(f, t[k - 1], t[k + 1], maximize=True)
        if vk < v[k]:
            tk, vk = t[k], v[k]
    else:
        tk, vk = t[k], v[k]
    return float(vk), float(tk)


def _tilt(u, axis, angle):
    """Rotate ``u`` by ``angle`` in the plane spanned by ``u`` and ``axis`` (orthogonalised)."""
    w = axis - np.dot(axis, u) * u
    w /= np.linalg.norm(w)
    return math.cos(angle) * u + math.sin(angle) * w


def trap_depth(U, cp: CriticalPoint, box: Box, mass=None, n_samples=400, refine=True) -> TrapReport:
    """Lower-bound escape barrier of a minimum by ray sampling.

    Along each of 26 cube directions the potential is scanned out to the box
    surface and its maximum taken as the barrier; the lowest barrier is then
    refined by golden-section tilting of its direction.
    """
    if cp.classification is None or cp.classification.kind != "minimum":
        raise ValueError("trap depth needs a minimum")
    if mass is None:
        mass = getattr(getattr(U, "config", None), "mass", 1.0)
    x0 = np.asarray(cp.location, float)
    U0 = float(U(x0))

    best = None
    for u in cube_directions():
        vmax, t = _ray_barrier(U, x0, u, box, n_samples)
        if best is None or vmax < best[0]:
            best = (vmax, t, u)
    vmax, t, u = best

    if refine and vmax > U0:
        span = math.pi / 8
        for axis in _AXES:
            if abs(np.dot(axis, u)) > 0.999:
                continue
            f = lambda ang, u=u, axis=axis: _ray_barrier(U, x0, _tilt(u, axis, ang), box, n_samples)[0]
            ang, v = golden_section(f, -span, span, tol=1e-6)
            if v < vmax:
                u = _tilt(u, axis, ang)
                vmax, t = _ray_barrier(U, x0, u, box, n_samples)

    depth = max(vmax - U0, 0.0)
    ev = np.asarray(cp.eigenvalues, float)
    freqs = np.sqrt(np.maximum(ev, 0.0) / mass)
    return TrapReport(
        critical_point=cp,
        depth=depth,
        harmonic_frequencies=freqs,
        escape_direction=u,
        barrier_location=x0 + t * u,
    )
