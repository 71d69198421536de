"""Classical atom trajectories through the aperture potentials.

Integration is fixed-step RK4 of ``m r'' = -grad U`` with the force taken
from central differences of the potential.  Beams are integrated as one
vectorised batch per fixed-size chunk; chunk boundaries never depend on the
worker count, so results are bitwise independent of ``threads``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .analysis import Box, fd_gradient, golden_section
from .geometry import WaveguideGeometry

CHUNK = 256

Termination = Literal["exited_box", "hit_conductor", "max_time", "rim_flag"]


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AtomState:
    t: float
    position: np.ndarray
    velocity: np.ndarray


@dataclass
class Trajectory:
    t: np.ndarray  # (n,)
    position: np.ndarray  # (n, 3)
    velocity: np.ndarray  # (n, 3)
    termination: Termination
    scattering_integral: float = 0.0

    @property
    def samples(self):
        return [AtomState(float(t), p, v) for t, p, v in zip(self.t, self.position, self.velocity)]

    @property
    def final(self) -> AtomState:
        return AtomState(float(self.t[-1]), self.position[-1], self.velocity[-1])


@dataclass
class World:
    """Everything a trajectory needs: potential, box, optional conductor geometry."""

    potential: Callable
    box: Box
    geometry: WaveguideGeometry | None = None
    mass: float | None = None
    rate: Callable | None = None
    h: float | None = None

    def __post_init__(self):
        if self.geometry is None:
            self.geometry = getattr(self.potential, "geometry", None)
        if self.mass is None:
            self.mass = getattr(getattr(self.potential, "config", None), "mass", 1.0)
        if self.rate is None:
            self.rate = getattr(self.potential, "scattering_rate", None)

    def acceleration(self, pos):
        # rim proximity is handled by the tracer, which terminates the atom
        a = -fd_gradient(self.potential, pos, h=self.h, check_rim=False) / self.mass
        if not np.all(np.isfinite(a)):
            raise IntegrationError("non-finite force")
        return a

    def near_rim(self, pos):
        f = getattr(self.potential, "near_rim", None)
        if f is None:
            return np.zeros(pos.shape[:-1], dtype=bool)
        return np.asarray(f(pos), dtype=bool)

    def max_speed_dt(self, speed, fraction=0.01):
        """Step that moves an atom at ``speed`` by ``fraction * a``."""
        L = self.geometry.a if self.geometry is not None else 1.0
        return fraction * L / speed


def _rk4(pos, vel, dt, accel):
    k1v = accel(pos)
    k1x = vel
    k2v = accel(pos + 0.5 * dt * k1x)
    k2x = vel + 0.5 * dt * k1v
    k3v = accel(pos + 0.5 * dt * k2x)
    k3x = vel + 0.5 * dt * k2v
    k4v = accel(pos + dt * k3x)
    k4x = vel + dt * k3v
    return (
        pos + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
        vel + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v),
    )


def rk4_step(s: AtomState, force: Callable, dt: float, mass=1.0) -> AtomState:
    """One classical RK4 step; ``force(position) -> 3-vector``."""
    if not dt > 0:
        raise ValueError("dt must be positive")

    def accel(p):
        f = np.asarray(force(p), float)
        if not np.all(np.isfinite(f)):
            raise IntegrationError("non-finite force")
        return f / mass

    x, v = _rk4(np.asarray(s.position, float), np.asarray(s.velocity, float), dt, accel)
    return AtomState(s.t + dt, x, v)


def _trace_batch(pos0, vel0, world: World, dt, t_max, record_every=1):
    n = pos0.shape[0]
    pos = pos0.astype(float).copy()
    vel = vel0.astype(float).copy()
    t = 0.0
    active = np.ones(n, dtype=bool)
    term = [None] * n
    hist_t = [[0.0] for _ in range(n)]
    hist_p = [[pos[i].copy()] for i in range(n)]
    hist_v = [[vel[i].copy()] for i in range(n)]
    scat = np.zeros(n)
    rate_prev = np.asarray(world.rate(pos), float) if world.rate is not None else np.zeros(n)
    g = world.geometry
    plates = (-0.5 * g.d, 0.5 * g.d) if g is not None else ()
    n_steps = int(math.ceil(t_max / dt - 1e-9))
    for step in range(1, n_steps + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        p_old, v_old = pos[idx], vel[idx]
        stage_rim = np.zeros(idx.size, dtype=bool)

        def accel(p):
            stage_rim[:] |= world.near_rim(p)
            return world.acceleration(p)

        p_new, v_new = _rk4(p_old, v_old, dt, accel)
        t_new = step * dt
        t_end = np.full(idx.size, t_new)
        why = np.full(idx.size, None, dtype=object)

        for yp in plates:
            s_old = p_old[:, 1] - yp
            s_new = p_new[:, 1] - yp
            cross = (s_old * s_new < 0) | ((s_new == 0) & (s_old != 0))
            cross &= why == None  # noqa: E711
            if np.any(cross):
                frac = s_old[cross] / (s_old[cross] - s_new[cross])
                pc = p_old[cross] + frac[:, None] * (p_new[cross] - p_old[cross])
                rc = np.hypot(pc[:, 0], pc[:, 2])
                hit = rc >= g.a
                sel = np.flatnonzero(cross)[hit]
                if sel.size:
                    f = frac[hit]
                    p_new[sel] = pc[hit]
                    v_new[sel] = v_old[sel] + f[:, None] * (v_new[sel] - v_old[sel])
                    t_end[sel] = t_new - dt + f * dt
                    why[sel] = "hit_conductor"

        free = why == None  # noqa: E711
        rim = (world.near_rim(p_new) | stage_rim) & free
        why[rim] = "rim_flag"
        out = ~world.box.contains(p_new) & (why == None)  # noqa: E711
        why[out] = "exited_box"
        if step == n_steps:
            why[why == None] = "max_time"  # noqa: E711

        if world.rate is not None:
            rate_new = np.asarray(world.rate(p_new), float)
            scat[idx] += 0.5 * (rate_prev[idx] + rate_new) * (t_end - (t_new - dt))
            rate_prev[idx] = rate_new

        pos[idx], vel[idx] = p_new, v_new
        for k, i in enumerate(idx):
            done = why[k] is not None
            if done or step % record_every == 0:
                hist_t[i].append(float(t_end[k]))
                hist_p[i].append(p_new[k].copy())
                hist_v[i].append(v_new[k].copy())
            if done:
                term[i] = why[k]
                active[i] = False
        t = t_new
    return [
        Trajectory(
            t=np.array(hist_t[i]),
            position=np.array(hist_p[i]),
            velocity=np.array(hist_v[i]),
            termination=term[i] or "max_time",
            scattering_integral=float(scat[i]),
        )
        for i in range(n)
    ]


def trace(s0: AtomState, world: World, dt, t_max, record_every=1) -> Trajectory:
    """Integrate one atom until it leaves the box, hits a plate, nears the rim or runs out of time."""
    p = np.asarray(s0.position, float).reshape(1, 3)
    if not world.box.contains(p)[0]:
        raise ValueError("initial state lies outside the bounding box")
    tr = _trace_batch(p, np.asarray(s0.velocity, float).reshape(1, 3), world, dt, t_max, record_every)[0]
    tr.t = tr.t + s0.t
    return tr


@dataclass(frozen=True)
class BeamSpec:
    count: int
    y_start: float
    r0: float
    speed: float
    sigma_v: float = 0.0
    seed: int = 0
    distribution: Literal["disc", "ring"] = "disc"
    low_discrepancy: bool = False

    def validate(self, g: WaveguideGeometry | None = None):
        if self.count < 1:
            raise ValueError("beam count must be >= 1")
        if not self.speed > 0:
            raise ValueError("beam speed must be positive")
        if self.r0 < 0 or self.sigma_v < 0:
            raise ValueError("r0 and sigma_v must be >= 0")
        if self.distribution not in ("disc", "ring"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if g is not None:
            if not self.r0 < g.a:
                raise ValueError(f"beam radius r0={self.r0} must be smaller than the aperture radius a={g.a}")
            if not self.y_start < -0.5 * g.d:
                raise ValueError("beam must start below the lower plate")

    def initial_states(self):
        """Positions and velocities, deterministic in ``seed`` (PCG64 stream)."""
        rng = np.random.default_rng(self.seed)
        n = self.count
        if self.low_discrepancy:
            i = np.arange(n) + 0.5
            u1 = i / n
            u2 = (i * GOLDEN_ANGLE_FRACTION) % 1.0
        else:
            u1 = rng.random(n)
            u2 = rng.random(n)
        r = self.r0 * (np.sqrt(u1) if self.distribution == "disc" else np.ones(n))
        th = 2 * np.pi * u2
        pos = np.stack([r * np.cos(th), np.full(n, float(self.y_start)), r * np.sin(th)], -1)
        vt = rng.normal(0.0, self.sigma_v, size=(n, 2)) if self.sigma_v > 0 else np.zeros((n, 2))
        vel = np.stack([vt[:, 0], np.full(n, float(self.speed)), vt[:, 1]], -1)
        return pos, vel


GOLDEN_ANGLE_FRACTION = (math.sqrt(5.0) - 1.0) / 2.0


def launch_beam(spec: BeamSpec, world: World, dt, t_max, threads=1, record_every=1):
    """Trace every atom of a beam; output order is launch order."""
    spec.validate(world.geometry)
    pos, vel = spec.initial_states()
    chunks = [slice(i, min(i + CHUNK, spec.count)) for i in range(0, spec.count, CHUNK)]
    run = lambda sl: _trace_batch(pos[sl], vel[sl], world, dt, t_max, record_every)
    if threads and threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(sl) for sl in chunks]
    return [tr for part in parts for tr in part]


# --------------------------------------------------------------------------
# focusing

@dataclass
class FocusReport:
    status: str  # focused | defocusing | beyond_scan | blocked
    focal_plane: float | None
    rms_radius_at_focus: float | None
    focal_length: float | None
    throughput: float
    launch_rms: float
    survivors: int
    thin_lens_estimate: float | None = None
    scan: tuple = field(default=(), repr=False)


def survivors(trajs):
    return [t for t in trajs if t.termination == "exited_box" and t.velocity[-1, 1] > 0]


def _transverse_at(tr: Trajectory, y):
    """(x, z) of a trajectory where it crosses the plane ``y``.

    Inside the recorded samples the crossing is linearly interpolated;
    beyond the last sample the atom flies ballistically.
    """
    p, v = tr.position[-1], tr.velocity[-1]
    if y >= p[1]:
        s = (y - p[1]) / v[1]
        return p[0] + s * v[0], p[2] + s * v[2]
    ys = tr.position[:, 1]
    if np.all(np.diff(ys) > 0) and y >= ys[0]:
        return np.interp(y, ys, tr.position[:, 0]), np.interp(y, ys, tr.position[:, 2])
    s = (y - p[1]) / v[1]
    return p[0] + s * v[0], p[2] + s * v[2]


def rms_radius(trajs, y):
    xz = np.array([_transverse_at(t, y) for t in trajs])
    return float(np.sqrt(np.mean(xz[:, 0] ** 2 + xz[:, 1] ** 2)))


def focal_analysis(trajs, scan, lens_center=0.0) -> FocusReport:
    """Locate the plane of minimum transverse rms radius among surviving atoms.

    ``scan = (y_lo, y_hi, n)``.  A beam whose rms grows across the whole scan
    is reported as defocusing.
    """
    n_all = len(trajs)
    ok = survivors(trajs)
    launch = np.array([t.position[0] for t in trajs]) if trajs else np.zeros((0, 3))
    launch_rms = float(np.sqrt(np.mean(launch[:, 0] ** 2 + launch[:, 2] ** 2))) if n_all else 0.0
    thr = len(ok) / n_all if n_all else 0.0
    if len(ok) < 2:
        return FocusReport("blocked", None, None, None, thr, launch_rms, len(ok))
    y_lo, y_hi, n = scan
    ys = np.linspace(y_lo, y_hi, int(n))
    rms = np.array([rms_radius(ok, y) for y in ys])
    k = int(np.argmin(rms))
    scan_data = (ys, rms)
    if k == 0 and np.all(np.diff(rms) >= 0):
        return FocusReport("defocusing", None, None, None, thr, launch_rms, len(ok), scan=scan_data)
    if k == len(ys) - 1:
        return FocusReport("beyond_scan", None, float(rms[k]), None, thr, launch_rms, len(ok), scan=scan_data)
    lo, hi = ys[max(k - 1, 0)], ys[min(k + 1, len(ys) - 1)]
    yf, rf = golden_section(lambda y: rms_radius(ok, y), lo, hi, tol=1e-12)
    if rf > rms[k]:
        yf, rf = ys[k], rms[k]
    return FocusReport("focused", float(yf), float(rf), float(yf - lens_center), thr, launch_rms, len(ok),
                       scan=scan_data)


def adaptive_simpson(f, a, b, rel_tol=1e-7, panels=16, max_depth=20):
    """Adaptive Simpson quadrature of a scalar function.

    The tolerance is relative to the integral of ``|f|`` over a first pass
    of ``panels`` Simpson panels, which keeps noisy integrands (finite
    differences) from recursing forever.
    """
    edges = np.linspace(a, b, panels + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    fe = [f(x) for x in edges]
    fm = [f(x) for x in mids]
    scale = sum(abs(x) for x in fe + fm) * (b - a) / (2 * panels + 1)
    tol = rel_tol * max(scale, 1e-300)

    def simpson(a, b, fa, fm, fb):
        return (b - a) / 6.0 * (fa + 4 * fm + fb)

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(a, m, fa, flm, fm)
        right = simpson(m, b, fm, frm, fb)
        if depth <= 0 or abs(left + right - whole) <= 15 * tol:
            return left + right + (left + right - whole) / 15.0
        return rec(a, m, fa, flm, fm, left, tol / 2, depth - 1) + rec(m, b, fm, frm, fb, right, tol / 2, depth - 1)

    total = 0.0
    for i in range(panels):
        lo, hi = edges[i], edges[i + 1]
        whole = simpson(lo, hi, fe[i], fm[i], fe[i + 1])
        total += rec(lo, hi, fe[i], fm[i], fe[i + 1], whole, tol / panels, max_depth)
    return total


class HarmonicityError(ValueError):
    pass


def thin_lens_oracle(world: World, v, y_range=None, h=None, check=True, rel_tol=1e-7):
    """Paraxial focal length ``m v^2 / integral(d2U/dr2 on axis) dy``.

    Negative values mean a diverging lens.  The check compares the finite
    displacement ``U(0.1a) - U(0)`` with its quadratic prediction and refuses
    potentials that are not harmonic near the axis.
    """
    U = world.potential
    g = world.geometry
    L = g.a if g is not None else 1.0
    if y_range is None:
        half = 0.5 * g.d + 10 * L
        y_range = (-half, half)
    h = 1e-4 * L if h is None else h

    def curv(y):
        pts = np.array([[0.0, y, 0.0], [h, y, 0.0], [-h, y, 0.0]])
        u = np.asarray(U(pts))
        return (u[1] - 2 * u[0] + u[2]) / h**2

    k_int = adaptive_simpson(curv, *y_range, rel_tol=rel_tol)
    if check:
        r1 = 0.1 * L

        def disp(y):
            u = np.asarray(U(np.array([[0.0, y, 0.0], [r1, y, 0.0]])))
            return u[1] - u[0]

        finite = adaptive_simpson(disp, *y_range, rel_tol=rel_tol)
        quad = 0.5 * r1 * r1 * k_int
        if quad == 0 or abs(finite - quad) > 0.1 * abs(quad):
            raise HarmonicityError(
                "potential is not radially harmonic near the axis; trace trajectories instead"
            )
    if k_int == 0:
        return math.inf
    return world.mass * v * v / k_int
