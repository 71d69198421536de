"""Grid sampling, marching-squares isolines and the grid CSV format.

Grid CSV layout::

    # geometry.a=1
    # field=hole_potential
    # grid.x=-3:3:121
    # grid.y=-4.5:4.5:181
    # grid.z=0
    x,y,z,value,flag
    -3,-4.5,0,1.5,0
    ...

Comment lines carry ``key=value`` metadata in insertion order, numbers use
17 significant digits and rows are row-major over the varying axes (the last
varying axis changes fastest).  Vector grids use ``x,y,z,vx,vy,vz,flag``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import EPS_RIM, WaveguideGeometry

AXES = ("x", "y", "z")
NODE_CHUNK = 4096


class GridFormatError(ValueError):
    pass


def fmt(v) -> str:
    return "%.17g" % v


def _parse_axis(v):
    if isinstance(v, (int, float)):
        return float(v)
    lo, hi, n = v
    return (float(lo), float(hi), int(n))


@dataclass(frozen=True)
class GridSpec:
    """Each axis is either a fixed coordinate or ``(min, max, count)``."""

    x: object = 0.0
    y: object = 0.0
    z: object = 0.0
    jitter: bool = True

    def __post_init__(self):
        for name in AXES:
            ax = _parse_axis(getattr(self, name))
            if isinstance(ax, tuple):
                lo, hi, n = ax
                if n < 2:
                    raise ValueError(f"grid axis {name} needs at least 2 nodes, got {n}")
                if not lo < hi:
                    raise ValueError(f"grid axis {name} needs min < max, got {lo} .. {hi}")
            object.__setattr__(self, name, ax)
        if not self.varying:
            raise ValueError("grid needs at least one varying axis")

    @property
    def varying(self):
        return [a for a in AXES if isinstance(getattr(self, a), tuple)]

    @property
    def shape(self):
        return tuple(getattr(self, a)[2] for a in self.varying)

    def axis_values(self, name):
        ax = getattr(self, name)
        if isinstance(ax, tuple):
            return np.linspace(*ax)
        return np.array([ax])

    def nodes(self) -> np.ndarray:
        X, Y, Z = np.meshgrid(*(self.axis_values(a) for a in AXES), indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], -1)

    def metadata(self) -> dict:
        out = {}
        for a in AXES:
            ax = getattr(self, a)
            out[f"grid.{a}"] = ":".join(fmt(v) for v in ax) if isinstance(ax, tuple) else fmt(ax)
        out["grid.jitter"] = "1" if self.jitter else "0"
        return out

    @classmethod
    def from_metadata(cls, meta):
        kw = {}
        for a in AXES:
            raw = meta[f"grid.{a}"]
            parts = raw.split(":")
            kw[a] = (float(parts[0]), float(parts[1]), int(parts[2])) if len(parts) == 3 else float(raw)
        kw["jitter"] = meta.get("grid.jitter", "1") == "1"
        return cls(**kw)


@dataclass
class Grid:
    spec: GridSpec
    points: np.ndarray  # (n, 3)
    values: np.ndarray  # (n,) or (n, 3)
    flags: np.ndarray  # (n,) bool
    metadata: dict = field(default_factory=dict)

    @property
    def is_vector(self):
        return self.values.ndim == 2

    def as_array(self):
        """Values reshaped onto the varying axes."""
        return self.values.reshape(self.spec.shape + self.values.shape[1:])


def _jitter_nodes(pts, g: WaveguideGeometry):
    """Move nodes lying inside the rim exclusion ring radially out of it."""
    r = np.hypot(pts[:, 0], pts[:, 2])
    out = pts.copy()
    for yc in (-0.5 * g.d, 0.5 * g.d):
        near = np.hypot(r / g.a - 1.0, (pts[:, 1] - yc) / g.a) < EPS_RIM
        if np.any(near):
            rn = g.a * (1.0 + 2 * EPS_RIM)
            with np.errstate(invalid="ignore", divide="ignore"):
                s = np.where(r[near] > 0, rn / r[near], 0.0)
            out[near, 0] *= s
            out[near, 2] *= s
            out[near, 1] = yc
    return out


def sample_grid(fn, spec: GridSpec, flag_fn=None, geometry=None, metadata=None, threads=1) -> Grid:
    """Evaluate ``fn`` at every node of ``spec``.

    ``fn`` maps points ``(n, 3)`` to ``(n,)`` or ``(n, 3)``; ``flag_fn`` marks
    rim-clamped nodes.  Nodes are split into fixed-size chunks, so the thread
    count never changes the output.
    """
    pts = spec.nodes()
    ev = _jitter_nodes(pts, geometry) if (spec.jitter and geometry is not None) else pts
    chunks = [slice(i, min(i + NODE_CHUNK, len(ev))) for i in range(0, len(ev), NODE_CHUNK)]

    def run(sl):
        v = np.asarray(fn(ev[sl]), dtype=float)
        f = np.asarray(flag_fn(ev[sl]), dtype=bool) if flag_fn is not None else np.zeros(len(ev[sl]), bool)
        return v, np.broadcast_to(f, (len(ev[sl]),))

    if threads and threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(sl) for sl in chunks]
    values = np.concatenate([p[0] for p in parts])
    flags = np.concatenate([p[1] for p in parts])
    if flags.all():
        raise ValueError("every grid node is rim-flagged")
    bad = ~np.isfinite(values)
    if bad.any():
        # clamp non-finite samples so NaN never reaches a file
        values = np.where(bad, 0.0, values)
        flags = flags | (bad.any(axis=-1) if values.ndim == 2 else bad)
    meta = {"version": __version__}
    if geometry is not None:
        meta.update({k: fmt(v) if isinstance(v, float) else str(v) for k, v in geometry.metadata().items()})
    meta.update({k: str(v) for k, v in (metadata or {}).items()})
    meta.update(spec.metadata())
    return Grid(spec=spec, points=pts, values=values, flags=flags, metadata=meta)


# --------------------------------------------------------------------------
# CSV

def _write_lines(path, lines):
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines))
            fh.write("\n")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror or e}") from e


def write_grid_csv(grid: Grid, dest):
    lines = [f"# {k}={v}" for k, v in grid.metadata.items()]
    if grid.is_vector:
        lines.append("x,y,z,vx,vy,vz,flag")
        for p, v, f in zip(grid.points, grid.values, grid.flags):
            lines.append(",".join([*map(fmt, p), *map(fmt, v), "1" if f else "0"]))
    else:
        lines.append("x,y,z,value,flag")
        for p, v, f in zip(grid.points, grid.values, grid.flags):
            lines.append(",".join([*map(fmt, p), fmt(v), "1" if f else "0"]))
    _write_lines(dest, lines)


def read_grid_csv(src) -> Grid:
    path = Path(src)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise OSError(f"cannot read {path}: {e.strerror or e}") from e
    meta = {}
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        body = lines[i][2:] if lines[i].startswith("# ") else lines[i][1:]
        if "=" not in body:
            raise GridFormatError(f"{path}:{i + 1}: metadata line without '='")
        k, v = body.split("=", 1)
        meta[k] = v
        i += 1
    if i >= len(lines):
        raise GridFormatError(f"{path}:{i + 1}: missing header row")
    header = lines[i].split(",")
    if header == ["x", "y", "z", "value", "flag"]:
        nval = 1
    elif header == ["x", "y", "z", "vx", "vy", "vz", "flag"]:
        nval = 3
    else:
        raise GridFormatError(f"{path}:{i + 1}: unexpected header {lines[i]!r}")
    try:
        spec = GridSpec.from_metadata(meta)
    except (KeyError, ValueError) as e:
        raise GridFormatError(f"{path}: bad grid metadata: {e}") from e
    rows = lines[i + 1:]
    n = math.prod(spec.shape)
    if len(rows) != n:
        raise GridFormatError(f"{path}:{i + 2 + min(len(rows), n)}: expected {n} rows, found {len(rows)}")
    pts = np.empty((n, 3))
    vals = np.empty((n, nval))
    flags = np.empty(n, dtype=bool)
    for k, row in enumerate(rows):
        cols = row.split(",")
        if len(cols) != 4 + nval:
            raise GridFormatError(f"{path}:{i + 2 + k}: expected {4 + nval} columns, found {len(cols)}")
        try:
            pts[k] = [float(c) for c in cols[:3]]
            vals[k] = [float(c) for c in cols[3:3 + nval]]
        except ValueError as e:
            raise GridFormatError(f"{path}:{i + 2 + k}: {e}") from e
        if cols[-1] not in ("0", "1"):
            raise GridFormatError(f"{path}:{i + 2 + k}: flag must be 0 or 1")
        flags[k] = cols[-1] == "1"
    return Grid(spec=spec, points=pts, values=vals[:, 0] if nval == 1 else vals, flags=flags, metadata=meta)


# --------------------------------------------------------------------------
# isolines

@dataclass
class IsolineSet:
    levels: list
    polylines: list  # per level: list of (m, 2) arrays in the plane's (u, v) coordinates
    axes: tuple = ("x", "y")


# edges of a cell, corners numbered 0:(i,j) 1:(i+1,j) 2:(i+1,j+1) 3:(i,j+1)
_EDGE_CORNERS = ((0, 1), (1, 2), (3, 2), (0, 3))
_CASES = {
    1: [(0, 3)], 2: [(0, 1)], 3: [(1, 3)], 4: [(1, 2)], 6: [(0, 2)], 7: [(2, 3)],
    8: [(2, 3)], 9: [(0, 2)], 11: [(1, 2)], 12: [(1, 3)], 13: [(0, 1)], 14: [(0, 3)],
}


def _edge_key(i, j, e):
    # global identity of a cell edge, shared between neighbouring cells
    return {0: ("u", i, j), 1: ("v", i + 1, j), 2: ("u", i, j + 1), 3: ("v", i, j)}[e]


def _link(segments):
    """Join edge-keyed segments into polylines (open chains first, then loops)."""
    adj = {}
    for s, (a, b) in enumerate(segments):
        adj.setdefault(a, []).append(s)
        adj.setdefault(b, []).append(s)
    used = [False] * len(segments)
    chains = []

    def walk(start):
        chain = [start]
        cur = start
        while True:
            nxt = [s for s in adj[cur] if not used[s]]
            if not nxt:
                return chain
            s = nxt[0]
            used[s] = True
            a, b = segments[s]
            cur = b if a == cur else a
            chain.append(cur)
            if cur == start:
                return chain

    for key in sorted(k for k, v in adj.items() if len(v) == 1):
        if any(not used[s] for s in adj[key]):
            chains.append(walk(key))
    for s in range(len(segments)):
        if not used[s]:
            chains.append(walk(segments[s][0]))
    return chains


def extract_isolines(grid: Grid, levels) -> IsolineSet:
    """Marching-squares contours on a 2-D scalar grid.

    Corners strictly above the level count as inside; ambiguous saddle cells
    are resolved by comparing the cell-average value with the level.
    """
    if grid.is_vector:
        raise ValueError("isolines need a scalar grid")
    if len(grid.spec.varying) != 2:
        raise ValueError("isolines need exactly two varying axes")
    ua, va = grid.spec.varying
    u = grid.spec.axis_values(ua)
    v = grid.spec.axis_values(va)
    F = grid.as_array()
    levels = sorted(float(l) for l in levels)
    out = []
    nu, nv = F.shape
    for lev in levels:
        inside = F > lev
        pts = {}

        def point(key):
            if key not in pts:
                kind, i, j = key
                if kind == "u":
                    f0, f1 = F[i, j], F[i + 1, j]
                    t = (lev - f0) / (f1 - f0)
                    pts[key] = (u[i] + t * (u[i + 1] - u[i]), v[j])
                else:
                    f0, f1 = F[i, j], F[i, j + 1]
                    t = (lev - f0) / (f1 - f0)
                    pts[key] = (u[i], v[j] + t * (v[j + 1] - v[j]))
            return pts[key]

        segs = []
        idx = (inside[:-1, :-1].astype(int) | (inside[1:, :-1] << 1) | (inside[1:, 1:] << 2) | (inside[:-1, 1:] << 3))
        for i, j in zip(*np.nonzero((idx != 0) & (idx != 15))):
            case = int(idx[i, j])
            if case in (5, 10):
                avg = 0.25 * (F[i, j] + F[i + 1, j] + F[i + 1, j + 1] + F[i, j + 1])
                centre_in = avg > lev
                # 5: corners 0 and 2 inside; 10: corners 1 and 3 inside.  A connected
                # inside band cuts off the two outside corners, otherwise the inside ones.
                cut_1_3 = [(0, 1), (2, 3)]  # isolates corners 1 and 3
                cut_0_2 = [(0, 3), (1, 2)]  # isolates corners 0 and 2
                if case == 5:
                    pairs = cut_1_3 if centre_in else cut_0_2
                else:
                    pairs = cut_0_2 if centre_in else cut_1_3
            else:
                pairs = _CASES[case]
            for e0, e1 in pairs:
                segs.append((_edge_key(i, j, e0), _edge_key(i, j, e1)))
        polys = []
        for chain in _link(segs):
            arr = np.array([point(k) for k in chain])
            # drop repeated vertices where the contour passes exactly through a node
            keep = np.ones(len(arr), bool)
            keep[1:] = np.any(arr[1:] != arr[:-1], axis=1)
            polys.append(arr[keep])
        out.append(polys)
    return IsolineSet(levels=levels, polylines=out, axes=(ua, va))


def write_isolines_csv(iso: IsolineSet, dest, metadata=None):
    lines = [f"# {k}={v}" for k, v in (metadata or {}).items()]
    lines.append(f"# isoline.axes={iso.axes[0]},{iso.axes[1]}")
    lines.append("level,polyline_id,vertex_id,x,y")
    for lev, polys in zip(iso.levels, iso.polylines):
        for pid, poly in enumerate(polys):
            for vid, (a, b) in enumerate(poly):
                lines.append(f"{fmt(lev)},{pid},{vid},{fmt(a)},{fmt(b)}")
    _write_lines(dest, lines)
