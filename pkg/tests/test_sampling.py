import numpy as np
import pytest

from photondot import fields
from photondot.geometry import WaveguideGeometry
from photondot.sampling import (
    GridFormatError,
    GridSpec,
    extract_isolines,
    read_grid_csv,
    sample_grid,
    write_grid_csv,
    write_isolines_csv,
)


def const(v):
    return lambda p: np.full(len(p), v)


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(x=(0, 1, 1))
    with pytest.raises(ValueError):
        GridSpec(x=(1, 0, 5))
    with pytest.raises(ValueError):
        GridSpec(x=0.0, y=0.0, z=0.0)


def test_constant_field():
    g = sample_grid(const(3.5), GridSpec(x=(0, 1, 2), y=(0, 1, 2)))
    assert g.values.shape == (4,)
    assert np.all(g.values == 3.5)


def test_row_major_order():
    g = sample_grid(lambda p: p[:, 0] * 10 + p[:, 1], GridSpec(x=(0, 2, 3), y=(0, 1, 2)))
    np.testing.assert_array_equal(g.values, [0, 1, 10, 11, 20, 21])
    assert g.as_array().shape == (3, 2)


def test_axisymmetric_dot_samples(dot_geom):
    spec = GridSpec(x=(-1.5, 1.5, 7), y=0.3, z=(-1.5, 1.5, 7))
    g = sample_grid(lambda p: fields.dot_intensity(p, dot_geom).w, spec)
    A = g.as_array()
    assert A[6, 3] == A[0, 3] == A[3, 6] == A[3, 0]


def test_parallel_matches_serial(hole_geom):
    spec = GridSpec(x=(-3, 3, 101), y=(-3, 3, 101), z=0.0)
    f = lambda p: fields.hole_potential(p, hole_geom)
    a = sample_grid(f, spec, threads=1)
    b = sample_grid(f, spec, threads=4)
    np.testing.assert_array_equal(a.values, b.values)


def test_all_flagged_is_error():
    with pytest.raises(ValueError):
        sample_grid(const(1.0), GridSpec(x=(0, 1, 2)), flag_fn=lambda p: np.ones(len(p), bool))


def test_rim_nodes_jittered_or_flagged(hole_geom):
    spec = dict(x=(-1, 1, 3), y=(-1.5, 1.5, 3), z=0.0)
    flag = lambda p: fields.rim_mask(p, hole_geom)
    f = lambda p: fields.hole_potential(p, hole_geom)
    off = sample_grid(f, GridSpec(**spec, jitter=False), flag, geometry=hole_geom)
    on = sample_grid(f, GridSpec(**spec, jitter=True), flag, geometry=hole_geom)
    assert off.flags.sum() == 4
    assert on.flags.sum() == 0
    assert np.all(np.isfinite(on.values))


def test_fig3_dot_map():
    g = WaveguideGeometry.dot(1.0, 2.0)
    spec = GridSpec(x=(-4, 4, 201), y=(-3, 3, 201), z=0.0)
    grid = sample_grid(lambda p: fields.dot_intensity(p, g).w, spec, geometry=g)
    p, v = grid.points, grid.values
    r = np.abs(p[:, 0])
    rim_dist = np.min([np.hypot(r - 1, p[:, 1] - s) for s in (-1, 1)], axis=0)
    k = np.argmax(np.where(rim_dist > 0.1, v, -np.inf))
    np.testing.assert_array_equal(p[k], [0, 0, 0])
    axis = v[(p[:, 0] == 0) & (p[:, 1] >= 1.2)]
    assert np.all(np.diff(axis) < 0) and axis[-1] < 0.01 * v[k]


# ------------------------------------------------------------------- isolines

def ramp_grid():
    return sample_grid(lambda p: p[:, 0] + 2 * p[:, 1], GridSpec(x=(0, 4, 9), y=(0, 2, 5)))


def test_ramp_gives_one_straight_line():
    iso = extract_isolines(ramp_grid(), [3.0])
    [poly] = iso.polylines[0]
    np.testing.assert_allclose(poly[:, 0] + 2 * poly[:, 1], 3.0, rtol=1e-12)
    assert len(poly) >= 3


def test_level_outside_range_is_empty():
    iso = extract_isolines(ramp_grid(), [100.0, 1.0])
    assert iso.levels == [1.0, 100.0]
    assert iso.polylines[1] == []


def _interp(grid, u, v):
    ua, va = grid.spec.varying
    U, V = grid.spec.axis_values(ua), grid.spec.axis_values(va)
    F = grid.as_array()
    i = min(max(np.searchsorted(U, u, side="right") - 1, 0), len(U) - 2)
    j = min(max(np.searchsorted(V, v, side="right") - 1, 0), len(V) - 2)
    s = (u - U[i]) / (U[i + 1] - U[i])
    t = (v - V[j]) / (V[j + 1] - V[j])
    return (F[i, j] * (1 - s) * (1 - t) + F[i + 1, j] * s * (1 - t)
            + F[i, j + 1] * (1 - s) * t + F[i + 1, j + 1] * s * t)


def test_vertices_lie_on_edges_at_level(hole_geom):
    spec = GridSpec(x=(-6, 6, 61), y=(-4.5, 4.5, 46), z=0.0)
    grid = sample_grid(lambda p: fields.hole_potential(p, hole_geom), spec, geometry=hole_geom)
    levels = [-1.0, -0.3, 0.7, 1.2]
    iso = extract_isolines(grid, levels)
    xs, ys = spec.axis_values("x"), spec.axis_values("y")
    for lev, polys in zip(iso.levels, iso.polylines):
        assert polys
        for poly in polys:
            for u, v in poly:
                on_edge = np.any(np.isclose(u, xs, rtol=0, atol=1e-12)) or np.any(np.isclose(v, ys, rtol=0, atol=1e-12))
                assert on_edge
                assert _interp(grid, u, v) == pytest.approx(lev, rel=1e-9, abs=1e-12)


def test_zero_isoline_is_midplane(hole_geom):
    spec = GridSpec(x=(-6, 6, 61), y=(-4.5, 4.5, 91), z=0.0)
    grid = sample_grid(lambda p: fields.hole_potential(p, hole_geom), spec, geometry=hole_geom)
    [poly] = extract_isolines(grid, [0.0]).polylines[0]
    np.testing.assert_array_equal(poly[:, 1], 0.0)
    assert poly[0, 0] == -6 and poly[-1, 0] == 6


def test_isolines_bulge_through_apertures(hole_geom):
    spec = GridSpec(x=(-6, 6, 121), y=(-4.5, 4.5, 181), z=0.0)
    grid = sample_grid(lambda p: fields.hole_potential(p, hole_geom), spec, geometry=hole_geom)
    polys = extract_isolines(grid, [1.25]).polylines[0]
    pts = np.concatenate(polys)
    far = pts[np.abs(pts[:, 0]) > 5]
    near = pts[np.abs(pts[:, 0]) < 0.05]
    assert np.all(far[:, 1] > -1.5)
    assert np.min(near[:, 1]) < -1.5


@pytest.mark.parametrize("centre,expect", [(0.6, 5), (1.4, 4)])
def test_saddle_cells_follow_cell_average(centre, expect):
    # every cell is a checkerboard saddle; the centre node moves the cell averages
    # across the level.  Below it the four high corners and the centre are isolated
    # (4 corner arcs + 1 loop); above it the four low edge nodes are cut off instead.
    F = np.array([[1.0, 0.0, 1.0], [0.0, centre, 0.0], [1.0, 0.0, 1.0]])
    g = sample_grid(lambda p: F[(p[:, 0]).astype(int), (p[:, 1]).astype(int)], GridSpec(x=(0, 2, 3), y=(0, 2, 3)))
    polys = extract_isolines(g, [0.5]).polylines[0]
    assert len(polys) == expect
    if expect == 5:
        loops = [p for p in polys if np.array_equal(p[0], p[-1])]
        assert len(loops) == 1
    again = extract_isolines(g, [0.5]).polylines[0]
    for x, y in zip(polys, again):
        np.testing.assert_array_equal(x, y)


# ------------------------------------------------------------------- CSV

def _hole_grid(hole_geom, jitter=True):
    spec = GridSpec(x=(-2, 2, 21), y=(-2, 2, 21), z=0.0, jitter=jitter)
    return sample_grid(lambda p: fields.hole_potential(p, hole_geom), spec,
                       lambda p: fields.rim_mask(p, hole_geom), geometry=hole_geom,
                       metadata={"field": "hole_potential", "normalization": "E0*length"})


def test_round_trip_is_byte_identical(tmp_path, hole_geom):
    g = _hole_grid(hole_geom)
    write_grid_csv(g, tmp_path / "a.csv")
    back = read_grid_csv(tmp_path / "a.csv")
    write_grid_csv(back, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    np.testing.assert_array_equal(back.values, g.values)
    assert back.metadata == g.metadata


def test_header_contract(tmp_path, hole_geom):
    # nodes land exactly on the rims, so some rows are flagged
    spec = GridSpec(x=(-2, 2, 5), y=(-1.5, 1.5, 3), z=0.0, jitter=False)
    g = sample_grid(lambda p: fields.hole_potential(p, hole_geom), spec, lambda p: fields.rim_mask(p, hole_geom),
                    geometry=hole_geom, metadata={"field": "hole_potential", "normalization": "E0*length"})
    write_grid_csv(g, tmp_path / "a.csv")
    raw = (tmp_path / "a.csv").read_bytes()
    assert b"\r" not in raw and b"nan" not in raw.lower()
    text = raw.decode()
    for key in ("geometry.a=", "geometry.d=", "geometry.lambda=", "field=", "normalization=", "version="):
        assert f"# {key}" in text
    rows = [l for l in text.splitlines() if not l.startswith("#")]
    assert rows[0] == "x,y,z,value,flag"
    assert sum(r.endswith(",1") for r in rows[1:]) > 0


def test_vector_grid_round_trip(tmp_path, hole_geom):
    spec = GridSpec(x=(-2, 2, 5), y=(-2, 2, 5), z=0.0)
    g = sample_grid(lambda p: fields.hole_field(p, hole_geom), spec, geometry=hole_geom)
    write_grid_csv(g, tmp_path / "v.csv")
    assert "x,y,z,vx,vy,vz,flag" in (tmp_path / "v.csv").read_text()
    np.testing.assert_array_equal(read_grid_csv(tmp_path / "v.csv").values, g.values)


def test_nan_never_written(tmp_path):
    g = sample_grid(lambda p: np.where(p[:, 0] > 0.5, np.nan, 1.0), GridSpec(x=(0, 1, 3)))
    write_grid_csv(g, tmp_path / "n.csv")
    assert "nan" not in (tmp_path / "n.csv").read_text().lower()
    assert g.flags.tolist() == [False, False, True]


@pytest.mark.parametrize("mangle,line", [
    (lambda L: L[:-1], None),
    (lambda L: [l if i != 12 else "x,y,z,val,flag" for i, l in enumerate(L)], 13),
    (lambda L: L[:20] + ["1,2,zz,4,0"] + L[21:], 21),
])
def test_parse_errors_carry_line_numbers(tmp_path, hole_geom, mangle, line):
    write_grid_csv(_hole_grid(hole_geom), tmp_path / "a.csv")
    L = (tmp_path / "a.csv").read_text().splitlines()
    assert L[12] == "x,y,z,value,flag"
    (tmp_path / "b.csv").write_text("\n".join(mangle(L)) + "\n")
    with pytest.raises(GridFormatError, match=r"b\.csv:\d+"):
        read_grid_csv(tmp_path / "b.csv")
    if line is not None:
        with pytest.raises(GridFormatError, match=rf"b\.csv:{line}:"):
            read_grid_csv(tmp_path / "b.csv")


def test_io_errors_name_the_path(tmp_path, hole_geom):
    with pytest.raises(OSError, match="nowhere"):
        write_grid_csv(_hole_grid(hole_geom), tmp_path / "nowhere" / "a.csv")
    with pytest.raises(OSError, match="missing"):
        read_grid_csv(tmp_path / "missing.csv")


def test_isoline_csv(tmp_path):
    iso = extract_isolines(ramp_grid(), [3.0, 5.0])
    write_isolines_csv(iso, tmp_path / "i.csv", {"field": "ramp"})
    lines = (tmp_path / "i.csv").read_text().splitlines()
    assert lines[0] == "# field=ramp"
    assert "level,polyline_id,vertex_id,x,y" in lines
    body = lines[lines.index("level,polyline_id,vertex_id,x,y") + 1:]
    assert body[0].startswith("3,0,0,")
