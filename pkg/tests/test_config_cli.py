import json

import pytest

from photondot import __version__
from photondot.cli import EXIT_CONFIG, EXIT_IO, EXIT_NO_TRAP, EXIT_OK, build_parser, main
from photondot.config import BUNDLED, ConfigError, load_config, parse_config, read_raw, with_parameter

SMALL_GRID = {"x": [-2.0, 2.0, 21], "y": [-1.0, 1.0, 11], "z": 0.0}
HOLE = {"geometry": {"lambda": 20.0}}


def write_cfg(tmp_path, raw, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return str(p)


def run(tmp_path, command, raw, out="out", *extra):
    cfg = write_cfg(tmp_path, raw)
    return main([command, "--config", cfg, "--out", str(tmp_path / out), "--quiet", *extra])


def report(path):
    lines = (path / "report.txt").read_text().splitlines()
    return dict(line.split("=", 1) for line in lines)


def small_dot(**geo):
    return {"geometry": {"a": 1.0, "d": 2.0, "mode": "dot", **geo}, "output": {"grid": SMALL_GRID}}


# ------------------------------------------------------------------ config

@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_configs_validate(name):
    load_config(name)


def test_defaults_fill_in():
    cfg = parse_config(HOLE)
    assert cfg.geometry.a == 1.0 and cfg.geometry.mode == "hole"
    assert cfg.build_beam().r0 == pytest.approx(0.2)
    assert cfg.dt() == pytest.approx(0.01 / 10.0)


@pytest.mark.parametrize(
    "raw, where",
    [
        ({"geometry": {"radius": 1.0}}, "geometry.radius"),
        ({"geometry": {"a": -1.0, "lambda": 20.0}}, "geometry"),
        ({**HOLE, "dynamics": {"beam": {"r0": 2.0}}}, "dynamics.beam"),
        ({**HOLE, "output": {"grid": {"x": [-1, 1, 1]}}}, "output.grid"),
        ({**HOLE, "sweep": {"parameter": "geometry.a", "values": [1.0, 1.0]}}, "sweep.values"),
        ({**HOLE, "sweep": {"parameter": "geometry.nope", "values": [1.0]}}, "sweep.parameter"),
        ({**HOLE, "units": {"length_m": 1e-9}}, "units"),
        ({**HOLE, "threads": 0}, "threads"),
    ],
)
def test_invalid_configs_name_the_key(raw, where):
    with pytest.raises(ConfigError) as e:
        parse_config(raw)
    assert where in str(e.value)


def test_ka_parameter_sets_radius():
    raw = with_parameter(small_dot(), "ka", 0.05)
    cfg = parse_config(raw)
    assert cfg.build_geometry().ka == pytest.approx(0.05)


def test_digest_ignores_threads_and_output_dir():
    a = parse_config({**HOLE, "threads": 1, "output": {"dir": "x"}})
    b = parse_config({**HOLE, "threads": 8, "output": {"dir": "y"}})
    c = parse_config({"geometry": {"a": 0.5, "lambda": 20.0}})
    assert a.digest() == b.digest() != c.digest()


def test_bad_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "geometry": {,\n}')
    with pytest.raises(ConfigError, match=r"bad.json:2"):
        read_raw(p)


# --------------------------------------------------------------------- CLI

def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["--help"])
    text = capsys.readouterr().out
    for key in ("geometry.lambda", "optics.evanescent.U1", "dynamics.beam.seed", "output.grid.x",
                "trap.bound_periods", "sweep.parameter", "units.length_m", "threads"):
        assert key in text
    assert "exit codes" in text


def test_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert __version__ in capsys.readouterr().out


def test_config_error_exit_code(tmp_path, capsys):
    assert run(tmp_path, "hole-map", {"geometry": {"radius": 1.0}}) == EXIT_CONFIG
    assert "geometry.radius" in capsys.readouterr().err


def test_wrong_mode_is_config_error(tmp_path):
    assert run(tmp_path, "dot-map", {"geometry": {"mode": "hole", "lambda": 20.0}}) == EXIT_CONFIG


def test_missing_config_is_io_error(tmp_path):
    assert main(["hole-map", "--config", str(tmp_path / "nope.json"), "--quiet"]) == EXIT_IO


def test_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    raw = {"geometry": {"lambda": 20.0}, "output": {"grid": SMALL_GRID}}
    assert run(tmp_path, "hole-map", raw, "file/sub") == EXIT_IO


def test_hole_map_outputs(tmp_path):
    raw = {"geometry": {"lambda": 20.0}, "output": {"grid": SMALL_GRID, "isoline_levels": [-0.5, 0.0, 0.5]}}
    assert run(tmp_path, "hole-map", raw) == EXIT_OK
    out = tmp_path / "out"
    assert {p.name for p in out.iterdir()} == {"potential.csv", "intensity.csv", "isolines.csv", "report.txt"}
    rep = report(out)
    assert rep["version"] == __version__
    assert rep["config_digest"] == parse_config(raw).digest()
    assert "# config_digest=" + rep["config_digest"] in (out / "potential.csv").read_text()


def test_empty_level_list_writes_only_grids(tmp_path):
    raw = {"geometry": {"lambda": 20.0}, "output": {"grid": SMALL_GRID}}
    assert run(tmp_path, "hole-map", raw) == EXIT_OK
    assert not (tmp_path / "out" / "isolines.csv").exists()
    assert report(tmp_path / "out")["isoline_polylines"] == "0"


def test_fig3_peak_is_at_centre(tmp_path, capsys):
    assert main(["dot-map", "--config", "fig3", "--out", str(tmp_path), "--single"]) == EXIT_OK
    rep = report(tmp_path)
    assert [float(v) for v in rep["interior_max_at"].split()] == [0.0, 0.0, 0.0]
    assert "center excess ratio" in capsys.readouterr().out
    assert rep["override.single"] == "true"
    assert (tmp_path / "intensity_single.csv").exists()


def test_trap_dot_finds_minimum(tmp_path):
    assert main(["trap", "--config", "trap_dot", "--out", str(tmp_path), "--quiet"]) == EXIT_OK
    rep = report(tmp_path)
    assert rep["seed.0.classification"] == "minimum"
    assert float(rep["depth"]) > 0


def test_blue_hole_has_no_trap(tmp_path):
    raw = {"geometry": {"lambda": 20.0}, "optics": {"detuning": "blue"}}
    assert run(tmp_path, "trap", raw) == EXIT_NO_TRAP
    assert report(tmp_path / "out")["seed.0.classification"].startswith("saddle")


def test_sweep_summary_and_single_value_equivalence(tmp_path):
    base = small_dot()
    raw = {**base, "sweep": {"parameter": "ka", "values": [0.1, 0.05], "command": "dot-map"}}
    assert run(tmp_path, "sweep", raw, "sw") == EXIT_OK
    summary = (tmp_path / "sw" / "summary.csv").read_text().splitlines()
    rows = [r for r in summary if not r.startswith("#")]
    assert rows[0].startswith("parameter,value,status")
    assert len(rows) == 3 and all(",ok," in r for r in rows[1:])

    direct = with_parameter(base, "ka", 0.05)
    assert run(tmp_path, "dot-map", direct, "direct") == EXIT_OK
    for name in ("report.txt", "intensity.csv"):
        assert (tmp_path / "sw" / "ka=0.05" / name).read_bytes() == (tmp_path / "direct" / name).read_bytes()


def test_sweep_records_failing_values(tmp_path):
    raw = {**small_dot(), "sweep": {"parameter": "geometry.a", "values": [0.5, 3.0]}}
    assert run(tmp_path, "sweep", raw, "sw") == EXIT_OK
    rows = [r for r in (tmp_path / "sw" / "summary.csv").read_text().splitlines() if not r.startswith("#")]
    assert ",ok," in rows[1]
    assert ",config_error,2," in rows[2]


def test_focus_repeat_is_byte_identical(tmp_path):
    raw = {"geometry": {"lambda": 20.0}, "optics": {"detuning": "blue"},
           "dynamics": {"beam": {"count": 8, "seed": 3, "sigma_v": 0.01}, "dt": 0.01},
           "output": {"trajectories": True}}
    assert run(tmp_path, "focus", raw, "one") == EXIT_OK
    assert run(tmp_path, "focus", raw, "two", "--threads", "3") == EXIT_OK
    for name in ("report.txt", "trajectories.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()
