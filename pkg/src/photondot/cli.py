"""Command-line entry point: ``photondot <command> --config FILE``.

Exit codes: 0 success, 2 invalid config, 3 numerical non-convergence or a
blocked beam, 4 I/O failure, 5 converged but no trap (no minimum) found.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, fields
from .analysis import ConvergenceError, DegenerateError, RimError, find_critical_point, trap_depth
from .config import ConfigError, RunConfig, describe_keys, parse_config, read_raw, with_parameter
from .dynamics import AtomState, HarmonicityError, focal_analysis, launch_beam, thin_lens_oracle, trace
from .sampling import extract_isolines, fmt, sample_grid, write_grid_csv, write_isolines_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO, EXIT_NO_TRAP = 0, 2, 3, 4, 5
RIM_MARGIN = 0.1  # in units of a, for the interior-maximum search
COMMANDS = ("hole-map", "dot-map", "trap", "focus", "sweep")


class CommandFailed(RuntimeError):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


class Run:
    """One command invocation: validated config, output directory, console."""

    def __init__(self, cfg: RunConfig, out: Path, threads: int, quiet=False, overrides=None):
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.quiet = quiet
        self.overrides = dict(overrides or {})

    def say(self, msg):
        if not self.quiet:
            print(msg)

    def header(self, **extra):
        meta = {"version": __version__, "config_digest": self.cfg.digest()}
        meta.update({f"override.{k}": v for k, v in self.overrides.items()})
        meta.update(extra)
        return meta

    def write_report(self, items: dict, name="report.txt"):
        lines = [f"{k}={v}" for k, v in {**self.header(), **items}.items()]
        path = self.out / name
        try:
            path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
        except OSError as e:
            raise OSError(f"cannot write {path}: {e.strerror or e}") from e


def _vec(v):
    return " ".join(fmt(x) for x in np.ravel(v))


def _num(v):
    return "nan" if v is None else fmt(v)


# --------------------------------------------------------------------------
# commands

def cmd_hole_map(run: Run) -> dict:
    cfg = run.cfg
    if cfg.geometry.mode != "hole":
        raise ConfigError("geometry.mode: hole-map needs mode 'hole'")
    g = cfg.build_geometry()
    spec = cfg.build_grid()
    flag = lambda p: fields.rim_mask(p, g)
    phi = sample_grid(lambda p: fields.hole_potential(p, g), spec, flag, geometry=g, threads=run.threads,
                      metadata=run.header(field="hole_potential", normalization="phi in units of E0*length"))
    inten = sample_grid(lambda p: fields.hole_intensity(p, g), spec, flag, geometry=g, threads=run.threads,
                        metadata=run.header(field="hole_intensity", normalization="|E|^2/E0^2 (1 in the open gap)"))
    write_grid_csv(phi, run.out / "potential.csv")
    write_grid_csv(inten, run.out / "intensity.csv")
    n_lines = 0
    if cfg.output.isoline_levels:
        if len(spec.varying) != 2:
            raise ConfigError("output.grid: isolines need exactly two varying axes")
        iso = extract_isolines(phi, cfg.output.isoline_levels)
        write_isolines_csv(iso, run.out / "isolines.csv", phi.metadata)
        n_lines = sum(len(p) for p in iso.polylines)
    centre = float(fields.hole_intensity(np.zeros(3), g))
    items = {
        "command": "hole-map",
        "center_intensity": fmt(centre),
        "grid_nodes": phi.values.size,
        "rim_flagged_nodes": int(phi.flags.sum()),
        "isoline_levels": len(cfg.output.isoline_levels),
        "isoline_polylines": n_lines,
    }
    run.write_report(items)
    run.say(f"hole-map: {phi.values.size} nodes, centre intensity {centre:.6g}, {n_lines} isoline polylines")
    return {"center_intensity": centre}


def cmd_dot_map(run: Run) -> dict:
    cfg = run.cfg
    if cfg.geometry.mode != "dot":
        raise ConfigError("geometry.mode: dot-map needs mode 'dot'")
    g = cfg.build_geometry()
    spec = cfg.build_grid()
    pot = cfg.build_potential()
    norm = "<E^2>/E0^2 (2cos^2(pi y/d) without apertures)"

    def sample(fn, name):
        return sample_grid(lambda p: np.asarray(fn(p).w), spec, lambda p: np.asarray(fn(p).rim), geometry=g,
                           threads=run.threads, metadata=run.header(field=name, normalization=norm))

    if cfg.selector == "lattice":
        grid = sample(lambda p: fields.lattice_intensity(p, g, pot.lattice), "lattice_intensity")
    else:
        grid = sample(lambda p: fields.dot_intensity(p, g), "dot_intensity")
    write_grid_csv(grid, run.out / "intensity.csv")
    if cfg.output.single:
        single = sample(lambda p: fields.single_aperture_dot_intensity(p, g), "single_aperture_dot_intensity")
        write_grid_csv(single, run.out / "intensity_single.csv")
    pair = fields.center_excess(g)
    one = fields.center_excess(g, single=True)
    ratio = pair / one
    k = int(np.argmax(np.where(grid.flags, -np.inf, grid.values)))
    # the ideal-conductor field diverges at the rims; look for the interior peak away from them
    r = np.hypot(grid.points[:, 0], grid.points[:, 2])
    rim_dist = np.min([np.hypot(r - g.a, grid.points[:, 1] - yc) for yc in (-g.d / 2, g.d / 2)], axis=0)
    ki = int(np.argmax(np.where(grid.flags | (rim_dist < RIM_MARGIN * g.a), -np.inf, grid.values)))
    items = {
        "command": "dot-map",
        "ka": fmt(g.ka),
        "center_excess": fmt(pair),
        "center_excess_single": fmt(one),
        "center_excess_ratio": fmt(ratio),
        "grid_max_value": fmt(grid.values[k]),
        "grid_max_at": _vec(grid.points[k]),
        "interior_max_value": fmt(grid.values[ki]),
        "interior_max_at": _vec(grid.points[ki]),
        "grid_nodes": grid.values.size,
        "rim_flagged_nodes": int(grid.flags.sum()),
    }
    run.write_report(items)
    run.say(f"dot-map: ka={g.ka:.6g}, interior max {grid.values[ki]:.6g} at ({_vec(grid.points[ki])})")
    if cfg.output.single:
        run.say(f"center excess ratio pair/single = {ratio:.6f}")
    return {"center_excess_ratio": ratio}


def _bound_check(run, pot, cp, rep):
    """Trace an atom from near the minimum for the configured number of slowest periods."""
    cfg = run.cfg
    from .dynamics import World

    w = rep.harmonic_frequencies
    T = 2 * math.pi / float(np.min(w))
    dt = 2 * math.pi / float(np.max(w)) / 100
    off = cfg.trap.bound_offset * cfg.geometry.a * np.array([1.0, 0.8, -0.6])
    world = World(pot, cfg.trap_box())
    n = int(math.ceil(cfg.trap.bound_periods * T / dt))
    tr = trace(AtomState(0.0, cp.location + off, np.zeros(3)), world, dt, n * dt)
    E = 0.5 * pot.config.mass * np.sum(tr.velocity**2, axis=1) + np.asarray(pot(tr.position))
    excursion = float(np.max(np.linalg.norm(tr.position - cp.location, axis=1)))
    return {
        "bound_periods": fmt(cfg.trap.bound_periods),
        "bound_steps": n,
        "bound_termination": tr.termination,
        "bound": int(tr.termination == "max_time"),
        "bound_max_excursion": fmt(excursion),
        "bound_energy_drift": fmt(float(np.max(np.abs(E - E[0])) / abs(E[0]))),
    }


def cmd_trap(run: Run) -> dict:
    cfg = run.cfg
    pot = cfg.build_potential()
    box = cfg.trap_box()
    items = {"command": "trap", "field": cfg.selector, "detuning": cfg.optics.detuning}
    best = None
    converged = 0
    for i, seed in enumerate(cfg.trap.seeds):
        key = f"seed.{i}"
        items[f"{key}.start"] = _vec(seed)
        try:
            cp = find_critical_point(pot, seed, max_iter=cfg.trap.max_iter, box=box)
        except (ConvergenceError, RimError) as e:
            items[f"{key}.status"] = "no_convergence"
            items[f"{key}.message"] = str(e).replace("\n", " ")
            run.say(f"seed {i}: no convergence ({e})")
            continue
        converged += 1
        cls = str(cp.classification) if cp.classification is not None else "degenerate"
        items[f"{key}.status"] = "converged"
        items[f"{key}.location"] = _vec(cp.location)
        items[f"{key}.classification"] = cls
        items[f"{key}.eigenvalues"] = _vec(cp.eigenvalues)
        items[f"{key}.value"] = fmt(cp.value)
        items[f"{key}.iterations"] = cp.iterations
        msg = f"seed {i}: {cls} at ({_vec(cp.location)}), Hessian eigenvalues {_vec(cp.eigenvalues)}"
        if cls == "minimum":
            rep = trap_depth(pot, cp, box)
            items[f"{key}.depth"] = fmt(rep.depth)
            items[f"{key}.frequencies"] = _vec(rep.harmonic_frequencies)
            items[f"{key}.escape_direction"] = _vec(rep.escape_direction)
            if cfg.units.enabled:
                u = cfg.units
                items[f"{key}.depth_J"] = fmt(rep.depth * u.energy_J)
                items[f"{key}.frequencies_rad_s"] = _vec(rep.harmonic_frequencies / u.time_s)
            msg += f", depth {rep.depth:.6g}"
            if best is None or rep.depth > best[1].depth:
                best = (i, rep, cp)
        run.say(msg)
    items["traps_found"] = sum(1 for k, v in items.items() if k.endswith(".classification") and v == "minimum")
    summary = {"depth": None}
    if best is not None:
        i, rep, cp = best
        items["best_seed"] = i
        items["depth"] = fmt(rep.depth)
        items["frequencies"] = _vec(rep.harmonic_frequencies)
        summary["depth"] = rep.depth
        if cfg.trap.bound_periods > 0:
            bc = _bound_check(run, pot, cp, rep)
            items.update(bc)
            run.say(f"bound check: {bc['bound_termination']} after {bc['bound_steps']} steps, "
                    f"max excursion {bc['bound_max_excursion']}")
    run.write_report(items)
    if converged == 0:
        raise CommandFailed("no seed converged", EXIT_NUMERIC)
    if best is None:
        raise CommandFailed("no trap found: no seed converged to a minimum", EXIT_NO_TRAP)
    return summary


def _write_trajectories(run, trajs):
    lines = [f"# {k}={v}" for k, v in run.header(field="trajectories").items()]
    lines.append("atom_id,t,x,y,z,vx,vy,vz,termination")
    for i, tr in enumerate(trajs):
        for t, p, v in zip(tr.t, tr.position, tr.velocity):
            lines.append(",".join([str(i), fmt(t), *map(fmt, p), *map(fmt, v), tr.termination]))
    path = run.out / "trajectories.csv"
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror or e}") from e


def cmd_focus(run: Run) -> dict:
    cfg = run.cfg
    pot = cfg.build_potential()
    world = cfg.build_world(pot)
    beam = cfg.build_beam()
    trajs = launch_beam(beam, world, cfg.dt(), cfg.t_max(), threads=run.threads,
                        record_every=cfg.dynamics.record_every)
    rep = focal_analysis(trajs, cfg.scan(), lens_center=0.0)
    try:
        f_lens = thin_lens_oracle(world, beam.speed)
    except HarmonicityError:
        f_lens = None
    counts = {}
    for tr in trajs:
        counts[tr.termination] = counts.get(tr.termination, 0) + 1
    items = {
        "command": "focus",
        "status": rep.status,
        "focal_plane": _num(rep.focal_plane),
        "focal_length": _num(rep.focal_length),
        "rms_at_focus": _num(rep.rms_radius_at_focus),
        "launch_rms": fmt(rep.launch_rms),
        "throughput": fmt(rep.throughput),
        "survivors": rep.survivors,
        "thin_lens_focal_length": _num(f_lens),
        "dt": fmt(cfg.dt()),
    }
    if rep.focal_length is not None and f_lens is not None:
        items["thin_lens_relative_difference"] = fmt(abs(rep.focal_length - f_lens) / abs(f_lens))
    for k in sorted(counts):
        items[f"termination.{k}"] = counts[k]
    scat = [tr.scattering_integral for tr in trajs]
    items["mean_scattered_photons"] = fmt(float(np.mean(scat)))
    if cfg.units.enabled and rep.focal_length is not None:
        items["focal_length_m"] = fmt(rep.focal_length * cfg.units.length_m)
    run.write_report(items)
    if cfg.output.trajectories:
        _write_trajectories(run, trajs)
    run.say(f"focus: {rep.status}, traced focal length {_num(rep.focal_length)}, "
            f"thin-lens estimate {_num(f_lens)}, throughput {rep.throughput:.3g}")
    if rep.status == "blocked":
        raise CommandFailed("beam blocked: fewer than two atoms got through", EXIT_NUMERIC)
    return {"focal_length": rep.focal_length}


SINGLE = {"hole-map": cmd_hole_map, "dot-map": cmd_dot_map, "trap": cmd_trap, "focus": cmd_focus}


def _value_name(param, v):
    return f"{param}={v!r}"


def cmd_sweep(run: Run, raw: dict) -> dict:
    cfg = run.cfg
    if cfg.sweep is None:
        raise ConfigError("sweep: the sweep command needs a sweep block")
    sw = cfg.sweep
    rows = []
    for v in sw.values:
        sub = run.out / _value_name(sw.parameter, v)
        row = {"value": fmt(v), "status": "ok", "exit_code": 0, "depth": "", "focal_length": "",
               "center_excess_ratio": "", "message": ""}
        try:
            sub_cfg = parse_config(with_parameter(raw, sw.parameter, v))
            sub.mkdir(parents=True, exist_ok=True)
            res = SINGLE[sw.command](Run(sub_cfg, sub, run.threads, quiet=True, overrides=run.overrides))
            for k in ("depth", "focal_length", "center_excess_ratio"):
                if res.get(k) is not None:
                    row[k] = fmt(res[k])
        except ConfigError as e:
            row.update(status="config_error", exit_code=EXIT_CONFIG, message=str(e))
        except CommandFailed as e:
            row.update(status="failed", exit_code=e.code, message=str(e))
        except (ConvergenceError, DegenerateError, RimError, HarmonicityError, ArithmeticError) as e:
            row.update(status="failed", exit_code=EXIT_NUMERIC, message=str(e))
        except OSError as e:
            row.update(status="io_error", exit_code=EXIT_IO, message=str(e))
        row["message"] = row["message"].replace("\n", " ").replace(",", ";")
        rows.append(row)
        run.say(f"{sw.parameter}={v!r}: {row['status']}"
                + "".join(f" {k}={row[k]}" for k in ("depth", "focal_length", "center_excess_ratio") if row[k]))
    cols = list(rows[0])
    lines = [f"# {k}={val}" for k, val in run.header(sweep_parameter=sw.parameter, sweep_command=sw.command).items()]
    lines.append(",".join(["parameter"] + cols))
    for r in rows:
        lines.append(",".join([sw.parameter] + [str(r[c]) for c in cols]))
    path = run.out / "summary.csv"
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror or e}") from e
    return {"rows": rows}


# --------------------------------------------------------------------------
# argument handling

def build_parser() -> argparse.ArgumentParser:
    epilog = "config keys (JSON, defaults shown):\n" + "\n".join(describe_keys())
    epilog += "\n\nexit codes: 0 ok, 2 config error, 3 non-convergence or blocked beam, 4 I/O error, 5 no trap found"
    p = argparse.ArgumentParser(
        prog="photondot",
        description="Field maps, traps and atom-lens studies for subwavelength apertures in a plate waveguide.",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON config file, or a bundled example name (e.g. fig3)")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--threads", type=int, help="worker threads (overrides threads)")
    p.add_argument("--single", action="store_true", help="dot-map: also write the single-aperture grid")
    p.add_argument("--quiet", action="store_true", help="no console summary")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = read_raw(args.config)
        overrides = {}
        if args.single:
            raw.setdefault("output", {})["single"] = True
            overrides["single"] = "true"
        cfg = parse_config(raw)
    except ConfigError as e:
        print(f"config error:\n{e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    threads = args.threads or cfg.threads or os.cpu_count() or 1
    if threads < 1:
        print("config error:\nthreads: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg.output.dir)
    run = Run(cfg, out, threads, quiet=args.quiet, overrides=overrides)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            if args.quiet:
                warnings.simplefilter("ignore")
            if args.command == "sweep":
                cmd_sweep(run, raw)
            else:
                SINGLE[args.command](run)
    except ConfigError as e:
        print(f"config error:\n{e}", file=sys.stderr)
        return EXIT_CONFIG
    except CommandFailed as e:
        print(f"{args.command}: {e}", file=sys.stderr)
        return e.code
    except (ConvergenceError, DegenerateError, RimError, HarmonicityError) as e:
        print(f"{args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
