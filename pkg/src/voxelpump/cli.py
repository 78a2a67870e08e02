"""Command-line front end.

Exit codes are stable across subcommands: 0 success, 1 domain error
(diagnostics, infeasible motion, protocol violations), 2 I/O or usage.
"""

from __future__ import annotations

import argparse
import sys

from .errors import DomainError, TransportError
from .gait import GaitError, GaitProgram, compile_gait, parse_gait, parse_plants
from .kinematics import validate_stroke
from .motion import check_feasible
from .orchestrator import (
    SerialBackend,
    SimBackend,
    run,
    write_telemetry_csv,
)
from .plant import PlantConfig
from .protocol import hex_dump

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_IO = 2


def _read_text(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _load_program(path: str) -> GaitProgram:
    return parse_gait(_read_text(path), path=path)


def _check_program(program: GaitProgram, path: str) -> list[str]:
    """Stroke and feasibility diagnostics beyond parsing."""
    problems = []
    for pump, name in zip(program.pumps, program.pump_names):
        wave = program.waves.get(pump.pump_id)
        if wave is None:
            continue
        report = validate_stroke(pump, wave)
        if not report.ok:
            problems.append("%s: pump %r: %s" % (path, name, report))
        try:
            check_feasible(pump, wave)
        except DomainError as exc:
            problems.append("%s: pump %r: %s" % (path, name, exc))
    return problems


def _cmd_validate(args) -> int:
    try:
        program = _load_program(args.program)
    except GaitError as exc:
        for diag in exc.diagnostics:
            print(diag.render(args.program), file=sys.stderr)
        return EXIT_DOMAIN
    problems = _check_program(program, args.program)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def _build_sim_backend(program: GaitProgram, plants_path: str | None) -> SimBackend:
    sections = parse_plants(_read_text(plants_path), path=plants_path) if plants_path else {}
    default = sections.get("default", PlantConfig())
    plants = {}
    for pump, name in zip(program.pumps, program.pump_names):
        plants[pump.pump_id] = sections.get(name, default)
    return SimBackend(plants=plants)


def _cmd_simulate(args) -> int:
    rc = _cmd_validate(args)
    if rc != EXIT_OK:
        return rc
    program = _load_program(args.program)
    backend = _build_sim_backend(program, args.plants)
    telemetry_period = (1.0 / args.telemetry_hz) if args.telemetry_hz else args.tick
    records, report = run(
        program,
        backend,
        tick=args.tick,
        duration=args.duration,
        telemetry_period=telemetry_period,
    )
    write_telemetry_csv(records, args.out, program=program)
    sys.stdout.write(report.render())
    return EXIT_OK


def _cmd_run(args) -> int:
    rc = _cmd_validate(args)
    if rc != EXIT_OK:
        return rc
    program = _load_program(args.program)
    backend = SerialBackend(port=args.port, baud=args.baud)
    records, report = run(program, backend, duration=args.duration)
    if args.out:
        write_telemetry_csv(records, args.out)
    sys.stdout.write(report.render())
    return EXIT_OK


def _cmd_frames(args) -> int:
    rc = _cmd_validate(args)
    if rc != EXIT_OK:
        return rc
    program = _load_program(args.program)
    frames = compile_gait(program)
    lines = []
    for i, frame in enumerate(frames):
        lines.append("frame %03d  %s" % (i, hex_dump(frame)))
        lines.append("")
    text = "\n".join(lines)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_plot(args) -> int:
    from .plotting import render_report

    out = args.out or (args.csv.rsplit(".", 1)[0] + ".png")
    img, data = render_report(args.csv, out)
    print("wrote %s" % img)
    print("wrote %s" % data)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxelpump",
        description="Plan, simulate, and drive syringe-pump gait programs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check a gait program without running it")
    p_validate.add_argument("program")
    p_validate.set_defaults(func=_cmd_validate)

    p_sim = sub.add_parser("simulate", help="run a program against simulated pumps and plants")
    p_sim.add_argument("program")
    p_sim.add_argument("--plants", default=None, help="plant parameter file")
    p_sim.add_argument("--tick", type=float, default=0.001, help="control tick in seconds")
    p_sim.add_argument("--duration", type=float, default=None, help="override the run directive")
    p_sim.add_argument("--telemetry-hz", type=float, default=None,
                       help="telemetry rate (default: one record per tick)")
    p_sim.add_argument("--out", default="telemetry.csv", help="telemetry CSV path")
    p_sim.set_defaults(func=_cmd_simulate)

    p_run = sub.add_parser("run", help="drive real pumps over a serial port")
    p_run.add_argument("program")
    p_run.add_argument("--port", required=True)
    p_run.add_argument("--baud", type=int, default=115200)
    p_run.add_argument("--tick", type=float, default=0.001)
    p_run.add_argument("--duration", type=float, default=None)
    p_run.add_argument("--out", default=None, help="telemetry CSV path")
    p_run.set_defaults(func=_cmd_run)

    p_frames = sub.add_parser("frames", help="dump the compiled wire frames")
    p_frames.add_argument("program")
    p_frames.add_argument("--out", default=None)
    p_frames.set_defaults(func=_cmd_frames)

    p_plot = sub.add_parser("plot", help="render telemetry to a figure plus plotted-data CSV")
    p_plot.add_argument("csv")
    p_plot.add_argument("--out", default=None, help="image path (default: <csv>.png)")
    p_plot.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_IO
    try:
        return args.func(args)
    except GaitError as exc:
        for diag in exc.diagnostics:
            print(diag.render(exc.path), file=sys.stderr)
        return EXIT_DOMAIN
    except DomainError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_DOMAIN
    except TransportError as exc:
        print("transport error: %s" % exc, file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print("i/o error: %s" % exc, file=sys.stderr)
        return EXIT_IO


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
