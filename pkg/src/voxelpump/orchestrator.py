"""Coordinated execution of a gait program against a backend.

The simulated backend plans every pump's timeline, runs its private plant,
and merges per-pump telemetry into one (t, pump_id)-ordered stream.  All
pumps share t=0, so phase relationships come out of the waveforms alone and
a run is bit-reproducible for identical inputs.

The serial backend lowers the program to frames, writes them over a byte
transport with per-frame acknowledgement, and turns incoming telemetry
frames back into records.  Waveform timing happens on the pump side from the
broadcast start epoch; the host clock is only used for I/O timeouts.
"""

from __future__ import annotations

import math
import os
import select
import struct
import termios
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import AckTimeout, DomainError, NackReceived, TransportError
from .gait import GaitProgram, compile_gait
from .kinematics import validate_stroke
from .motion import track
from .plant import PlantConfig, simulate
from .protocol import BROADCAST_ID, Frame, FrameDecoder, Opcode
from .waveform import target_volume, target_volume_array


@dataclass(frozen=True)
class TelemetryRecord:
    t: float
    pump_id: int
    commanded_ml: float
    position_steps: int
    voxel_pressure_pa: float | None = None


class SimRunError(DomainError):
    """Planner or plant failure during a simulated run, located in time."""

    def __init__(self, pump_id: int, t: float, cause: Exception):
        self.pump_id = pump_id
        self.t = t
        self.cause = cause
        super().__init__("pump %d at t=%.6g s: %s" % (pump_id, t, cause))


@dataclass
class SimBackend:
    """Per-pump plants keyed by pump_id; every declared pump needs one."""

    plants: dict[int, PlantConfig]
    _stop: threading.Event = field(default_factory=threading.Event, repr=False)

    def request_stop(self):
        self._stop.set()

    def stop_requested(self) -> bool:
        return self._stop.is_set()


@dataclass
class SerialBackend:
    port: str
    baud: int = 115200
    ack_timeout_s: float = 0.5
    retries: int = 2
    transport: object | None = None  # injectable; opened from port/baud when None
    _stop: threading.Event = field(default_factory=threading.Event, repr=False)

    def request_stop(self):
        self._stop.set()

    def stop_requested(self) -> bool:
        return self._stop.is_set()

    def open_transport(self):
        if self.transport is not None:
            return self.transport
        self.transport = SerialPortTransport(self.port, self.baud)
        return self.transport


_BAUD_CONSTANTS = {
    9600: termios.B9600,
    19200: termios.B19200,
    38400: termios.B38400,
    57600: termios.B57600,
    115200: termios.B115200,
    230400: termios.B230400,
}


class SerialPortTransport:
    """Raw byte transport over a POSIX character device."""

    def __init__(self, port: str, baud: int):
        if baud not in _BAUD_CONSTANTS:
            raise TransportError("unsupported baud rate %d" % baud)
        try:
            self.fd = os.open(port, os.O_RDWR | os.O_NOCTTY | os.O_NONBLOCK)
        except OSError as exc:
            raise TransportError("cannot open %s" % port, exc) from exc
        try:
            attrs = termios.tcgetattr(self.fd)
            attrs[0] = 0  # iflag
            attrs[1] = 0  # oflag
            attrs[2] = termios.CS8 | termios.CREAD | termios.CLOCAL  # cflag
            attrs[3] = 0  # lflag
            attrs[4] = _BAUD_CONSTANTS[baud]
            attrs[5] = _BAUD_CONSTANTS[baud]
            termios.tcsetattr(self.fd, termios.TCSANOW, attrs)
        except (termios.error, OSError) as exc:
            os.close(self.fd)
            raise TransportError("cannot configure %s" % port, exc) from exc

    def write(self, data: bytes) -> None:
        try:
            os.write(self.fd, data)
        except OSError as exc:
            raise TransportError("write failed on serial port", exc) from exc

    def read(self, max_bytes: int, timeout: float) -> bytes:
        try:
            ready, _, _ = select.select([self.fd], [], [], timeout)
            if not ready:
                return b""
            return os.read(self.fd, max_bytes)
        except OSError as exc:
            raise TransportError("read failed on serial port", exc) from exc

    def close(self) -> None:
        try:
            os.close(self.fd)
        except OSError:
            pass


@dataclass(frozen=True)
class PumpSummary:
    pump_id: int
    name: str
    cycles_completed: int
    max_abs_position: int
    pulses: int


@dataclass
class RunReport:
    duration_s: float
    pumps: list[PumpSummary]
    stopped_early: bool = False
    errors: list[str] = field(default_factory=list)

    def render(self) -> str:
        lines = ["run: %s (%d pumps, %.6g s)" % (
            "stopped" if self.stopped_early else ("failed" if self.errors else "ok"),
            len(self.pumps),
            self.duration_s,
        )]
        for p in self.pumps:
            lines.append(
                "pump %d (%s): cycles=%d max|position|=%d pulses=%d"
                % (p.pump_id, p.name, p.cycles_completed, p.max_abs_position, p.pulses)
            )
        for err in self.errors:
            lines.append("error: %s" % err)
        return "\n".join(lines) + "\n"


def _effective_duration(program: GaitProgram, duration: float | None) -> float | None:
    return duration if duration is not None else program.run_duration_s


def run(
    program: GaitProgram,
    backend,
    tick: float = 0.001,
    duration: float | None = None,
    telemetry_period: float | None = 0.01,
    on_record=None,
):
    """Execute a program; returns (telemetry records, run report).

    Records are merged across pumps ordered by (t, pump_id).  ``duration``
    overrides the program's run directive.  ``telemetry_period`` of None
    emits a record every tick.
    """
    if isinstance(backend, SimBackend):
        return _run_sim(program, backend, tick, duration, telemetry_period, on_record)
    if isinstance(backend, SerialBackend):
        return _run_serial(program, backend, duration, on_record)
    raise TypeError("backend must be SimBackend or SerialBackend, got %r" % (backend,))


def _run_sim(program, backend, tick, duration, telemetry_period, on_record):
    duration = _effective_duration(program, duration)
    if duration is None:
        raise DomainError(
            "simulation needs a finite duration: the program says 'run forever' "
            "and no duration override was given"
        )
    if telemetry_period is None:
        telemetry_period = tick

    missing = [
        name
        for pump, name in zip(program.pumps, program.pump_names)
        if pump.pump_id not in backend.plants
    ]
    if missing:
        raise DomainError("no plant configured for pump(s): %s" % ", ".join(missing))

    m = int(math.floor(duration / telemetry_period + 1e-9))
    times = np.arange(m + 1, dtype=np.float64) * telemetry_period

    merged: list[TelemetryRecord] = []
    summaries: list[PumpSummary] = []
    for pump, name in zip(program.pumps, program.pump_names):
        wave = program.waves.get(pump.pump_id)
        if wave is None:
            continue
        report = validate_stroke(pump, wave)
        if not report.ok:
            raise SimRunError(pump.pump_id, 0.0, DomainError(str(report)))
        try:
            timeline = track(pump, wave, tick, duration)
        except DomainError as exc:
            raise SimRunError(pump.pump_id, 0.0, exc) from exc
        try:
            traj = simulate(backend.plants[pump.pump_id], pump, timeline, tick, duration)
        except DomainError as exc:
            raise SimRunError(pump.pump_id, getattr(exc, "t", 0.0), exc) from exc

        commanded = target_volume_array(wave, times)
        positions = timeline.positions_at(times)
        idx = np.minimum(
            np.floor(times / tick + 1e-9).astype(np.int64), len(traj) - 1
        )
        voxel = traj.p_voxel[idx]
        for j in range(m + 1):
            merged.append(
                TelemetryRecord(
                    t=float(times[j]),
                    pump_id=pump.pump_id,
                    commanded_ml=float(commanded[j]),
                    position_steps=int(positions[j]),
                    voxel_pressure_pa=float(voxel[j]),
                )
            )
        max_abs = int(np.max(np.abs(timeline.positions()))) if len(timeline) else 0
        summaries.append(
            PumpSummary(
                pump_id=pump.pump_id,
                name=name,
                cycles_completed=int(math.floor(duration / wave.period_s + 1e-9)),
                max_abs_position=max_abs,
                pulses=len(timeline),
            )
        )

    merged.sort(key=lambda r: (r.t, r.pump_id))

    out: list[TelemetryRecord] = []
    cutoff = None
    stopped = backend.stop_requested()
    if not stopped:
        for rec in merged:
            if cutoff is not None and rec.t > cutoff:
                stopped = True
                break
            out.append(rec)
            if on_record is not None:
                on_record(rec)
            if cutoff is None and backend.stop_requested():
                cutoff = rec.t
    reported = cutoff if stopped and cutoff is not None else (0.0 if stopped else duration)
    if stopped:
        summaries = [
            PumpSummary(
                pump_id=s.pump_id,
                name=s.name,
                cycles_completed=int(math.floor(reported / program.waves[s.pump_id].period_s + 1e-9)),
                max_abs_position=s.max_abs_position,
                pulses=s.pulses,
            )
            for s in summaries
        ]
    report = RunReport(duration_s=reported, pumps=summaries, stopped_early=stopped)
    return out, report


def _read_frames(transport, decoder, deadline):
    """Read until the deadline, returning frames as soon as any arrive."""
    while True:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            return []
        chunk = transport.read(4096, min(remaining, 0.05))
        if chunk:
            frames = decoder.feed(chunk)
            if frames:
                return frames
        elif getattr(transport, "at_eof", lambda: False)():
            return []


def _await_ack(transport, decoder, pending, wire, timeout, attempts):
    for _ in range(attempts):
        transport.write(wire)
        deadline = time.monotonic() + timeout
        while True:
            got = _read_frames(transport, decoder, deadline)
            if not got:
                break  # timed out this attempt
            for reply in got:
                if reply.opcode is Opcode.ACK and reply.pump_id == pending.pump_id:
                    return
                if reply.opcode is Opcode.NACK and reply.pump_id == pending.pump_id:
                    code = reply.payload[1] if len(reply.payload) > 1 else 0
                    raise NackReceived(pending.pump_id, int(pending.opcode), code)
                if reply.opcode is Opcode.TELEMETRY:
                    pending.telemetry.append(reply)
    raise AckTimeout(pending.pump_id, int(pending.opcode), attempts)


class _Pending:
    def __init__(self, pump_id, opcode, telemetry):
        self.pump_id = pump_id
        self.opcode = opcode
        self.telemetry = telemetry


def _run_serial(program, backend, duration, on_record):
    from .protocol import encode_frame

    duration = _effective_duration(program, duration)
    transport = backend.open_transport()
    decoder = FrameDecoder()
    telemetry_frames: list[Frame] = []
    attempts = 1 + backend.retries

    frames = compile_gait(program)
    for frame in frames:
        wire = encode_frame(frame)
        if frame.pump_id == BROADCAST_ID:
            transport.write(wire)
            continue
        pending = _Pending(frame.pump_id, frame.opcode, telemetry_frames)
        _await_ack(transport, decoder, pending, wire, backend.ack_timeout_s, attempts)

    start = time.monotonic()
    while not backend.stop_requested():
        if duration is not None and time.monotonic() - start >= duration:
            break
        chunk = transport.read(4096, 0.05)
        if chunk:
            telemetry_frames.extend(
                f for f in decoder.feed(chunk) if f.opcode is Opcode.TELEMETRY
            )
        elif getattr(transport, "at_eof", lambda: False)():
            break

    records = []
    for f in telemetry_frames:
        t_ms, position = struct.unpack(">Ii", f.payload[:8])
        t = t_ms / 1000.0
        wave = program.waves.get(f.pump_id)
        commanded = target_volume(wave, t) if wave is not None else 0.0
        records.append(
            TelemetryRecord(
                t=t,
                pump_id=f.pump_id,
                commanded_ml=commanded,
                position_steps=position,
                voxel_pressure_pa=None,
            )
        )
        if on_record is not None:
            on_record(records[-1])
    records.sort(key=lambda r: (r.t, r.pump_id))

    by_pump: dict[int, list[TelemetryRecord]] = {}
    for rec in records:
        by_pump.setdefault(rec.pump_id, []).append(rec)
    summaries = []
    for pump, name in zip(program.pumps, program.pump_names):
        recs = by_pump.get(pump.pump_id, [])
        wave = program.waves.get(pump.pump_id)
        last_t = recs[-1].t if recs else 0.0
        summaries.append(
            PumpSummary(
                pump_id=pump.pump_id,
                name=name,
                cycles_completed=(
                    int(math.floor(last_t / wave.period_s)) if wave is not None else 0
                ),
                max_abs_position=max((abs(r.position_steps) for r in recs), default=0),
                pulses=len(recs),
            )
        )
    elapsed = duration if duration is not None else time.monotonic() - start
    report = RunReport(duration_s=elapsed, pumps=summaries, stopped_early=backend.stop_requested())
    return records, report


def stop_all(backend) -> None:
    """Halt the run: simulated backends truncate at the current tick, serial
    backends get a broadcast STOP (no acknowledgement expected)."""
    from .protocol import encode_frame

    backend.request_stop()
    if isinstance(backend, SerialBackend) and backend.transport is not None:
        backend.transport.write(encode_frame(Frame(BROADCAST_ID, Opcode.STOP)))


def describe_wave(wave) -> str:
    parts = [
        "shape=%s" % wave.shape.value,
        "period=%r" % wave.period_s,
        "amplitude_ml=%r" % wave.amplitude_ml,
        "duty=%r" % wave.duty,
        "phase=%r" % wave.phase,
        "offset_ml=%r" % wave.offset_ml,
    ]
    if wave.ramp is not None:
        parts.append("ramp=%r" % wave.ramp)
    if wave.cycles is not None:
        parts.append("cycles=%d" % wave.cycles)
    return " ".join(parts)


def write_telemetry_csv(records, path, program: GaitProgram | None = None) -> None:
    """Telemetry CSV: t_s,pump_id,commanded_ml,position_steps,voxel_pa
    (voxel_pa blank when the backend has no pressure model).  When the
    program is given, each pump's waveform is spelled out in '#' header
    comments above the column row."""
    with open(path, "w", newline="") as fh:
        if program is not None:
            for pump, name in zip(program.pumps, program.pump_names):
                wave = program.waves.get(pump.pump_id)
                if wave is not None:
                    fh.write("# wave pump=%d name=%s %s\n" % (pump.pump_id, name, describe_wave(wave)))
        fh.write("t_s,pump_id,commanded_ml,position_steps,voxel_pa\n")
        for r in records:
            voxel = "" if r.voxel_pressure_pa is None else repr(r.voxel_pressure_pa)
            fh.write("%r,%d,%r,%d,%s\n" % (r.t, r.pump_id, r.commanded_ml, r.position_steps, voxel))
