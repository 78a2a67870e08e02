"""The gait program language and its lowering to wire frames.

A gait program is line-oriented UTF-8 text.  Each line is one of:

    pump NAME { key=value ... }     declare a pump and its hardware
    wave NAME SHAPE key=value ...   assign NAME's periodic waveform
    run 12 s | run forever          how long the program runs
    # comment / blank line

Pump ids are assigned in declaration order starting at 0.  Every failure is
reported with line and column; parsing continues so one pass collects every
diagnostic.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field

from .errors import DomainError, QuantizationOverflow
from .kinematics import DriveSpec, PumpConfig, SyringeSpec
from .plant import PlantConfig
from .protocol import BROADCAST_ID, Frame, Opcode
from .waveform import Shape, WaveformSpec


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    code: str
    message: str

    def render(self, path: str = "<gait>") -> str:
        return "%s:%d:%d: %s: %s" % (path, self.line, self.col, self.code, self.message)


class GaitError(DomainError):
    """Raised when a gait program has one or more positioned problems."""

    def __init__(self, diagnostics: list[Diagnostic], path: str = "<gait>"):
        self.diagnostics = list(diagnostics)
        self.path = path
        super().__init__("\n".join(d.render(path) for d in self.diagnostics))


@dataclass(frozen=True)
class GaitProgram:
    """Parsed program: pumps, their waveforms, and the run duration.

    All pumps share t=0; per-pump phase offsets live in the waveforms.
    ``run_duration_s`` of None means run until stopped.
    """

    pumps: tuple[PumpConfig, ...]
    pump_names: tuple[str, ...]
    waves: dict[int, WaveformSpec] = field(default_factory=dict)
    run_duration_s: float | None = None

    def __post_init__(self):
        ids = [p.pump_id for p in self.pumps]
        if len(set(ids)) != len(ids):
            raise ValueError("pump ids must be unique")
        for pump_id in self.waves:
            if pump_id not in ids:
                raise ValueError("wave references undeclared pump id %d" % pump_id)

    def name_of(self, pump_id: int) -> str:
        for pump, name in zip(self.pumps, self.pump_names):
            if pump.pump_id == pump_id:
                return name
        raise KeyError(pump_id)


_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+)
      | (?P<comment>\#.*)
      | (?P<number>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
      | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
      | (?P<punct>[{}=])
      | (?P<bad>.)
    """,
    re.VERBOSE,
)


def _tokenize(text: str):
    """Yield (kind, text, col) with 1-based columns; 'bad' for stray bytes."""
    tokens = []
    for m in _TOKEN_RE.finditer(text):
        kind = m.lastgroup
        if kind in ("ws", "comment"):
            continue
        tokens.append((kind, m.group(), m.start() + 1))
    return tokens


_PUMP_KEYS = (
    "bore_mm",
    "max_travel_mm",
    "dead_volume_ml",
    "pitch_mm",
    "steps_per_rev",
    "microsteps",
    "max_step_rate",
    "max_accel",
    "soft_limit_mm",
)
_PUMP_REQUIRED = (
    "bore_mm",
    "max_travel_mm",
    "pitch_mm",
    "steps_per_rev",
    "microsteps",
    "max_step_rate",
    "max_accel",
)
_WAVE_KEYS = ("period", "amplitude_ml", "duty", "phase", "offset_ml", "ramp", "cycles")
_INTEGER_KEYS = ("steps_per_rev", "microsteps", "cycles")


class _Parser:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.diags: list[Diagnostic] = []
        self.pump_names: list[str] = []
        self.pumps: list[PumpConfig] = []
        self.waves: dict[int, WaveformSpec] = {}
        self.wave_cols: dict[str, int] = {}
        self.run_duration: float | None = None
        self.run_seen = False

    def error(self, line: int, col: int, code: str, message: str):
        self.diags.append(Diagnostic(line, col, code, message))

    def parse(self):
        for lineno, raw in enumerate(self.lines, start=1):
            tokens = _tokenize(raw)
            if not tokens:
                continue
            kind, text, col = tokens[0]
            if kind == "ident" and text == "pump":
                self.parse_pump(lineno, tokens)
            elif kind == "ident" and text == "wave":
                self.parse_wave(lineno, tokens)
            elif kind == "ident" and text == "run":
                self.parse_run(lineno, tokens)
            else:
                self.error(lineno, col, "syntax", "expected 'pump', 'wave', 'run', or a comment, got %r" % text)

    def _parse_pairs(self, lineno, tokens, start, allowed, stop_at_brace):
        """Parse key=value pairs; returns (values, value_cols, index_after)."""
        values: dict[str, float] = {}
        cols: dict[str, int] = {}
        i = start
        while i < len(tokens):
            kind, text, col = tokens[i]
            if stop_at_brace and kind == "punct" and text == "}":
                return values, cols, i + 1
            if kind != "ident":
                self.error(lineno, col, "syntax", "expected a key name, got %r" % text)
                return values, cols, len(tokens)
            key = text
            if i + 2 >= len(tokens) or tokens[i + 1][:2] != ("punct", "="):
                self.error(lineno, col, "syntax", "expected %s=<number>" % key)
                return values, cols, len(tokens)
            vkind, vtext, vcol = tokens[i + 2]
            if vkind != "number":
                self.error(lineno, vcol, "syntax", "expected a number for %s, got %r" % (key, vtext))
                return values, cols, len(tokens)
            if key not in allowed:
                self.error(lineno, col, "unknown-key", "unknown key %r" % key)
            elif key in values:
                self.error(lineno, col, "syntax", "key %r given twice" % key)
            else:
                value = float(vtext)
                if key in _INTEGER_KEYS:
                    if value != int(value):
                        self.error(lineno, vcol, "invariant-violation", "%s must be an integer" % key)
                        i += 3
                        continue
                    value = int(value)
                values[key] = value
                cols[key] = col
            i += 3
        if stop_at_brace:
            self.error(lineno, tokens[-1][2], "syntax", "missing closing '}'")
        return values, cols, len(tokens)

    def parse_pump(self, lineno, tokens):
        if len(tokens) < 2 or tokens[1][0] != "ident":
            self.error(lineno, tokens[0][2], "syntax", "expected: pump NAME { key=value ... }")
            return
        name = tokens[1][1]
        name_col = tokens[1][2]
        if len(tokens) < 3 or tokens[2][:2] != ("punct", "{"):
            self.error(lineno, name_col, "syntax", "expected '{' after the pump name")
            return
        values, cols, after = self._parse_pairs(lineno, tokens, 3, _PUMP_KEYS, stop_at_brace=True)
        if after < len(tokens):
            self.error(lineno, tokens[after][2], "syntax", "unexpected tokens after '}'")
            return
        if name in self.pump_names:
            self.error(lineno, name_col, "duplicate-pump", "pump %r already declared" % name)
            return
        missing = [k for k in _PUMP_REQUIRED if k not in values]
        if missing:
            self.error(lineno, name_col, "missing-key", "pump %r lacks %s" % (name, ", ".join(missing)))
            return
        try:
            syringe = SyringeSpec(
                bore_mm=values["bore_mm"],
                max_travel_mm=values["max_travel_mm"],
                dead_volume_ml=values.get("dead_volume_ml", 0.0),
            )
            drive = DriveSpec(
                pitch_mm=values["pitch_mm"],
                full_steps_per_rev=values["steps_per_rev"],
                microstep_factor=values["microsteps"],
                max_step_rate=values["max_step_rate"],
                max_accel=values["max_accel"],
            )
            pump = PumpConfig(
                pump_id=len(self.pumps),
                syringe=syringe,
                drive=drive,
                soft_limit_margin_mm=values.get("soft_limit_mm", 0.0),
            )
        except ValueError as exc:
            self.error(lineno, self._blame_col(str(exc), cols, name_col), "invariant-violation", str(exc))
            return
        self.pump_names.append(name)
        self.pumps.append(pump)

    def parse_wave(self, lineno, tokens):
        if len(tokens) < 3 or tokens[1][0] != "ident" or tokens[2][0] != "ident":
            self.error(lineno, tokens[0][2], "syntax", "expected: wave NAME SHAPE key=value ...")
            return
        name = tokens[1][1]
        name_col = tokens[1][2]
        shape_text = tokens[2][1]
        shape_col = tokens[2][2]
        try:
            shape = Shape(shape_text)
        except ValueError:
            self.error(lineno, shape_col, "syntax", "shape must be sine, trapezoid, or square, got %r" % shape_text)
            return
        values, cols, _ = self._parse_pairs(lineno, tokens, 3, _WAVE_KEYS, stop_at_brace=False)
        missing = [k for k in ("period", "amplitude_ml") if k not in values]
        if missing:
            self.error(lineno, name_col, "missing-key", "wave for %r lacks %s" % (name, ", ".join(missing)))
            return
        if name not in self.pump_names:
            self.error(lineno, name_col, "undeclared-pump", "wave targets undeclared pump %r" % name)
            return
        pump_id = self.pump_names.index(name)
        if pump_id in self.waves:
            self.error(lineno, name_col, "duplicate-wave", "pump %r already has a wave" % name)
            return
        try:
            wave = WaveformSpec(
                shape=shape,
                period_s=values["period"],
                amplitude_ml=values["amplitude_ml"],
                duty=values.get("duty", 0.5),
                phase=values.get("phase", 0.0),
                offset_ml=values.get("offset_ml", 0.0),
                ramp=values.get("ramp"),
                cycles=values.get("cycles"),
            )
        except ValueError as exc:
            self.error(lineno, self._blame_col(str(exc), cols, name_col), "invariant-violation", str(exc))
            return
        self.waves[pump_id] = wave

    def parse_run(self, lineno, tokens):
        col = tokens[0][2]
        if self.run_seen:
            self.error(lineno, col, "duplicate-run", "run directive given twice")
            return
        if len(tokens) == 2 and tokens[1][:2] == ("ident", "forever"):
            self.run_seen = True
            self.run_duration = None
            return
        if (
            len(tokens) == 3
            and tokens[1][0] == "number"
            and tokens[2][:2] == ("ident", "s")
        ):
            duration = float(tokens[1][1])
            if duration <= 0:
                self.error(lineno, tokens[1][2], "invariant-violation", "run duration must be > 0")
                return
            self.run_seen = True
            self.run_duration = duration
            return
        self.error(lineno, col, "syntax", "expected: run <seconds> s | run forever")

    @staticmethod
    def _blame_col(message: str, cols: dict[str, int], fallback: int) -> int:
        # point at the offending key when the invariant message names it
        for key, col in cols.items():
            if key.split("_")[0] in message:
                return col
        return fallback


def parse_gait(text: str, path: str = "<gait>") -> GaitProgram:
    """Parse a gait program; raises GaitError carrying every diagnostic."""
    parser = _Parser(text)
    parser.parse()
    if parser.diags:
        raise GaitError(parser.diags, path)
    return GaitProgram(
        pumps=tuple(parser.pumps),
        pump_names=tuple(parser.pump_names),
        waves=dict(parser.waves),
        run_duration_s=parser.run_duration,
    )


U32_MAX = 0xFFFFFFFF
U16_MAX = 0xFFFF

_SHAPE_CODES = {Shape.SINE: 0, Shape.TRAPEZOID: 1, Shape.SQUARE: 2}


def _quantize(value: float, scale: float, field_name: str, limit: int) -> int:
    q = round(value * scale)
    if q < 0 or q > limit:
        raise QuantizationOverflow(field_name, value, limit)
    return int(q)


def _configure_payload(pump: PumpConfig) -> bytes:
    syringe = pump.syringe
    drive = pump.drive
    return struct.pack(
        ">IIIIHBBIII",
        _quantize(syringe.bore_mm, 1000.0, "bore_um", U32_MAX),
        _quantize(syringe.max_travel_mm, 1000.0, "max_travel_um", U32_MAX),
        _quantize(syringe.dead_volume_ml, 1000.0, "dead_volume_ul", U32_MAX),
        _quantize(drive.pitch_mm, 1000.0, "pitch_um", U32_MAX),
        _quantize(drive.full_steps_per_rev, 1.0, "full_steps_per_rev", U16_MAX),
        _quantize(drive.microstep_factor, 1.0, "microstep_factor", 0xFF),
        1 if drive.invert_direction else 0,
        _quantize(drive.max_step_rate, 1.0, "max_step_rate", U32_MAX),
        _quantize(drive.max_accel, 1.0, "max_accel", U32_MAX),
        _quantize(pump.soft_limit_margin_mm, 1000.0, "soft_limit_um", U32_MAX),
    )


def _waveform_payload(wave: WaveformSpec) -> bytes:
    ramp = wave.ramp if wave.ramp is not None else 0.0
    cycles = wave.cycles if wave.cycles is not None else 0
    return struct.pack(
        ">BIIIHHHI",
        _SHAPE_CODES[wave.shape],
        _quantize(wave.period_s, 1000.0, "period_ms", U32_MAX),
        _quantize(wave.amplitude_ml, 1000.0, "amplitude_ul", U32_MAX),
        _quantize(wave.offset_ml, 1000.0, "offset_ul", U32_MAX),
        _quantize(wave.duty, 65536.0, "duty_q16", U16_MAX),
        _quantize(wave.phase, 65536.0, "phase_q16", U16_MAX),
        _quantize(ramp, 65536.0, "ramp_q16", U16_MAX),
        _quantize(cycles, 1.0, "cycles", U32_MAX),
    )


def compile_gait(program: GaitProgram) -> list[Frame]:
    """Lower a program to its wire frames.

    Per pump: CONFIGURE, SET_WAVEFORM (when it has a wave), HOME; then a
    single broadcast START carrying the run duration so every pump shares
    the same epoch.  Identical programs produce byte-identical sequences.
    """
    frames: list[Frame] = []
    for pump in program.pumps:
        frames.append(Frame(pump.pump_id, Opcode.CONFIGURE, _configure_payload(pump)))
        wave = program.waves.get(pump.pump_id)
        if wave is not None:
            frames.append(Frame(pump.pump_id, Opcode.SET_WAVEFORM, _waveform_payload(wave)))
        frames.append(Frame(pump.pump_id, Opcode.HOME))
    duration_ms = (
        0
        if program.run_duration_s is None
        else _quantize(program.run_duration_s, 1000.0, "run_duration_ms", U32_MAX)
    )
    frames.append(Frame(BROADCAST_ID, Opcode.START, struct.pack(">I", duration_ms)))
    return frames


_PLANT_KEYS = (
    "ambient_pa",
    "syringe_ml",
    "voxel_ml",
    "compliance_ml_per_pa",
    "resistance_pa_s_per_ml",
    "tube_ml",
)


def parse_plants(text: str, path: str = "<plants>") -> dict[str, PlantConfig]:
    """Parse a plant-parameter file: ``plant NAME { key=value ... }`` lines.

    Names refer to pump names from the gait program; the name ``default``
    applies to any pump without its own section.
    """
    diags: list[Diagnostic] = []
    configs: dict[str, PlantConfig] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = _tokenize(raw)
        if not tokens:
            continue
        kind, text_tok, col = tokens[0]
        if not (kind == "ident" and text_tok == "plant"):
            diags.append(Diagnostic(lineno, col, "syntax", "expected 'plant NAME { ... }', got %r" % text_tok))
            continue
        if len(tokens) < 3 or tokens[1][0] != "ident" or tokens[2][:2] != ("punct", "{"):
            diags.append(Diagnostic(lineno, col, "syntax", "expected: plant NAME { key=value ... }"))
            continue
        name = tokens[1][1]
        if name in configs:
            diags.append(Diagnostic(lineno, tokens[1][2], "duplicate-pump", "plant %r already declared" % name))
            continue
        helper = _Parser("")
        values, _cols, _ = helper._parse_pairs(lineno, tokens, 3, _PLANT_KEYS, stop_at_brace=True)
        diags.extend(helper.diags)
        if helper.diags:
            continue
        try:
            configs[name] = PlantConfig(
                ambient_pa=values.get("ambient_pa", 101325.0),
                syringe_gas_ml=values.get("syringe_ml", 40.0),
                voxel_rest_ml=values.get("voxel_ml", 20.0),
                compliance_ml_per_pa=values.get("compliance_ml_per_pa", 0.0),
                resistance_pa_s_per_ml=values.get("resistance_pa_s_per_ml", 0.0),
                tube_ml=values.get("tube_ml", 0.0),
            )
        except ValueError as exc:
            diags.append(Diagnostic(lineno, tokens[1][2], "invariant-violation", str(exc)))
    if diags:
        raise GaitError(diags, path)
    return configs
