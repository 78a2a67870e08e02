"""Volume / travel / microstep conversions for one syringe pump.

Units are fixed package-wide: lengths in mm, volumes in mL (1 mL = 1000 mm^3),
durations in seconds, motor positions in microsteps.  All functions here are
pure and safe to call from any thread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .errors import StrokeExceeded

if TYPE_CHECKING:
    from .waveform import WaveformSpec

MM3_PER_ML = 1000.0

VALID_MICROSTEP_FACTORS = (1, 2, 4, 8, 16, 32)


@dataclass(frozen=True)
class SyringeSpec:
    """Geometry of the syringe body."""

    bore_mm: float
    max_travel_mm: float
    dead_volume_ml: float = 0.0

    def __post_init__(self):
        if not self.bore_mm > 0:
            raise ValueError("bore_mm must be > 0, got %r" % (self.bore_mm,))
        if not self.max_travel_mm > 0:
            raise ValueError("max_travel_mm must be > 0, got %r" % (self.max_travel_mm,))
        if self.dead_volume_ml < 0:
            raise ValueError("dead_volume_ml must be >= 0, got %r" % (self.dead_volume_ml,))

    @property
    def plunger_area_mm2(self) -> float:
        return math.pi * (self.bore_mm / 2.0) ** 2

    @property
    def capacity_ml(self) -> float:
        """Displaceable volume over the full stroke, dead volume excluded."""
        return self.plunger_area_mm2 * self.max_travel_mm / MM3_PER_ML


@dataclass(frozen=True)
class DriveSpec:
    """Stepper, driver, and lead screw as one linear actuator."""

    pitch_mm: float
    full_steps_per_rev: int
    microstep_factor: int
    max_step_rate: float
    max_accel: float
    invert_direction: bool = False

    def __post_init__(self):
        if not self.pitch_mm > 0:
            raise ValueError("pitch_mm must be > 0, got %r" % (self.pitch_mm,))
        if self.full_steps_per_rev <= 0:
            raise ValueError("full_steps_per_rev must be > 0, got %r" % (self.full_steps_per_rev,))
        if self.microstep_factor not in VALID_MICROSTEP_FACTORS:
            raise ValueError(
                "microstep_factor must be one of %s, got %r"
                % (VALID_MICROSTEP_FACTORS, self.microstep_factor)
            )
        if not self.max_step_rate > 0:
            raise ValueError("max_step_rate must be > 0, got %r" % (self.max_step_rate,))
        if not self.max_accel > 0:
            raise ValueError("max_accel must be > 0, got %r" % (self.max_accel,))

    @property
    def steps_per_mm(self) -> float:
        return self.full_steps_per_rev * self.microstep_factor / self.pitch_mm

    @property
    def microstep_travel_mm(self) -> float:
        return 1.0 / self.steps_per_mm


@dataclass(frozen=True)
class PumpConfig:
    """One addressable pump unit: syringe + drive train + safety margin."""

    pump_id: int
    syringe: SyringeSpec
    drive: DriveSpec
    soft_limit_margin_mm: float = 0.0

    def __post_init__(self):
        if not 0 <= self.pump_id <= 254:
            raise ValueError("pump_id must be in 0..254, got %r" % (self.pump_id,))
        if not 0 <= self.soft_limit_margin_mm < self.syringe.max_travel_mm / 2.0:
            raise ValueError(
                "soft_limit_margin_mm must be in [0, max_travel/2), got %r"
                % (self.soft_limit_margin_mm,)
            )

    @property
    def microstep_volume_ml(self) -> float:
        """Displaced volume of a single microstep of travel."""
        return self.drive.microstep_travel_mm * self.syringe.plunger_area_mm2 / MM3_PER_ML


def plunger_area(syringe: SyringeSpec) -> float:
    """Plunger cross-section in mm^2."""
    return syringe.plunger_area_mm2


def volume_to_travel(syringe: SyringeSpec, volume_ml: float) -> float:
    """Plunger travel (mm, signed) that displaces ``volume_ml``.

    Negative volume means withdrawal, i.e. a vacuum pull.
    """
    if abs(volume_ml) > syringe.capacity_ml:
        raise StrokeExceeded(
            "volume %.6g mL exceeds syringe capacity %.6g mL"
            % (volume_ml, syringe.capacity_ml)
        )
    return volume_ml * MM3_PER_ML / syringe.plunger_area_mm2


def round_half_away(x: float) -> int:
    """Round to nearest integer, ties away from zero (symmetric push/pull)."""
    if x >= 0.0:
        return int(math.floor(x + 0.5))
    return -int(math.floor(-x + 0.5))


def travel_to_steps(drive: DriveSpec, travel_mm: float) -> tuple[int, float]:
    """Quantize travel onto the microstep grid.

    Returns (steps, residual).  The residual is the travel left over after
    quantization and never exceeds half a microstep.  ``invert_direction``
    flips the sign of the step count only.
    """
    spm = drive.steps_per_mm
    steps = round_half_away(travel_mm * spm)
    residual = travel_mm - steps / spm
    if drive.invert_direction:
        steps = -steps
    return steps, residual


def steps_to_volume(config: PumpConfig, steps: int) -> float:
    """Displaced volume (mL) for a signed step count; inverse of the forward chain."""
    n = -steps if config.drive.invert_direction else steps
    travel = n / config.drive.steps_per_mm
    return travel * config.syringe.plunger_area_mm2 / MM3_PER_ML


@dataclass(frozen=True)
class StrokeViolation:
    bound: str  # "offset" | "stroke" | "soft_limit_low" | "soft_limit_high"
    exceeded_by: float
    message: str


@dataclass(frozen=True)
class StrokeReport:
    violations: tuple[StrokeViolation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "; ".join(v.message for v in self.violations)


def validate_stroke(config: PumpConfig, wave: "WaveformSpec") -> StrokeReport:
    """Check that a waveform's volume band fits this pump's hardware.

    The band [offset, offset + amplitude] must fit the usable capacity and
    the corresponding travel must stay ``soft_limit_margin_mm`` clear of
    both hard stops.  Violations come back as a report, not an exception.
    """
    syringe = config.syringe
    area = syringe.plunger_area_mm2
    violations = []

    if wave.offset_ml < 0:
        violations.append(
            StrokeViolation(
                bound="offset",
                exceeded_by=-wave.offset_ml,
                message="offset %.6g mL is below the deflated baseline" % wave.offset_ml,
            )
        )

    usable = syringe.capacity_ml - syringe.dead_volume_ml
    top = wave.offset_ml + wave.amplitude_ml
    if top > usable:
        violations.append(
            StrokeViolation(
                bound="stroke",
                exceeded_by=top - usable,
                message=(
                    "offset+amplitude %.6g mL exceeds usable capacity %.6g mL "
                    "by %.6g mL" % (top, usable, top - usable)
                ),
            )
        )

    margin = config.soft_limit_margin_mm
    travel_lo = wave.offset_ml * MM3_PER_ML / area
    travel_hi = top * MM3_PER_ML / area
    if travel_lo < margin:
        violations.append(
            StrokeViolation(
                bound="soft_limit_low",
                exceeded_by=margin - travel_lo,
                message=(
                    "stroke bottom at %.4g mm is inside the %.4g mm soft margin"
                    % (travel_lo, margin)
                ),
            )
        )
    limit_hi = syringe.max_travel_mm - margin
    if travel_hi > limit_hi:
        violations.append(
            StrokeViolation(
                bound="soft_limit_high",
                exceeded_by=travel_hi - limit_hi,
                message=(
                    "stroke top at %.4g mm passes the upper soft limit %.4g mm"
                    % (travel_hi, limit_hi)
                ),
            )
        )

    return StrokeReport(tuple(violations))
