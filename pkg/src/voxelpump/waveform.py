"""Periodic displaced-volume trajectories.

Each pump follows ``offset + amplitude * g(u)`` where ``u`` is the position
inside the cycle and ``g`` is a unit shape in [0, 1].  Amplitude is displaced
volume (mL): that is what a syringe commands directly on open-loop hardware.
The cycle fraction is computed by reducing t modulo the period first, so the
trajectory is exactly periodic at representable multiples of the period.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import UnboundedSlew


class Shape(enum.Enum):
    SINE = "sine"
    TRAPEZOID = "trapezoid"
    SQUARE = "square"


@dataclass(frozen=True)
class WaveformSpec:
    """One pump's periodic actuation pattern.

    ``duty`` is the fraction of the period spent inflating.  A sine with
    duty != 0.5 is realized as two half-cosines of unequal duration so every
    shape honors duty the same way.  ``phase`` shifts the cycle as a fraction
    of the period relative to the shared start epoch.  ``cycles=None`` means
    continuous; a finite count parks the pump at its baseline afterwards.
    """

    shape: Shape
    period_s: float
    amplitude_ml: float
    duty: float = 0.5
    phase: float = 0.0
    offset_ml: float = 0.0
    ramp: float | None = None
    cycles: int | None = None

    def __post_init__(self):
        if not self.period_s > 0:
            raise ValueError("period must be > 0, got %r" % (self.period_s,))
        if self.amplitude_ml < 0:
            raise ValueError("amplitude must be >= 0, got %r" % (self.amplitude_ml,))
        if not 0.0 < self.duty < 1.0:
            raise ValueError("duty must satisfy 0 < duty < 1, got %r" % (self.duty,))
        if not 0.0 <= self.phase < 1.0:
            raise ValueError("phase must be in [0, 1), got %r" % (self.phase,))
        if self.offset_ml < 0:
            raise ValueError("offset must be >= 0, got %r" % (self.offset_ml,))
        if self.shape is Shape.TRAPEZOID:
            ramp = self.ramp
            if ramp is None:
                ramp = 0.25 * min(self.duty, 1.0 - self.duty)
                object.__setattr__(self, "ramp", ramp)
            if not 0.0 < ramp <= min(self.duty, 1.0 - self.duty):
                raise ValueError(
                    "ramp must satisfy 0 < ramp <= min(duty, 1-duty), got %r" % (ramp,)
                )
        if self.cycles is not None:
            if not isinstance(self.cycles, int) or self.cycles <= 0:
                raise ValueError("cycles must be a positive integer or None, got %r" % (self.cycles,))


def _cycle_fraction(t: float, period: float, phase: float) -> float:
    # fmod is exact, so t on the period grid lands exactly on u = phase
    u = math.fmod(t, period) / period + phase
    u -= math.floor(u)
    if u >= 1.0:
        u = 0.0
    return u


def _unit_shape(shape: Shape, duty: float, ramp: float | None, u: float) -> float:
    if shape is Shape.SINE:
        # rising half-cosine over [0, duty), falling over [duty, 1);
        # collapses to (1 - cos 2*pi*u)/2 when duty == 0.5
        if u < duty:
            return 0.5 * (1.0 - math.cos(math.pi * u / duty))
        return 0.5 * (1.0 + math.cos(math.pi * (u - duty) / (1.0 - duty)))
    if shape is Shape.TRAPEZOID:
        if u < ramp:
            return u / ramp
        if u < duty:
            return 1.0
        if u < duty + ramp:
            return 1.0 - (u - duty) / ramp
        return 0.0
    return 1.0 if u < duty else 0.0


def target_volume(wave: WaveformSpec, t: float) -> float:
    """Commanded displaced volume (mL) at time t >= 0."""
    if t < 0:
        raise ValueError("t must be >= 0, got %r" % (t,))
    if wave.cycles is not None and t >= wave.cycles * wave.period_s:
        return wave.offset_ml
    u = _cycle_fraction(t, wave.period_s, wave.phase)
    return wave.offset_ml + wave.amplitude_ml * _unit_shape(wave.shape, wave.duty, wave.ramp, u)


def target_volume_array(wave: WaveformSpec, t: np.ndarray) -> np.ndarray:
    """Vectorized ``target_volume`` used by the motion planner and telemetry."""
    t = np.asarray(t, dtype=np.float64)
    period = wave.period_s
    u = np.fmod(t, period) / period + wave.phase
    u -= np.floor(u)
    u = np.where(u >= 1.0, 0.0, u)

    duty = wave.duty
    if wave.shape is Shape.SINE:
        rising = 0.5 * (1.0 - np.cos(np.pi * u / duty))
        falling = 0.5 * (1.0 + np.cos(np.pi * (u - duty) / (1.0 - duty)))
        g = np.where(u < duty, rising, falling)
    elif wave.shape is Shape.TRAPEZOID:
        ramp = wave.ramp
        g = np.select(
            [u < ramp, u < duty, u < duty + ramp],
            [u / ramp, 1.0, 1.0 - (u - duty) / ramp],
            default=0.0,
        )
    else:
        g = np.where(u < duty, 1.0, 0.0)

    out = wave.offset_ml + wave.amplitude_ml * g
    if wave.cycles is not None:
        out = np.where(t >= wave.cycles * period, wave.offset_ml, out)
    return out


def peak_flow(wave: WaveformSpec) -> float:
    """Largest |dV/dt| (mL/s) over one period.

    Square setpoints have no finite nominal slew; their achievable rate is a
    property of the drive, not the waveform (see motion.slew_limited_flow).
    """
    if wave.shape is Shape.SQUARE:
        raise UnboundedSlew("square waves have no finite nominal slew rate")
    if wave.shape is Shape.SINE:
        return wave.amplitude_ml * math.pi / (2.0 * wave.period_s * min(wave.duty, 1.0 - wave.duty))
    return wave.amplitude_ml / (wave.ramp * wave.period_s)


def sample(wave: WaveformSpec, tick: float, horizon: float) -> list[tuple[float, float]]:
    """Sample the trajectory at t = 0, tick, 2*tick, ... up to the horizon."""
    if not tick > 0:
        raise ValueError("tick must be > 0, got %r" % (tick,))
    if horizon < 0:
        raise ValueError("horizon must be >= 0, got %r" % (horizon,))
    n = int(math.floor(horizon / tick))
    while (n + 1) * tick <= horizon:
        n += 1
    while n > 0 and n * tick > horizon:
        n -= 1
    return [(k * tick, target_volume(wave, k * tick)) for k in range(n + 1)]
