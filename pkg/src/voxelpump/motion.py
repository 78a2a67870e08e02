"""Step-pulse planning: waveform tracking and point-to-point moves.

The tracker converts a waveform into signed, timestamped pulses.  Drift
freedom comes from structure, not tuning: every tick rounds the *absolute*
step target (round half away from zero) and emits the difference from the
current position, so whenever the waveform returns to a value the commanded
position returns to the same integer exactly.  Per-tick output is clamped to
the drive's step-rate and acceleration limits; a clamped catch-up additionally
obeys a stopping-distance bound relative to the target's own velocity so step
setpoints settle instead of limit-cycling.

Ticks whose demand is within limits are emitted exactly; the common
no-clamping case is planned fully vectorized, with a scalar fallback that
produces bit-identical pulses whenever both are applicable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import Infeasible
from .kinematics import MM3_PER_ML, DriveSpec, PumpConfig, round_half_away
from .waveform import Shape, WaveformSpec, peak_flow, target_volume_array


@dataclass(frozen=True)
class StepTimeline:
    """Timestamped, signed step pulses; the executable output of planning.

    ``timestamps`` are strictly increasing seconds, ``directions`` is +1/-1
    per pulse.  ``final_position`` equals the sum of directions.
    """

    timestamps: np.ndarray
    directions: np.ndarray
    tick: float
    duration: float
    final_position: int

    def __post_init__(self):
        if self.timestamps.shape != self.directions.shape:
            raise ValueError("timestamps and directions must have equal length")
        if len(self.timestamps) and not np.all(np.diff(self.timestamps) > 0):
            raise ValueError("pulse timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.timestamps)

    def pulses(self):
        """Iterate (timestamp_s, direction) pairs."""
        for t, d in zip(self.timestamps.tolist(), self.directions.tolist()):
            yield t, int(d)

    def positions(self) -> np.ndarray:
        """Cumulative position after each pulse."""
        return np.cumsum(self.directions, dtype=np.int64)

    def positions_at(self, times: np.ndarray) -> np.ndarray:
        """Position reached by each time (pulses with timestamp <= t counted)."""
        cum = np.concatenate(([0], np.cumsum(self.directions, dtype=np.int64)))
        idx = np.searchsorted(self.timestamps, np.asarray(times, dtype=np.float64), side="right")
        return cum[idx]

    def position_at(self, t: float) -> int:
        return int(self.positions_at(np.array([t]))[0])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("timestamp_s,direction\n")
            for t, d in self.pulses():
                fh.write("%r,%d\n" % (t, d))


@dataclass(frozen=True)
class PlannerState:
    """Tracker state after planning: integer position, quantization residual
    (fractional steps, within [-0.5, 0.5]), and velocity in steps/s."""

    position: int
    residual: float
    velocity: float


def _empty_timeline(tick: float, duration: float) -> StepTimeline:
    return StepTimeline(
        timestamps=np.empty(0, dtype=np.float64),
        directions=np.empty(0, dtype=np.int8),
        tick=tick,
        duration=duration,
        final_position=0,
    )


def _tick_count(horizon: float, tick: float) -> int:
    q = horizon / tick
    r = round(q)
    if abs(q - r) <= 1e-9 * max(1.0, abs(q)):
        return int(r)
    return int(math.floor(q))


def _step_targets(config: PumpConfig, wave: WaveformSpec, tick: float, n_ticks: int):
    """Absolute integer step targets at the end of each tick, plus the raw
    (unrounded) values they were quantized from."""
    t_edges = np.arange(1, n_ticks + 1, dtype=np.float64) * tick
    vols = target_volume_array(wave, t_edges)
    factor = MM3_PER_ML / config.syringe.plunger_area_mm2 * config.drive.steps_per_mm
    raw = vols * factor
    rounded = np.floor(np.abs(raw) + 0.5)
    targets = np.where(raw >= 0.0, rounded, -rounded).astype(np.int64)
    if config.drive.invert_direction:
        targets = -targets
        raw = -raw
    return raw, targets


def _render_pulses(emitted: np.ndarray, tick: float):
    """Expand per-tick step counts into evenly spaced pulses.

    Pulses inside tick k sit at k*tick + (i + 0.5) * (tick / n) so the
    instantaneous rate never spikes above the per-tick average.
    """
    nz = np.nonzero(emitted)[0]
    if len(nz) == 0:
        return np.empty(0, dtype=np.float64), np.empty(0, dtype=np.int8)
    counts = np.abs(emitted[nz])
    signs = np.sign(emitted[nz]).astype(np.int8)
    total = int(counts.sum())
    spacing = tick / counts
    starts = np.cumsum(counts) - counts
    ordinals = np.arange(total, dtype=np.float64) - np.repeat(starts, counts).astype(np.float64)
    timestamps = np.repeat(nz.astype(np.float64) * tick, counts) + (ordinals + 0.5) * np.repeat(
        spacing, counts
    )
    directions = np.repeat(signs, counts)
    return timestamps, directions


def _follow_targets(raw: np.ndarray, targets: np.ndarray, drive: DriveSpec, tick: float):
    """Scalar tracker with slew limiting; returns per-tick emissions and the
    final velocity.

    Rate and acceleration limits apply to the commanded velocity of the
    *unquantized* trajectory; the +-0.5 step quantization jitter of integer
    emission rides on top and does not count as acceleration demand.  On
    ticks where no limit binds the tracker lands exactly on the integer
    target, bit-identically to the vectorized path.
    """
    vmax = drive.max_step_rate
    a = drive.max_accel
    a_dt = a * tick
    a_b = 0.5 * a
    ab_dt = a_b * tick
    cap = int(math.floor(vmax * tick))
    n = len(targets)
    emitted = np.zeros(n, dtype=np.int64)
    targets_list = targets.tolist()
    v_track_list = (np.diff(raw, prepend=0.0) / tick).tolist()

    pos = 0
    v = 0.0
    carry = 0.0
    prev_target = 0
    for k in range(n):
        s = targets_list[k]
        v_t = v_track_list[k]
        e = s - pos
        if (
            pos == prev_target
            and -vmax <= v_t <= vmax
            and -a_dt <= v_t - v <= a_dt
            and -cap <= e <= cap
        ):
            # on track and within limits: land exactly on the integer target
            emitted[k] = e
            pos = s
            v = v_t
            carry = 0.0
            prev_target = s
            continue

        v_des = e / tick
        # catch-up speed cap: stopping-distance bound, relative to the
        # track velocity, over the integer gap to the on-track point
        # (pos == prev_target).  The -ab_dt term accounts for this tick's
        # own motion and the half-accel braking budget leaves headroom for
        # targets that decelerate while we close, so a catch-up lands on
        # the track instead of overshooting or locking in a one-tick lead.
        gap = prev_target - pos
        if gap > 0:
            cap_v = v_t + 0.5 * (-ab_dt + math.sqrt(ab_dt * ab_dt + 8.0 * a_b * gap))
            goal = v_des if v_des < cap_v else cap_v
        elif gap < 0:
            cap_v = v_t - 0.5 * (-ab_dt + math.sqrt(ab_dt * ab_dt - 8.0 * a_b * gap))
            goal = v_des if v_des > cap_v else cap_v
        else:
            goal = v_des
        # hard acceleration and rate limits on the commanded velocity
        hi = v + a_dt
        lo = v - a_dt
        if goal > hi:
            goal = hi
        elif goal < lo:
            goal = lo
        if goal > vmax:
            goal = vmax
        elif goal < -vmax:
            goal = -vmax

        carry += goal * tick
        m = round_half_away(carry)
        if m > cap:
            m = cap
        elif m < -cap:
            m = -cap
        carry -= m
        emitted[k] = m
        pos += m
        v = goal
        prev_target = s

    return emitted, v


def _unclamped_everywhere(raw: np.ndarray, targets: np.ndarray, drive: DriveSpec, tick: float) -> bool:
    """True when plain target-following never trips a limit, using the same
    float comparisons as the scalar tracker's exact branch."""
    v_track = np.diff(raw, prepend=0.0) / tick
    if np.any(v_track > drive.max_step_rate) or np.any(v_track < -drive.max_step_rate):
        return False
    dv = np.diff(v_track, prepend=0.0)
    a_dt = drive.max_accel * tick
    if np.any(dv > a_dt) or np.any(dv < -a_dt):
        return False
    deltas = np.diff(targets, prepend=np.int64(0))
    cap = int(math.floor(drive.max_step_rate * tick))
    return bool(np.all(np.abs(deltas) <= cap))


def required_step_rate(config: PumpConfig, wave: WaveformSpec) -> float | None:
    """Peak step rate (steps/s) the waveform demands; None for square waves,
    which are executed slew-limited rather than tracked."""
    if wave.shape is Shape.SQUARE:
        return None
    flow = peak_flow(wave)  # mL/s
    travel_rate = flow * MM3_PER_ML / config.syringe.plunger_area_mm2
    return travel_rate * config.drive.steps_per_mm


def check_feasible(config: PumpConfig, wave: WaveformSpec) -> None:
    required = required_step_rate(config, wave)
    if required is not None and required > config.drive.max_step_rate:
        raise Infeasible(required, config.drive.max_step_rate)


def track(config: PumpConfig, wave: WaveformSpec, tick: float, horizon: float) -> StepTimeline:
    """Plan pulses that follow the waveform from t=0 to the horizon.

    Raises Infeasible when a sine or trapezoid demands more than
    ``max_step_rate``; square setpoints are always accepted and chased at the
    drive's limits.  With no limit ever binding, the commanded position at
    integer cycle boundaries repeats exactly.
    """
    if not tick > 0:
        raise ValueError("tick must be > 0, got %r" % (tick,))
    if horizon < 0:
        raise ValueError("horizon must be >= 0, got %r" % (horizon,))
    check_feasible(config, wave)

    n = _tick_count(horizon, tick)
    duration = n * tick
    if n == 0:
        return _empty_timeline(tick, duration)

    raw, targets = _step_targets(config, wave, tick, n)
    if _unclamped_everywhere(raw, targets, config.drive, tick):
        emitted = np.diff(targets, prepend=np.int64(0))
    else:
        emitted, _ = _follow_targets(raw, targets, config.drive, tick)

    timestamps, directions = _render_pulses(emitted, tick)
    return StepTimeline(
        timestamps=timestamps,
        directions=directions,
        tick=tick,
        duration=duration,
        final_position=int(emitted.sum()),
    )


def planner_state(config: PumpConfig, wave: WaveformSpec, tick: float, horizon: float) -> PlannerState:
    """Final tracker state for a planning run (position, quantization
    residual, velocity).  Mostly useful for diagnostics and invariant checks."""
    if not tick > 0:
        raise ValueError("tick must be > 0, got %r" % (tick,))
    n = _tick_count(horizon, tick)
    if n == 0:
        return PlannerState(position=0, residual=0.0, velocity=0.0)
    raw, targets = _step_targets(config, wave, tick, n)
    if _unclamped_everywhere(raw, targets, config.drive, tick):
        emitted = np.diff(targets, prepend=np.int64(0))
        velocity = float(raw[-1] - (raw[-2] if n > 1 else 0.0)) / tick
    else:
        emitted, velocity = _follow_targets(raw, targets, config.drive, tick)
    position = int(emitted.sum())
    residual = float(raw[-1] - targets[-1])
    return PlannerState(position=position, residual=residual, velocity=velocity)


def plan_move(drive: DriveSpec, start: int, end: int) -> StepTimeline:
    """Point-to-point move with a trapezoidal velocity profile.

    Accelerates at max_accel toward max_step_rate, cruises, decelerates;
    degenerates to a triangular profile when the distance is short.  Pulse i
    is stamped when the continuous profile completes step i, so the last
    pulse lands exactly at the closed-form total duration and the emitted
    distance is exact for every input.
    """
    dist = end - start
    if dist == 0:
        return _empty_timeline(1.0 / drive.max_step_rate, 0.0)

    d = abs(dist)
    vmax = drive.max_step_rate
    a = drive.max_accel
    v_peak = min(vmax, math.sqrt(d * a))
    t_acc = v_peak / a
    d_acc = v_peak * v_peak / (2.0 * a)
    d_cruise = d - 2.0 * d_acc
    t_total = 2.0 * t_acc + (d_cruise / v_peak if d_cruise > 0 else 0.0)

    i = np.arange(1, d + 1, dtype=np.float64)
    accel_t = np.sqrt(2.0 * i / a)
    cruise_t = t_acc + (i - d_acc) / v_peak
    decel_t = t_total - np.sqrt(2.0 * np.maximum(d - i, 0.0) / a)
    timestamps = np.where(
        i <= d_acc, accel_t, np.where(i <= d_acc + d_cruise, cruise_t, decel_t)
    )
    sign = 1 if dist > 0 else -1
    directions = np.full(d, sign, dtype=np.int8)
    return StepTimeline(
        timestamps=timestamps,
        directions=directions,
        tick=1.0 / vmax,
        duration=t_total,
        final_position=dist,
    )


def slew_limited_flow(config: PumpConfig) -> float:
    """Best sustainable |dV/dt| (mL/s) the drive can deliver at max step rate."""
    travel_rate = config.drive.max_step_rate / config.drive.steps_per_mm
    return travel_rate * config.syringe.plunger_area_mm2 / MM3_PER_ML
