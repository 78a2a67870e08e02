"""Isothermal gas simulation of a syringe -> tube -> voxel circuit.

Gas quantity is carried as the proxy G = P*V (isothermal ideal gas), so a
closed circuit conserves G_syringe + G_voxel exactly up to float rounding.
Transfers through the tube use the upstream chamber's pressure (donor-cell
rule), which keeps flow direction sign-correct, and each window is relaxed
with a closed-form decay substep that is stable for any dt.  Sub-ambient
operation falls out of the same math: withdrawing the plunger simply lowers
the chamber pressure below ambient.

The voxel is a linearly compliant chamber: V = rest + tube + C*(P - ambient).
Its pressure for a given gas content is the positive root of a quadratic,
evaluated in a cancellation-free form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonPhysical, PlungerLimit
from .kinematics import MM3_PER_ML, PumpConfig
from .motion import StepTimeline


@dataclass(frozen=True)
class PlantConfig:
    """Pneumatic circuit parameters for one pump-and-voxel channel."""

    ambient_pa: float = 101325.0
    syringe_gas_ml: float = 40.0
    voxel_rest_ml: float = 20.0
    compliance_ml_per_pa: float = 0.0
    resistance_pa_s_per_ml: float = 0.0
    tube_ml: float = 0.0

    def __post_init__(self):
        if not self.ambient_pa > 0:
            raise ValueError("ambient_pa must be > 0, got %r" % (self.ambient_pa,))
        if not self.syringe_gas_ml > 0:
            raise ValueError("syringe_gas_ml must be > 0, got %r" % (self.syringe_gas_ml,))
        if not self.voxel_rest_ml > 0:
            raise ValueError("voxel_rest_ml must be > 0, got %r" % (self.voxel_rest_ml,))
        if self.compliance_ml_per_pa < 0:
            raise ValueError("compliance must be >= 0, got %r" % (self.compliance_ml_per_pa,))
        if self.resistance_pa_s_per_ml < 0:
            raise ValueError("resistance must be >= 0, got %r" % (self.resistance_pa_s_per_ml,))
        if self.tube_ml < 0:
            raise ValueError("tube_ml must be >= 0, got %r" % (self.tube_ml,))

    @property
    def voxel_base_ml(self) -> float:
        """Voxel-side volume at ambient pressure (tube lumped in)."""
        return self.voxel_rest_ml + self.tube_ml


@dataclass(frozen=True)
class PlantState:
    t: float
    plunger_travel_mm: float
    syringe_pressure_pa: float
    syringe_volume_ml: float
    voxel_pressure_pa: float
    voxel_volume_ml: float
    syringe_gas: float  # Pa*mL
    voxel_gas: float  # Pa*mL


def init_plant(config: PlantConfig) -> PlantState:
    """Equilibrium start: both chambers at ambient, plunger at its reference."""
    amb = config.ambient_pa
    vs = config.syringe_gas_ml
    vv = config.voxel_base_ml
    return PlantState(
        t=0.0,
        plunger_travel_mm=0.0,
        syringe_pressure_pa=amb,
        syringe_volume_ml=vs,
        voxel_pressure_pa=amb,
        voxel_volume_ml=vv,
        syringe_gas=amb * vs,
        voxel_gas=amb * vv,
    )


def _voxel_pressure(gas: float, base_ml: float, comp: float, amb: float) -> float:
    """Positive root of P * (base + comp*(P - amb)) = gas."""
    if gas <= 0.0:
        raise NonPhysical("voxel gas content went non-positive")
    if comp == 0.0:
        return gas / base_ml
    b = base_ml - comp * amb
    disc = b * b + 4.0 * comp * gas
    if disc < 0.0:
        raise NonPhysical("no positive pressure satisfies the voxel compliance model")
    root = math.sqrt(disc)
    if b >= 0.0:
        return 2.0 * gas / (b + root)
    return (root - b) / (2.0 * comp)


def _merged_pressure(gas: float, fixed_ml: float, comp: float, amb: float) -> float:
    """Pressure of the merged chambers: P * (fixed + comp*(P - amb)) = gas."""
    return _voxel_pressure(gas, fixed_ml, comp, amb)


def _advance(gs, gv, vs, pv, d_travel_mm, dt, area, amb, base_v, comp, res,
             vol_lo, vol_hi):
    """Advance one window: plunger move, then tube transfer / equalization.

    Returns (gs, gv, vs, ps, pv, vv).  Raises PlungerLimit when the chamber
    volume leaves the stroke window, NonPhysical when the gas model breaks.
    """
    if d_travel_mm != 0.0:
        vs = vs - d_travel_mm * area / MM3_PER_ML
        tol = 1e-9 * vol_hi
        if vs < vol_lo - tol or vs > vol_hi + tol:
            raise PlungerLimit(
                "plunger drove the chamber to %.6g mL, outside [%.6g, %.6g] mL"
                % (vs, vol_lo, vol_hi)
            )
        if vs <= 0.0:
            raise NonPhysical("syringe chamber volume went non-positive")

    ps = gs / vs

    if res > 0.0:
        remaining = dt
        while remaining > 0.0:
            vv = base_v + comp * (pv - amb)
            cap_v = vv + comp * pv  # dG/dP of the compliant chamber
            donor = ps if ps >= pv else pv
            lam = donor / res * (1.0 / vs + 1.0 / cap_v)
            if lam <= 0.0:
                break
            h = remaining if remaining <= 0.5 / lam else 0.5 / lam
            # closed-form decay of the pressure difference over h
            dg = (ps - pv) * (1.0 - math.exp(-lam * h)) / (1.0 / vs + 1.0 / cap_v)
            gs -= dg
            gv += dg
            if gs <= 0.0 or gv <= 0.0:
                raise NonPhysical("gas transfer emptied a chamber")
            ps = gs / vs
            pv = _voxel_pressure(gv, base_v, comp, amb)
            remaining -= h
    else:
        total = gs + gv
        p = _merged_pressure(total, vs + base_v, comp, amb)
        ps = pv = p
        gs = p * vs
        gv = total - gs

    vv = base_v + comp * (pv - amb)
    return gs, gv, vs, ps, pv, vv


def step_plant(
    state: PlantState,
    config: PlantConfig,
    pump_cfg: PumpConfig,
    steps: int,
    dt: float,
) -> PlantState:
    """Apply a net signed step count over dt and return the new state."""
    if not dt > 0:
        raise ValueError("dt must be > 0, got %r" % (dt,))
    drive = pump_cfg.drive
    sign = -1.0 if drive.invert_direction else 1.0
    d_travel = sign * steps / drive.steps_per_mm
    syringe = pump_cfg.syringe
    gs, gv, vs, ps, pv, vv = _advance(
        state.syringe_gas,
        state.voxel_gas,
        state.syringe_volume_ml,
        state.voxel_pressure_pa,
        d_travel,
        dt,
        syringe.plunger_area_mm2,
        config.ambient_pa,
        config.voxel_base_ml,
        config.compliance_ml_per_pa,
        config.resistance_pa_s_per_ml,
        syringe.dead_volume_ml,
        syringe.dead_volume_ml + syringe.capacity_ml,
    )
    return PlantState(
        t=state.t + dt,
        plunger_travel_mm=state.plunger_travel_mm + d_travel,
        syringe_pressure_pa=ps,
        syringe_volume_ml=vs,
        voxel_pressure_pa=pv,
        voxel_volume_ml=vv,
        syringe_gas=gs,
        voxel_gas=gv,
    )


class Trajectory:
    """Column-oriented sequence of plant states, one per simulation window."""

    def __init__(self, t, travel_mm, p_syringe, v_syringe, p_voxel, v_voxel,
                 g_syringe, g_voxel):
        self.t = t
        self.travel_mm = travel_mm
        self.p_syringe = p_syringe
        self.v_syringe = v_syringe
        self.p_voxel = p_voxel
        self.v_voxel = v_voxel
        self.g_syringe = g_syringe
        self.g_voxel = g_voxel

    def __len__(self) -> int:
        return len(self.t)

    def state(self, i: int) -> PlantState:
        return PlantState(
            t=float(self.t[i]),
            plunger_travel_mm=float(self.travel_mm[i]),
            syringe_pressure_pa=float(self.p_syringe[i]),
            syringe_volume_ml=float(self.v_syringe[i]),
            voxel_pressure_pa=float(self.p_voxel[i]),
            voxel_volume_ml=float(self.v_voxel[i]),
            syringe_gas=float(self.g_syringe[i]),
            voxel_gas=float(self.g_voxel[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self.state(i)

    @property
    def total_gas(self) -> np.ndarray:
        return self.g_syringe + self.g_voxel

    def conservation_error(self) -> float:
        """Largest relative drift of the total gas proxy from its start value."""
        total = self.total_gas
        return float(np.max(np.abs(total - total[0])) / total[0])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("t_s,travel_mm,p_syringe_pa,p_voxel_pa,v_voxel_ml\n")
            for i in range(len(self)):
                fh.write(
                    "%r,%r,%r,%r,%r\n"
                    % (
                        float(self.t[i]),
                        float(self.travel_mm[i]),
                        float(self.p_syringe[i]),
                        float(self.p_voxel[i]),
                        float(self.v_voxel[i]),
                    )
                )


def _window_count(duration: float, dt: float) -> int:
    q = duration / dt
    r = round(q)
    if abs(q - r) <= 1e-9 * max(1.0, abs(q)):
        return int(r)
    return int(math.ceil(q))


def simulate(
    config: PlantConfig,
    pump_cfg: PumpConfig,
    timeline: StepTimeline,
    dt: float,
    duration: float | None = None,
) -> Trajectory:
    """Run the plant under a step timeline, emitting one state per dt.

    The total gas proxy stays constant to 1e-9 relative (checked at runtime);
    plunger-limit and gas-model errors carry the offending timestamp.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0, got %r" % (dt,))
    if duration is None:
        duration = timeline.duration
    n = _window_count(duration, dt)

    syringe = pump_cfg.syringe
    drive = pump_cfg.drive
    area = syringe.plunger_area_mm2
    amb = config.ambient_pa
    base_v = config.voxel_base_ml
    comp = config.compliance_ml_per_pa
    res = config.resistance_pa_s_per_ml
    vol_lo = syringe.dead_volume_ml
    vol_hi = syringe.dead_volume_ml + syringe.capacity_ml
    spm = drive.steps_per_mm
    sign = -1.0 if drive.invert_direction else 1.0

    start = init_plant(config)
    if not vol_lo <= start.syringe_volume_ml <= vol_hi:
        raise PlungerLimit(
            "initial syringe gas volume %.6g mL is outside the stroke window [%.6g, %.6g] mL"
            % (start.syringe_volume_ml, vol_lo, vol_hi)
        )

    if n > 0 and len(timeline):
        idx = np.clip((timeline.timestamps / dt).astype(np.int64), 0, n - 1)
        net = np.bincount(idx, weights=timeline.directions, minlength=n).astype(np.int64)
        net_list = net.tolist()
    else:
        net_list = [0] * n

    cols = [np.empty(n + 1, dtype=np.float64) for _ in range(8)]
    t_col, travel_col, ps_col, vs_col, pv_col, vv_col, gs_col, gv_col = cols

    gs = start.syringe_gas
    gv = start.voxel_gas
    vs = start.syringe_volume_ml
    ps = start.syringe_pressure_pa
    pv = start.voxel_pressure_pa
    vv = start.voxel_volume_ml
    travel = 0.0
    total0 = gs + gv

    t_col[0] = 0.0
    travel_col[0] = travel
    ps_col[0] = ps
    vs_col[0] = vs
    pv_col[0] = pv
    vv_col[0] = vv
    gs_col[0] = gs
    gv_col[0] = gv

    for k in range(n):
        d_travel = sign * net_list[k] / spm
        try:
            gs, gv, vs, ps, pv, vv = _advance(
                gs, gv, vs, pv, d_travel, dt, area, amb, base_v, comp, res,
                vol_lo, vol_hi,
            )
        except (PlungerLimit, NonPhysical) as exc:
            raise type(exc)("t=%.9g s: %s" % ((k + 1) * dt, exc)) from exc
        if abs((gs + gv) - total0) > 1e-9 * total0:
            raise NonPhysical(
                "t=%.9g s: gas conservation drifted beyond 1e-9 relative" % ((k + 1) * dt,)
            )
        travel += d_travel
        i = k + 1
        t_col[i] = i * dt
        travel_col[i] = travel
        ps_col[i] = ps
        vs_col[i] = vs
        pv_col[i] = pv
        vv_col[i] = vv
        gs_col[i] = gs
        gv_col[i] = gv

    return Trajectory(t_col, travel_col, ps_col, vs_col, pv_col, vv_col, gs_col, gv_col)
