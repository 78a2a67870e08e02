import math
import random

import numpy as np
import pytest

from conftest import make_pump
from oracles import bisect_pressure, boyle_pressure
from voxelpump.errors import NonPhysical, PlungerLimit
from voxelpump.kinematics import volume_to_travel
from voxelpump.motion import plan_move, track
from voxelpump.plant import (
    PlantConfig,
    Trajectory,
    _voxel_pressure,
    init_plant,
    simulate,
    step_plant,
)
from voxelpump.waveform import Shape, WaveformSpec

AMBIENT = 101325.0


def rigid_60ml():
    # 40 mL syringe gas + 19 mL voxel + 1 mL tube = 60 mL closed rigid circuit
    return PlantConfig(
        ambient_pa=AMBIENT, syringe_gas_ml=40.0, voxel_rest_ml=19.0, tube_ml=1.0
    )


def steps_for_volume(pump, volume_ml):
    travel = volume_to_travel(pump.syringe, volume_ml)
    return round(travel * pump.drive.steps_per_mm)


class TestInit:
    def test_gas_products(self):
        st = init_plant(rigid_60ml())
        assert st.syringe_gas == pytest.approx(AMBIENT * 40.0, rel=1e-12)
        assert st.voxel_gas == pytest.approx(AMBIENT * 20.0, rel=1e-12)

    def test_rigid_voxel_volume(self):
        st = init_plant(rigid_60ml())
        assert st.voxel_volume_ml == 20.0

    def test_equilibrium_start(self):
        st = init_plant(PlantConfig(compliance_ml_per_pa=0.002))
        assert st.voxel_pressure_pa - AMBIENT == 0.0
        assert st.syringe_pressure_pa == AMBIENT


class TestStepPlantBoyle:
    def test_push_10ml(self, pump):
        cfg = rigid_60ml()
        st = step_plant(init_plant(cfg), cfg, pump, steps_for_volume(pump, 10.0), 0.01)
        expected = boyle_pressure(AMBIENT, 60.0, 50.0)
        assert expected == pytest.approx(121590.0, abs=1.0)
        assert st.syringe_pressure_pa == pytest.approx(expected, rel=1e-3)
        assert st.voxel_pressure_pa == pytest.approx(expected, rel=1e-3)

    def test_withdraw_10ml_sub_ambient(self, pump):
        cfg = rigid_60ml()
        st = step_plant(init_plant(cfg), cfg, pump, -steps_for_volume(pump, 10.0), 0.01)
        expected = boyle_pressure(AMBIENT, 60.0, 70.0)
        assert expected == pytest.approx(86850.0, abs=1.0)
        assert st.syringe_pressure_pa == pytest.approx(expected, rel=1e-3)
        assert st.syringe_pressure_pa < AMBIENT  # vacuum pull

    def test_push_then_withdraw_returns(self, pump):
        cfg = rigid_60ml()
        n = steps_for_volume(pump, 10.0)
        st = step_plant(init_plant(cfg), cfg, pump, n, 0.01)
        st = step_plant(st, cfg, pump, -n, 0.01)
        assert st.syringe_pressure_pa == pytest.approx(AMBIENT, rel=1e-6)

    def test_conservation_exact(self, pump):
        cfg = rigid_60ml()
        st0 = init_plant(cfg)
        st = step_plant(st0, cfg, pump, steps_for_volume(pump, 8.0), 0.01)
        total0 = st0.syringe_gas + st0.voxel_gas
        assert abs((st.syringe_gas + st.voxel_gas) - total0) <= 1e-9 * total0


class TestCompliantEquilibrium:
    def test_against_bisection_oracle(self, pump):
        cfg = PlantConfig(
            ambient_pa=AMBIENT,
            syringe_gas_ml=40.0,
            voxel_rest_ml=19.0,
            tube_ml=1.0,
            compliance_ml_per_pa=0.001,
        )
        st = step_plant(init_plant(cfg), cfg, pump, steps_for_volume(pump, 10.0), 0.01)
        # merged balance: P * (V_syr + base + C*(P - amb)) = total gas
        total = st.syringe_gas + st.voxel_gas
        oracle = bisect_pressure(total, st.syringe_volume_ml + 20.0, 0.001, AMBIENT)
        assert st.voxel_pressure_pa == pytest.approx(oracle, rel=1e-9)

    def test_state_self_consistency(self, pump):
        cfg = PlantConfig(compliance_ml_per_pa=0.0005, voxel_rest_ml=19.0, tube_ml=1.0)
        st = step_plant(init_plant(cfg), cfg, pump, steps_for_volume(pump, 5.0), 0.01)
        assert st.syringe_gas == pytest.approx(st.syringe_pressure_pa * st.syringe_volume_ml, rel=1e-9)
        assert st.voxel_gas == pytest.approx(st.voxel_pressure_pa * st.voxel_volume_ml, rel=1e-9)
        assert st.voxel_volume_ml == pytest.approx(
            20.0 + 0.0005 * (st.voxel_pressure_pa - AMBIENT), rel=1e-12
        )

    def test_larger_compliance_lower_overpressure(self, pump):
        pressures = []
        for comp in (0.0, 0.0005, 0.002):
            cfg = PlantConfig(compliance_ml_per_pa=comp, voxel_rest_ml=19.0, tube_ml=1.0)
            st = step_plant(init_plant(cfg), cfg, pump, steps_for_volume(pump, 10.0), 0.01)
            pressures.append(st.voxel_pressure_pa)
        assert pressures[0] > pressures[1] > pressures[2] > AMBIENT

    def test_voxel_pressure_root_randomized(self):
        rng = random.Random(5)
        for _ in range(500):
            base = rng.uniform(5.0, 100.0)
            comp = rng.uniform(0.0, 0.01)
            gas = rng.uniform(0.3, 3.0) * AMBIENT * base
            p = _voxel_pressure(gas, base, comp, AMBIENT)
            assert p > 0
            assert p * (base + comp * (p - AMBIENT)) == pytest.approx(gas, rel=1e-12)


class TestResistiveTube:
    def test_monotone_relaxation(self, pump):
        cfg = PlantConfig(
            syringe_gas_ml=40.0,
            voxel_rest_ml=19.0,
            tube_ml=1.0,
            resistance_pa_s_per_ml=5000.0,
        )
        st = step_plant(init_plant(cfg), cfg, pump, steps_for_volume(pump, 10.0), 0.001)
        voxel = [st.voxel_pressure_pa]
        gap = [st.syringe_pressure_pa - st.voxel_pressure_pa]
        for _ in range(400):
            st = step_plant(st, cfg, pump, 0, 0.01)
            voxel.append(st.voxel_pressure_pa)
            gap.append(st.syringe_pressure_pa - st.voxel_pressure_pa)
        assert all(b >= a - 1e-9 for a, b in zip(voxel, voxel[1:]))
        assert all(g >= -1e-9 for g in gap)
        assert gap[-1] < 0.05 * gap[0]

    def test_time_constant_scale(self, pump):
        # pressure gap decays roughly with tau = R / (P * (1/Vs + 1/Vv))
        res = 2000.0
        cfg = PlantConfig(
            syringe_gas_ml=40.0, voxel_rest_ml=19.0, tube_ml=1.0,
            resistance_pa_s_per_ml=res,
        )
        st = step_plant(init_plant(cfg), cfg, pump, steps_for_volume(pump, 6.0), 0.001)
        gap0 = st.syringe_pressure_pa - st.voxel_pressure_pa
        p_mid = 0.5 * (st.syringe_pressure_pa + st.voxel_pressure_pa)
        tau = res / (p_mid * (1.0 / st.syringe_volume_ml + 1.0 / st.voxel_volume_ml))
        t = 0.0
        while t < tau:
            st = step_plant(st, cfg, pump, 0, tau / 50)
            t += tau / 50
        gap = st.syringe_pressure_pa - st.voxel_pressure_pa
        assert gap / gap0 == pytest.approx(math.exp(-1.0), rel=0.15)

    def test_conservation_with_substeps(self, pump):
        cfg = PlantConfig(
            syringe_gas_ml=40.0, voxel_rest_ml=19.0, tube_ml=1.0,
            resistance_pa_s_per_ml=50.0, compliance_ml_per_pa=0.001,
        )
        st0 = init_plant(cfg)
        total0 = st0.syringe_gas + st0.voxel_gas
        st = st0
        rng = random.Random(2)
        for _ in range(200):
            st = step_plant(st, cfg, pump, rng.randint(-200, 200), 0.01)
        assert abs((st.syringe_gas + st.voxel_gas) - total0) <= 1e-9 * total0


class TestLimits:
    def test_plunger_limit_push(self, pump):
        cfg = rigid_60ml()
        st = init_plant(cfg)
        too_far = steps_for_volume(pump, 41.0)  # more gas than the chamber holds
        with pytest.raises(PlungerLimit):
            step_plant(st, cfg, pump, too_far, 0.01)

    def test_plunger_limit_withdraw(self, pump):
        cfg = rigid_60ml()
        st = init_plant(cfg)
        cap = pump.syringe.capacity_ml
        too_far = steps_for_volume(pump, -(cap - 40.0 + 1.0))
        with pytest.raises(PlungerLimit):
            step_plant(st, cfg, pump, too_far, 0.01)

    def test_bad_dt(self, pump):
        cfg = rigid_60ml()
        with pytest.raises(ValueError):
            step_plant(init_plant(cfg), cfg, pump, 0, 0.0)

    def test_init_volume_must_fit_stroke_window(self):
        small = make_pump(bore_mm=10.0, max_travel_mm=50.0)  # capacity ~3.9 mL
        cfg = rigid_60ml()
        tl = track(small, WaveformSpec(Shape.SINE, 2.0, 0.5), 0.001, 2.0)
        with pytest.raises(PlungerLimit):
            simulate(cfg, small, tl, 0.001)


class TestSimulate:
    def test_empty_timeline_stays_at_init(self, pump):
        cfg = rigid_60ml()
        tl = track(pump, WaveformSpec(Shape.SINE, 2.0, 0.0), 0.001, 0.05)
        traj = simulate(cfg, pump, tl, 0.001)
        assert len(traj) == 51
        assert np.all(traj.p_syringe == AMBIENT)
        assert np.all(traj.p_voxel == AMBIENT)

    def test_full_cycle_returns_to_ambient(self, pump):
        cfg = rigid_60ml()
        tl = track(pump, WaveformSpec(Shape.SINE, 2.0, 10.0), 0.001, 2.0)
        traj = simulate(cfg, pump, tl, 0.001)
        assert traj.p_syringe[-1] == pytest.approx(AMBIENT, rel=1e-6)
        assert traj.conservation_error() <= 1e-9

    def test_boyle_consistency_along_trajectory(self, pump):
        cfg = rigid_60ml()
        tl = track(pump, WaveformSpec(Shape.SINE, 2.0, 10.0), 0.001, 2.0)
        traj = simulate(cfg, pump, tl, 0.001)
        # closed rigid R=0 system obeys P = P0*V0/V(t) at every sample
        v_total = traj.v_syringe + traj.v_voxel
        expected = AMBIENT * 60.0 / v_total
        assert np.max(np.abs(traj.p_syringe / expected - 1.0)) <= 1e-6

    def test_relaxation_toward_syringe_monotone(self, pump):
        cfg = PlantConfig(
            syringe_gas_ml=40.0, voxel_rest_ml=19.0, tube_ml=1.0,
            resistance_pa_s_per_ml=3000.0,
        )
        move = plan_move(pump.drive, 0, steps_for_volume(pump, 8.0))
        traj = simulate(cfg, pump, move, 0.001, duration=move.duration + 3.0)
        after = traj.p_voxel[traj.t >= move.duration]
        assert np.all(np.diff(after) >= -1e-9)

    def test_error_carries_timestamp(self, pump):
        cfg = rigid_60ml()
        move = plan_move(pump.drive, 0, steps_for_volume(pump, 45.0))
        with pytest.raises(PlungerLimit) as err:
            simulate(cfg, pump, move, 0.001)
        assert "t=" in str(err.value)

    def test_csv_schema(self, pump, tmp_path):
        cfg = rigid_60ml()
        tl = track(pump, WaveformSpec(Shape.SINE, 2.0, 5.0), 0.001, 0.1)
        traj = simulate(cfg, pump, tl, 0.001)
        path = tmp_path / "traj.csv"
        traj.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t_s,travel_mm,p_syringe_pa,p_voxel_pa,v_voxel_ml"
        assert len(lines) == len(traj) + 1

    def test_invert_direction_same_physics(self):
        fwd = make_pump()
        rev = make_pump(invert_direction=True)
        cfg = rigid_60ml()
        w = WaveformSpec(Shape.SINE, 2.0, 10.0)
        t_fwd = simulate(cfg, fwd, track(fwd, w, 0.001, 2.0), 0.001)
        t_rev = simulate(cfg, rev, track(rev, w, 0.001, 2.0), 0.001)
        assert np.array_equal(t_fwd.p_syringe, t_rev.p_syringe)

    def test_positive_pressures_always(self, pump):
        cfg = rigid_60ml()
        w = WaveformSpec(Shape.SINE, 2.0, 12.0, offset_ml=0.0)
        tl = track(pump, w, 0.001, 4.0)
        traj = simulate(cfg, pump, tl, 0.001)
        assert np.all(traj.p_syringe > 0)
        assert np.all(traj.p_voxel > 0)
