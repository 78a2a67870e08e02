import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from voxelpump.kinematics import DriveSpec, PumpConfig, SyringeSpec


def make_pump(
    pump_id=0,
    bore_mm=30.0,
    max_travel_mm=100.0,
    dead_volume_ml=0.0,
    pitch_mm=8.0,
    full_steps_per_rev=200,
    microstep_factor=16,
    max_step_rate=25000.0,
    max_accel=200000.0,
    invert_direction=False,
    soft_limit_margin_mm=0.0,
):
    return PumpConfig(
        pump_id=pump_id,
        syringe=SyringeSpec(bore_mm, max_travel_mm, dead_volume_ml),
        drive=DriveSpec(
            pitch_mm,
            full_steps_per_rev,
            microstep_factor,
            max_step_rate,
            max_accel,
            invert_direction,
        ),
        soft_limit_margin_mm=soft_limit_margin_mm,
    )


@pytest.fixture
def pump():
    return make_pump()


@pytest.fixture
def pump20():
    # 20 mm bore on a 400 steps/mm drive: the grid used by worked examples
    return make_pump(bore_mm=20.0, max_travel_mm=80.0)
