"""Host-side control stack for syringe pumps driving pneumatic soft-robot voxels.

The pipeline: a gait program assigns each pump a periodic displaced-volume
waveform; the motion planner turns waveforms into drift-free step-pulse
timelines through lead-screw kinematics; timelines either feed an isothermal
gas simulation of the syringe-tube-voxel circuit or get lowered to a framed
serial protocol for real hardware.
"""

from .errors import (
    AckTimeout,
    CrcMismatch,
    DomainError,
    EscapeError,
    FrameError,
    Infeasible,
    LengthOverflow,
    NackReceived,
    NonPhysical,
    PlungerLimit,
    ProtocolError,
    QuantizationOverflow,
    StrokeExceeded,
    TransportError,
    TruncatedFrame,
    UnboundedSlew,
    UnknownOpcode,
)
from .kinematics import (
    DriveSpec,
    PumpConfig,
    StrokeReport,
    StrokeViolation,
    SyringeSpec,
    plunger_area,
    steps_to_volume,
    travel_to_steps,
    validate_stroke,
    volume_to_travel,
)
from .waveform import Shape, WaveformSpec, peak_flow, sample, target_volume
from .motion import (
    PlannerState,
    StepTimeline,
    plan_move,
    planner_state,
    required_step_rate,
    slew_limited_flow,
    track,
)
from .plant import PlantConfig, PlantState, Trajectory, init_plant, simulate, step_plant
from .protocol import (
    BROADCAST_ID,
    Frame,
    FrameDecoder,
    Opcode,
    crc16,
    decode_frame,
    encode_frame,
)
from .gait import (
    Diagnostic,
    GaitError,
    GaitProgram,
    compile_gait,
    parse_gait,
    parse_plants,
)
from .orchestrator import (
    RunReport,
    SerialBackend,
    SimBackend,
    SimRunError,
    TelemetryRecord,
    run,
    stop_all,
    write_telemetry_csv,
)

__version__ = "0.1.0"
