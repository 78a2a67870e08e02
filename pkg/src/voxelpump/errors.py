"""Exception hierarchy shared across the package.

``DomainError`` covers everything a well-formed invocation can still get
wrong (bad geometry, infeasible motion, protocol violations).  Transport
and file problems stay on ``OSError``/``TransportError`` so the CLI can
keep its exit-code split: 1 for domain errors, 2 for I/O and usage.
"""


class DomainError(Exception):
    """A request that is syntactically fine but physically or logically invalid."""


class StrokeExceeded(DomainError):
    """Requested displaced volume does not fit inside the syringe."""


class UnboundedSlew(DomainError):
    """The waveform has no finite nominal flow rate (square edges)."""


class Infeasible(DomainError):
    """The drive cannot reach the step rate a waveform demands."""

    def __init__(self, required_rate: float, available_rate: float):
        self.required_rate = required_rate
        self.available_rate = available_rate
        super().__init__(
            "waveform needs %.1f steps/s but the drive allows %.1f steps/s"
            % (required_rate, available_rate)
        )


class PlungerLimit(DomainError):
    """A step timeline drives the plunger outside its stroke window."""


class NonPhysical(DomainError):
    """The gas model has no positive-pressure solution for the requested state."""


class ProtocolError(DomainError):
    """Base for wire-protocol failures."""


class FrameError(ProtocolError):
    """A byte stream could not be decoded into a frame."""


class CrcMismatch(FrameError):
    pass


class LengthOverflow(FrameError):
    pass


class UnknownOpcode(FrameError):
    pass


class EscapeError(FrameError):
    pass


class TruncatedFrame(FrameError):
    """A new start-of-frame byte arrived before the current frame completed."""


class QuantizationOverflow(ProtocolError):
    """A value does not fit its fixed-point wire field."""

    def __init__(self, field: str, value: float, limit: int):
        self.field = field
        self.value = value
        self.limit = limit
        super().__init__(
            "%s=%r does not fit the wire field (max %d units)" % (field, value, limit)
        )


class NackReceived(DomainError):
    """A pump refused a command."""

    def __init__(self, pump_id: int, opcode: int, code: int):
        self.pump_id = pump_id
        self.opcode = opcode
        self.code = code
        super().__init__(
            "pump %d rejected opcode 0x%02x (nack code %d)" % (pump_id, opcode, code)
        )


class AckTimeout(DomainError):
    """A pump did not acknowledge a command within the retry budget."""

    def __init__(self, pump_id: int, opcode: int, attempts: int):
        self.pump_id = pump_id
        self.opcode = opcode
        self.attempts = attempts
        super().__init__(
            "pump %d did not ack opcode 0x%02x after %d attempts"
            % (pump_id, opcode, attempts)
        )


class TransportError(Exception):
    """Serial port could not be opened, written, or read (wraps the OS error)."""

    def __init__(self, message: str, os_error: OSError | None = None):
        self.os_error = os_error
        if os_error is not None:
            message = "%s: %s" % (message, os_error)
        super().__init__(message)
