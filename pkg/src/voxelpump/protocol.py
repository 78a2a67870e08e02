"""Host <-> pump wire protocol: framed, byte-stuffed, CRC-16 protected.

On-wire layout of one frame:

    0x7E  pump_id  opcode  length  payload...  crc_hi  crc_lo

Everything after the 0x7E start byte is escaped: 0x7E and 0x7D inside the
body become 0x7D followed by the byte XOR 0x20.  The CRC is CCITT-FALSE
(poly 0x1021, init 0xFFFF, no reflection, no final xor) over
pump_id | opcode | length | payload.  Multi-byte payload numbers are
big-endian; volumes ride as uL (u32), durations as ms (u32), fractions in
1/65536 units (u16).  pump_id 0xFF addresses every pump on the bus.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import (
    CrcMismatch,
    EscapeError,
    FrameError,
    LengthOverflow,
    TruncatedFrame,
    UnknownOpcode,
)

SOF = 0x7E
ESCAPE = 0x7D
ESCAPE_XOR = 0x20
MAX_PAYLOAD = 64
BROADCAST_ID = 0xFF

CRC_INIT = 0xFFFF
CRC_POLY = 0x1021


def _build_crc_table() -> tuple[int, ...]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ CRC_POLY) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
        table.append(crc)
    return tuple(table)


_CRC_TABLE = _build_crc_table()


def crc16(data: bytes, crc: int = CRC_INIT) -> int:
    """CRC-16/CCITT-FALSE over data (table-driven)."""
    for byte in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[((crc >> 8) ^ byte) & 0xFF]
    return crc


class Opcode(enum.IntEnum):
    CONFIGURE = 0x01
    SET_WAVEFORM = 0x02
    START = 0x03
    STOP = 0x04
    HOME = 0x05
    STATUS_REQ = 0x06
    ACK = 0x80
    NACK = 0x81
    TELEMETRY = 0x82


_OPCODE_VALUES = frozenset(int(op) for op in Opcode)


@dataclass(frozen=True)
class Frame:
    """One protocol message; validated at construction."""

    pump_id: int
    opcode: Opcode
    payload: bytes = b""

    def __post_init__(self):
        if not 0 <= self.pump_id <= BROADCAST_ID:
            raise ValueError("pump_id must be in 0..255, got %r" % (self.pump_id,))
        if int(self.opcode) not in _OPCODE_VALUES:
            raise ValueError("unknown opcode %r" % (self.opcode,))
        if len(self.payload) > MAX_PAYLOAD:
            raise ValueError("payload length %d exceeds %d" % (len(self.payload), MAX_PAYLOAD))
        object.__setattr__(self, "opcode", Opcode(self.opcode))
        object.__setattr__(self, "payload", bytes(self.payload))

    def body(self) -> bytes:
        return bytes((self.pump_id, int(self.opcode), len(self.payload))) + self.payload

    def crc(self) -> int:
        return crc16(self.body())


def _escape(data: bytes) -> bytes:
    out = bytearray()
    for byte in data:
        if byte == SOF or byte == ESCAPE:
            out.append(ESCAPE)
            out.append(byte ^ ESCAPE_XOR)
        else:
            out.append(byte)
    return bytes(out)


def encode_frame(frame: Frame) -> bytes:
    """Serialize to the on-wire byte sequence, start byte included."""
    body = frame.body()
    crc = crc16(body)
    return bytes((SOF,)) + _escape(body + crc.to_bytes(2, "big"))


class FrameDecoder:
    """Incremental decoder for a byte stream.

    Feed arbitrary chunks; complete frames come back in order.  Garbage
    before a start byte is discarded, bad frames are dropped and recorded on
    ``errors``, and the stream resynchronizes on the next start byte.
    """

    def __init__(self):
        self._synced = False
        self._esc = False
        self._body = bytearray()
        self.errors: list[FrameError] = []

    def feed(self, data: bytes) -> list[Frame]:
        # hot path for telemetry streams: one inlined loop, locals cached
        frames = []
        errors = self.errors
        synced = self._synced
        esc = self._esc
        body = self._body
        esc_sof = SOF ^ ESCAPE_XOR
        esc_esc = ESCAPE ^ ESCAPE_XOR
        for byte in data:
            if not synced:
                if byte == SOF:
                    synced = True
                    esc = False
                    body.clear()
                continue
            if byte == SOF:
                if esc:
                    errors.append(EscapeError("escape byte followed by a new start byte"))
                elif body:
                    errors.append(
                        TruncatedFrame(
                            "new start byte after %d body bytes of an unfinished frame"
                            % len(body)
                        )
                    )
                esc = False
                body.clear()
                continue
            if esc:
                esc = False
                if byte != esc_sof and byte != esc_esc:
                    synced = False
                    errors.append(EscapeError("invalid escape pair 0x7d 0x%02x" % byte))
                    continue
                byte ^= ESCAPE_XOR
            elif byte == ESCAPE:
                esc = True
                continue
            body.append(byte)
            n = len(body)
            if n < 3:
                continue
            length = body[2]
            if length > MAX_PAYLOAD:
                synced = False
                body.clear()
                errors.append(
                    LengthOverflow("declared payload length %d exceeds %d" % (length, MAX_PAYLOAD))
                )
                continue
            if n == 5 + length:
                frame_bytes = bytes(body)
                synced = False
                body.clear()
                received = (frame_bytes[-2] << 8) | frame_bytes[-1]
                computed = crc16(frame_bytes[:-2])
                if received != computed:
                    errors.append(
                        CrcMismatch(
                            "crc 0x%04x does not match computed 0x%04x" % (received, computed)
                        )
                    )
                    continue
                opcode = frame_bytes[1]
                if opcode not in _OPCODE_VALUES:
                    errors.append(UnknownOpcode("opcode 0x%02x is not defined" % opcode))
                    continue
                frames.append(
                    Frame(
                        pump_id=frame_bytes[0],
                        opcode=Opcode(opcode),
                        payload=frame_bytes[3:-2],
                    )
                )
        self._synced = synced
        self._esc = esc
        return frames


def decode_frame(data: bytes) -> Frame | None:
    """Decode the first complete frame from a byte buffer.

    Returns None when more bytes are needed; raises the first framing error
    encountered.  For streams, hold a FrameDecoder instead.
    """
    decoder = FrameDecoder()
    frames = decoder.feed(data)
    for event in decoder.errors:
        raise event
    if frames:
        return frames[0]
    return None


def hex_dump(frame: Frame) -> str:
    """Annotated single-frame dump: decoded fields plus on-wire hex."""
    wire = encode_frame(frame)
    hex_bytes = " ".join("%02x" % b for b in wire)
    return (
        "pump=0x%02x opcode=%s len=%d crc=0x%04x\n  wire: %s"
        % (frame.pump_id, frame.opcode.name, len(frame.payload), frame.crc(), hex_bytes)
    )
