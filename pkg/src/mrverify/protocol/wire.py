"""Binary framing for the client/edge protocol.

Every message is a 10-byte header followed by its payload::

    magic   4 bytes   "EVER" (45 56 45 52)
    version u8        1
    type    u8        see MsgType
    length  u32       payload byte count

All integers are big-endian. Payload layouts:

    SessionInit     model_id u32, step_index u32, step_class u32
    ReferenceFrame  alpha_milli u16, codec u8, n u16, n x (x f32, y f32),
                    image_len u32, image bytes
    TargetFrame     n u16, n x (x f32, y f32), image_len u32, image bytes
    VerifyResult    passed u8, iou_micro u32, decode_us u32, postproc_us u32
    StepControl     next_step u32
    Error           code u16, text_len u16, UTF-8 text

``codec`` is 0 for lossless, otherwise the lossy quality 1..100.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from typing import Iterator, Union

from ..errors import BadMagic, MalformedPayload, TruncatedPayload, UnknownType, UnsupportedVersion

MAGIC = b"EVER"
VERSION = 1
HEADER = struct.Struct(">4sBBI")
HEADER_SIZE = HEADER.size
MAX_PAYLOAD = 64 << 20
U16_MAX = 0xFFFF
U32_MAX = 0xFFFFFFFF
IOU_MICRO_MAX = 1_000_000


class MsgType(enum.IntEnum):
    SESSION_INIT = 1
    REFERENCE_FRAME = 2
    TARGET_FRAME = 3
    VERIFY_RESULT = 4
    STEP_CONTROL = 5
    ERROR = 6


class ErrorCode(enum.IntEnum):
    BAD_MAGIC = 1
    UNSUPPORTED_VERSION = 2
    UNKNOWN_TYPE = 3
    MALFORMED = 4
    OUT_OF_ORDER = 5
    SEGMENTER_FAILURE = 6
    DECODE_FAILURE = 7
    ALIGNMENT_FAILURE = 8
    UNKNOWN_FRAME = 9
    INTERNAL = 10
    EMPTY_REFERENCE = 11


def _u(value, bits: int, name: str) -> int:
    if isinstance(value, bool) or int(value) != value or not 0 <= value < (1 << bits):
        raise ValueError(f"{name}={value!r} does not fit in u{bits}")
    return int(value)


def _f32(x: float) -> float:
    v = struct.unpack(">f", struct.pack(">f", float(x)))[0]
    if not math.isfinite(v):
        raise ValueError(f"point coordinate {x!r} is not a finite f32")
    return v


def _points(pts) -> tuple[tuple[float, float], ...]:
    out = tuple((_f32(p[0]), _f32(p[1])) for p in pts)
    if len(out) > U16_MAX:
        raise ValueError("too many alignment points")
    return out


@dataclass(frozen=True)
class SessionInit:
    model_id: int
    step_index: int
    step_class: int

    def __post_init__(self):
        for name in ("model_id", "step_index", "step_class"):
            _u(getattr(self, name), 32, name)


@dataclass(frozen=True)
class ReferenceFrame:
    alpha_milli: int
    codec: int
    alignment_points: tuple = ()
    payload: bytes = b""

    def __post_init__(self):
        _u(self.alpha_milli, 16, "alpha_milli")
        _u(self.codec, 8, "codec")
        if self.codec > 100:
            raise ValueError(f"codec {self.codec} is neither 0 (lossless) nor a quality 1..100")
        object.__setattr__(self, "alignment_points", _points(self.alignment_points))
        object.__setattr__(self, "payload", bytes(self.payload))


@dataclass(frozen=True)
class TargetFrame:
    alignment_points: tuple = ()
    payload: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "alignment_points", _points(self.alignment_points))
        object.__setattr__(self, "payload", bytes(self.payload))


@dataclass(frozen=True)
class VerifyResult:
    passed: bool
    iou_micro: int
    server_decode_us: int = 0
    server_postproc_us: int = 0

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))
        if _u(self.iou_micro, 32, "iou_micro") > IOU_MICRO_MAX:
            raise ValueError(f"iou_micro {self.iou_micro} exceeds {IOU_MICRO_MAX}")
        _u(self.server_decode_us, 32, "server_decode_us")
        _u(self.server_postproc_us, 32, "server_postproc_us")


@dataclass(frozen=True)
class StepControl:
    next_step: int

    def __post_init__(self):
        _u(self.next_step, 32, "next_step")


@dataclass(frozen=True)
class Error:
    code: int
    message: str = field(default="")

    def __post_init__(self):
        _u(self.code, 16, "code")
        if len(self.message.encode("utf-8")) > U16_MAX:
            raise ValueError("error text too long")


WireMessage = Union[SessionInit, ReferenceFrame, TargetFrame, VerifyResult, StepControl, Error]

_TYPE_OF = {
    SessionInit: MsgType.SESSION_INIT,
    ReferenceFrame: MsgType.REFERENCE_FRAME,
    TargetFrame: MsgType.TARGET_FRAME,
    VerifyResult: MsgType.VERIFY_RESULT,
    StepControl: MsgType.STEP_CONTROL,
    Error: MsgType.ERROR,
}


def _pack_points(pts) -> bytes:
    return struct.pack(f">H{2 * len(pts)}f", len(pts), *(c for p in pts for c in p))


def _payload(m: WireMessage) -> bytes:
    if isinstance(m, SessionInit):
        return struct.pack(">III", m.model_id, m.step_index, m.step_class)
    if isinstance(m, ReferenceFrame):
        return (struct.pack(">HB", m.alpha_milli, m.codec) + _pack_points(m.alignment_points)
                + struct.pack(">I", len(m.payload)) + m.payload)
    if isinstance(m, TargetFrame):
        return _pack_points(m.alignment_points) + struct.pack(">I", len(m.payload)) + m.payload
    if isinstance(m, VerifyResult):
        return struct.pack(">BIII", int(m.passed), m.iou_micro, m.server_decode_us, m.server_postproc_us)
    if isinstance(m, StepControl):
        return struct.pack(">I", m.next_step)
    if isinstance(m, Error):
        text = m.message.encode("utf-8")
        return struct.pack(">HH", m.code, len(text)) + text
    raise TypeError(f"not a wire message: {type(m).__name__}")


def encode_message(m: WireMessage) -> bytes:
    body = _payload(m)
    if len(body) > U32_MAX:
        raise ValueError("payload too large")
    return HEADER.pack(MAGIC, VERSION, _TYPE_OF[type(m)], len(body)) + body


def parse_header(header: bytes) -> tuple[MsgType, int]:
    """Validate a 10-byte header; returns (type, payload length)."""
    if len(header) < HEADER_SIZE:
        raise TruncatedPayload(f"header needs {HEADER_SIZE} bytes, got {len(header)}")
    magic, version, mtype, length = HEADER.unpack(header[:HEADER_SIZE])
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"protocol version {version} (expected {VERSION})", length=length)
    try:
        kind = MsgType(mtype)
    except ValueError:
        raise UnknownType(f"unknown message type {mtype}", length=length) from None
    return kind, length


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedPayload(f"payload ends at {len(self.data)} bytes, needed {self.pos + n}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(">" + fmt)
        return s.unpack(self.take(s.size))

    def points(self):
        (n,) = self.unpack("H")
        flat = self.unpack(f"{2 * n}f") if n else ()
        return tuple((flat[2 * k], flat[2 * k + 1]) for k in range(n))

    def done(self):
        if self.pos != len(self.data):
            raise MalformedPayload(f"{len(self.data) - self.pos} trailing bytes in payload")


def decode_payload(kind: MsgType, body: bytes) -> WireMessage:
    r = _Reader(body)
    try:
        if kind is MsgType.SESSION_INIT:
            m = SessionInit(*r.unpack("III"))
        elif kind is MsgType.REFERENCE_FRAME:
            alpha_milli, codec = r.unpack("HB")
            pts = r.points()
            (n,) = r.unpack("I")
            m = ReferenceFrame(alpha_milli, codec, pts, r.take(n))
        elif kind is MsgType.TARGET_FRAME:
            pts = r.points()
            (n,) = r.unpack("I")
            m = TargetFrame(pts, r.take(n))
        elif kind is MsgType.VERIFY_RESULT:
            passed, iou_micro, dec, post = r.unpack("BIII")
            if passed > 1:
                raise MalformedPayload(f"pass flag must be 0 or 1, got {passed}")
            m = VerifyResult(bool(passed), iou_micro, dec, post)
        elif kind is MsgType.STEP_CONTROL:
            m = StepControl(*r.unpack("I"))
        else:
            code, n = r.unpack("HH")
            m = Error(code, r.take(n).decode("utf-8"))
    except ValueError as exc:  # field validation, including bad UTF-8
        raise MalformedPayload(str(exc)) from exc
    r.done()
    return m


def decode_message(data: bytes) -> WireMessage:
    """Decode exactly one framed message."""
    kind, length = parse_header(data)
    body = data[HEADER_SIZE:]
    if len(body) < length:
        raise TruncatedPayload(f"header declares {length} payload bytes, {len(body)} present")
    if len(body) > length:
        raise MalformedPayload(f"{len(body) - length} bytes after the declared payload")
    return decode_payload(kind, body)


def _read_exact(sock, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            raise EOFError("connection closed")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_message(sock) -> WireMessage:
    """Read one message from a socket.

    Raises EOFError when the peer closes. After a ProtocolError whose
    ``fatal`` flag is clear, the offending payload has been consumed and the
    stream is aligned on the next message.
    """
    first = sock.recv(HEADER_SIZE)
    if not first:
        raise EOFError("connection closed")
    header = first if len(first) == HEADER_SIZE else first + _read_exact(sock, HEADER_SIZE - len(first))
    try:
        kind, length = parse_header(header)
    except (UnsupportedVersion, UnknownType) as exc:
        if exc.length > MAX_PAYLOAD:
            exc.fatal = True
        else:
            _read_exact(sock, exc.length)
        raise
    if length > MAX_PAYLOAD:
        raise MalformedPayload(f"payload of {length} bytes exceeds the {MAX_PAYLOAD}-byte limit",
                               length=length, fatal=True)
    return decode_payload(kind, _read_exact(sock, length))


def write_message(sock, m: WireMessage) -> int:
    data = encode_message(m)
    sock.sendall(data)
    return len(data)


def iter_messages(data: bytes) -> Iterator[WireMessage]:
    """Decode a concatenation of framed messages."""
    pos = 0
    while pos < len(data):
        kind, length = parse_header(data[pos:pos + HEADER_SIZE])
        end = pos + HEADER_SIZE + length
        if end > len(data):
            raise TruncatedPayload(f"message at offset {pos} runs past the end of the buffer")
        yield decode_payload(kind, data[pos + HEADER_SIZE:end])
        pos = end
