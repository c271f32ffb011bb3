"""Edge verification server: one thread per TCP connection.

A connection is one session. The client announces the step with
SessionInit (re-sending it whenever the step changes), then uploads a
ReferenceFrame carrying the rendered virtual layer and a TargetFrame. The
server answers each pair with VerifyResult followed by StepControl, which
advances the step on a pass and repeats it on a fail.

Error handling: a bad magic number or an oversized length loses framing, so
the server replies with Error and closes. Every other problem (unknown type,
bad version, malformed payload, messages out of order, processing faults)
is answered with Error and the connection stays usable.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
from dataclasses import dataclass

from ..errors import (
    BadMagic,
    CorruptStream,
    DegenerateConfiguration,
    EmptyReferenceMask,
    ProtocolError,
    SegmenterFailure,
    SingularHomography,
    UnknownFrame,
    UnknownType,
    UnsupportedVersion,
)
from ..imaging import CodecKind, CodecSpec
from ..pipeline import server_process
from ..verification import VerificationPolicy
from .wire import (
    Error,
    ErrorCode,
    ReferenceFrame,
    SessionInit,
    StepControl,
    TargetFrame,
    VerifyResult,
    read_message,
    write_message,
)

log = logging.getLogger(__name__)

U32_MAX = 0xFFFFFFFF

_PROCESSING_ERRORS = (
    (SegmenterFailure, ErrorCode.SEGMENTER_FAILURE),
    (CorruptStream, ErrorCode.DECODE_FAILURE),
    (DegenerateConfiguration, ErrorCode.ALIGNMENT_FAILURE),
    (SingularHomography, ErrorCode.ALIGNMENT_FAILURE),
    (UnknownFrame, ErrorCode.UNKNOWN_FRAME),
    (EmptyReferenceMask, ErrorCode.EMPTY_REFERENCE),
)


def sniff_codec(payload: bytes) -> CodecKind | None:
    if payload.startswith(b"\x89PNG\r\n\x1a\n"):
        return CodecKind.LOSSLESS
    if payload.startswith(b"\xff\xd8\xff"):
        return CodecKind.LOSSY
    return None


def _error_code(exc: ProtocolError) -> ErrorCode:
    if isinstance(exc, BadMagic):
        return ErrorCode.BAD_MAGIC
    if isinstance(exc, UnsupportedVersion):
        return ErrorCode.UNSUPPORTED_VERSION
    if isinstance(exc, UnknownType):
        return ErrorCode.UNKNOWN_TYPE
    return ErrorCode.MALFORMED


def _us(seconds: float) -> int:
    return min(U32_MAX, max(0, int(round(seconds * 1e6))))


@dataclass
class Session:
    """Per-connection state, owned by the handler thread."""

    init: SessionInit | None = None
    step: int = 0
    reference: ReferenceFrame | None = None
    pairs: int = 0


class _Handler(socketserver.BaseRequestHandler):
    server: EdgeServer

    def handle(self):
        sock: socket.socket = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        session = Session()
        peer = self.client_address
        log.debug("session opened from %s", peer)
        while True:
            try:
                msg = read_message(sock)
            except EOFError:
                break
            except ProtocolError as exc:
                if not self._reply_error(sock, _error_code(exc), str(exc)) or exc.fatal:
                    break
                continue
            except OSError:
                break
            try:
                self.server.dispatch(sock, session, msg)
            except OSError:
                break
        log.debug("session from %s closed after %d pairs", peer, session.pairs)

    @staticmethod
    def _reply_error(sock, code: ErrorCode, text: str) -> bool:
        try:
            write_message(sock, Error(int(code), text[:1000]))
            return True
        except OSError:
            return False


class EdgeServer(socketserver.ThreadingTCPServer):
    """``EdgeServer(("127.0.0.1", 0), segmenter)``; port 0 picks a free port."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, endpoint, segmenter, policy: VerificationPolicy | None = None,
                 codec: CodecSpec | None = None):
        super().__init__(tuple(endpoint), _Handler)
        self.segmenter = segmenter
        self.policy = policy or VerificationPolicy()
        self.codec = codec  # when set, target frames must use this codec kind
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> tuple[str, int]:
        host, port = self.server_address[:2]
        return host, port

    def dispatch(self, sock, session: Session, msg) -> None:
        if isinstance(msg, SessionInit):
            session.init = msg
            session.step = msg.step_index
            session.reference = None
            return
        if isinstance(msg, ReferenceFrame):
            if session.init is None:
                write_message(sock, Error(ErrorCode.OUT_OF_ORDER, "ReferenceFrame before SessionInit"))
                return
            session.reference = msg
            return
        if isinstance(msg, TargetFrame):
            if session.reference is None:
                write_message(sock, Error(ErrorCode.OUT_OF_ORDER, "TargetFrame before ReferenceFrame"))
                return
            ref, session.reference = session.reference, None
            self._verify(sock, session, ref, msg)
            return
        write_message(sock, Error(ErrorCode.OUT_OF_ORDER, f"{type(msg).__name__} is a server-to-client message"))

    def _verify(self, sock, session: Session, ref: ReferenceFrame, tgt: TargetFrame) -> None:
        declared = CodecSpec.from_wire(ref.codec).kind
        if sniff_codec(tgt.payload) not in (declared, None) or \
                (self.codec is not None and declared is not self.codec.kind):
            write_message(sock, Error(ErrorCode.DECODE_FAILURE,
                                      f"target frame does not match the declared codec {declared.value}"))
            return
        try:
            out = server_process(ref.payload, tgt.payload, ref.alignment_points, tgt.alignment_points,
                                 session.init.step_class, session.step, self.segmenter, self.policy)
        except Exception as exc:
            code = next((c for t, c in _PROCESSING_ERRORS if isinstance(exc, t)), ErrorCode.INTERNAL)
            if code is ErrorCode.INTERNAL:
                log.exception("unexpected failure while verifying step %d", session.step)
            write_message(sock, Error(int(code), f"{type(exc).__name__}: {exc}"[:1000]))
            return
        d = out.decision
        session.pairs += 1
        write_message(sock, VerifyResult(d.passed, d.iou_micro, _us(out.decode_s), _us(out.postproc_s)))
        if d.passed and session.step < U32_MAX:
            session.step += 1
        write_message(sock, StepControl(session.step))

    def start(self) -> EdgeServer:
        """Serve from a background thread; returns self for chaining."""
        self._thread = threading.Thread(target=self.serve_forever, name="edge-server", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()


def serve(endpoint, segmenter, policy: VerificationPolicy | None = None, codec: CodecSpec | None = None) -> None:
    """Run the server in the foreground until interrupted."""
    with EdgeServer(endpoint, segmenter, policy, codec) as srv:
        host, port = srv.endpoint
        log.info("serving on %s:%d", host, port)
        try:
            srv.serve_forever()
        except KeyboardInterrupt:
            log.info("shutting down")


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must look like host:port, got {text!r}")
    return host or "127.0.0.1", int(port)
